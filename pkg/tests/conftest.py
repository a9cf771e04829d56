from __future__ import annotations

import pytest

from stvmsim.attacks import experiment_election
from stvmsim.ballot import Candidate, Contest, ElectionDefinition
from stvmsim.machine import Machine, build_base_image, make_machine_state, stvm_config


@pytest.fixture
def election():
    return experiment_election()


@pytest.fixture
def multi_seat_election():
    """Three-candidate, pick-two contest plus a single-seat contest, for
    exercising the vote_for bound somewhere it can actually move."""
    return ElectionDefinition(
        election_id="local-2024",
        title="Local Election",
        contests=(
            Contest(
                contest_id="school-board",
                title="School Board",
                vote_for=2,
                candidates=(
                    Candidate("kim", "Kim Ash"),
                    Candidate("lee", "Lee Park"),
                    Candidate("ana", "Ana Cruz"),
                ),
            ),
            Contest(
                contest_id="measure-a",
                title="Measure A",
                vote_for=1,
                candidates=(
                    Candidate("yes", "Yes"),
                    Candidate("no", "No"),
                ),
            ),
        ),
    )


@pytest.fixture
def stvm(election):
    machine = Machine(make_machine_state(stvm_config(), build_base_image("test-disc")))
    machine.boot()
    return machine
