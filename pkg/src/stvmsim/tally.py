"""Counting the paper, detection arithmetic, and the ballot-polling audit.

Tabulation reads the paper record only, because the paper is what voters
verified. The audit is a sequential ballot-polling test: sample ballots
uniformly with replacement, multiply a test statistic per pair of
(reported winner, reported loser), and stop when every pair's statistic
clears 1/risk_limit or the sample budget runs out.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .ballot import (
    NO_SELECTION_TEXT,
    ElectionDefinition,
    parse_selection_text,
)
from .printer import Disposition, PaperBallot
from .seeds import derive_seed


class TabulationError(ValueError):
    pass


@dataclass(frozen=True)
class ContestTally:
    contest_id: str
    counts: tuple[tuple[str, int], ...]  # candidate_id -> count, ballot order
    undervotes: int
    overvotes: int

    def count_for(self, candidate_id: str) -> int:
        return dict(self.counts)[candidate_id]

    def total_votes(self) -> int:
        return sum(n for _, n in self.counts)


@dataclass(frozen=True)
class TabulationResult:
    election_id: str
    total_ballots: int
    spoiled_skipped: int
    contests: tuple[ContestTally, ...]

    def contest(self, contest_id: str) -> ContestTally:
        for tally in self.contests:
            if tally.contest_id == contest_id:
                return tally
        raise KeyError(contest_id)

    def to_json_dict(self, election: ElectionDefinition | None = None) -> dict:
        contests = []
        for tally in self.contests:
            entry: dict = {
                "contest_id": tally.contest_id,
                "counts": {cid: n for cid, n in tally.counts},
                "undervotes": tally.undervotes,
                "overvotes": tally.overvotes,
            }
            if election is not None:
                contest = election.contest(tally.contest_id)
                entry["counts_by_name"] = {
                    contest.candidate(cid).name: n for cid, n in tally.counts
                }
            contests.append(entry)
        return {
            "election_id": self.election_id,
            "total_ballots": self.total_ballots,
            "spoiled_skipped": self.spoiled_skipped,
            "contests": contests,
        }


def tabulate_marks(
    mark_sets: Iterable[Mapping[str, frozenset[str]]],
    election: ElectionDefinition,
) -> TabulationResult:
    """Count per-ballot mark maps (contest_id -> chosen candidate ids).

    Shared core for machine ballots and hand-marked sheets. A contest absent
    from a ballot's map is an undervote; more marks than vote_for allows is
    an overvote and none of its marks count.
    """
    counts = {
        c.contest_id: {cand.candidate_id: 0 for cand in c.candidates}
        for c in election.contests
    }
    undervotes = {c.contest_id: 0 for c in election.contests}
    overvotes = {c.contest_id: 0 for c in election.contests}
    total = 0
    for marks in mark_sets:
        total += 1
        for contest_id in marks:
            if contest_id not in counts:
                raise TabulationError(f"ballot references unknown contest '{contest_id}'")
        for contest in election.contests:
            chosen = marks.get(contest.contest_id, frozenset())
            for candidate_id in chosen:
                if candidate_id not in counts[contest.contest_id]:
                    raise TabulationError(
                        f"ballot references unknown candidate '{candidate_id}' "
                        f"in contest '{contest.contest_id}'"
                    )
            if not chosen:
                undervotes[contest.contest_id] += 1
            elif len(chosen) > contest.vote_for:
                overvotes[contest.contest_id] += 1
            else:
                for candidate_id in chosen:
                    counts[contest.contest_id][candidate_id] += 1
    contests = tuple(
        ContestTally(
            contest_id=c.contest_id,
            counts=tuple(counts[c.contest_id].items()),
            undervotes=undervotes[c.contest_id],
            overvotes=overvotes[c.contest_id],
        )
        for c in election.contests
    )
    return TabulationResult(
        election_id=election.election_id,
        total_ballots=total,
        spoiled_skipped=0,
        contests=contests,
    )


def _ballot_marks(ballot: PaperBallot, election: ElectionDefinition) -> dict[str, frozenset[str]]:
    marks: dict[str, frozenset[str]] = {}
    for line in ballot.lines:
        if not election.has_contest(line.contest_id):
            raise TabulationError(
                f"ballot {ballot.ballot_id} references unknown contest '{line.contest_id}'"
            )
        contest = election.contest(line.contest_id)
        try:
            marks[line.contest_id] = parse_selection_text(contest, line.text)
        except ValueError as exc:
            raise TabulationError(f"ballot {ballot.ballot_id}: {exc}") from exc
    return marks


def tabulate(
    ballots: Sequence[PaperBallot], election: ElectionDefinition
) -> TabulationResult:
    """Count cast paper ballots. Spoiled ballots are skipped and counted in
    spoiled_skipped so reports can show them; a cast ballot missing a
    contest line is malformed and refuses to count."""
    spoiled = 0
    mark_sets = []
    for ballot in ballots:
        if ballot.disposition is Disposition.SPOILED:
            spoiled += 1
            continue
        marks = _ballot_marks(ballot, election)
        missing = [c.contest_id for c in election.contests if c.contest_id not in marks]
        if missing:
            raise TabulationError(
                f"cast ballot {ballot.ballot_id} has no line for contest '{missing[0]}'"
            )
        mark_sets.append(marks)
    result = tabulate_marks(mark_sets, election)
    return TabulationResult(
        election_id=result.election_id,
        total_ballots=result.total_ballots,
        spoiled_skipped=spoiled,
        contests=result.contests,
    )


def detection_probability(p_detect: float, k: int) -> float:
    """Chance at least one of k independently reviewed wrong lines is
    noticed when each is noticed with probability p_detect."""
    if not 0.0 <= p_detect <= 1.0:
        raise ValueError(f"p_detect must be within [0, 1], got {p_detect}")
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    return 1.0 - (1.0 - p_detect) ** k


def monte_carlo_detection(p_detect: float, k: int, trials: int, seed: int) -> float:
    """Estimate the same probability by driving real voting sessions.

    Each trial boots nothing new: one machine with k selection-flipping
    payloads runs a k-contest election, the simulated voter confirms every
    line, and the trial counts as detected if any confirmation raised an
    alert. Agreement with detection_probability is a check that the session
    engine applies exactly one detection draw per wrong line.
    """
    from .ballot import Candidate, Contest, ElectionDefinition as Election
    from .machine import (
        Machine,
        build_base_image,
        graft_payload_into_image,
        make_machine_state,
        stvm_config,
        swap_payload,
    )
    from .session import VoterProfile, VotingSession

    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    if k == 0:
        return 0.0

    contests = tuple(
        Contest(
            contest_id=f"race-{i}",
            title=f"Race {i}",
            vote_for=1,
            candidates=(
                Candidate(f"r{i}-a", f"Alpha {i}"),
                Candidate(f"r{i}-b", f"Bravo {i}"),
            ),
        )
        for i in range(k)
    )
    election = Election(election_id="mc-detection", title="Detection trial", contests=contests)

    image = build_base_image("mc-image")
    for i in range(k):
        image = graft_payload_into_image(
            image, swap_payload(f"flip-{i}", f"race-{i}", f"r{i}-a", f"r{i}-b")
        )
    machine = Machine(make_machine_state(stvm_config(), image))
    machine.boot()

    voter = VoterProfile(p_detect=p_detect)
    detected = 0
    for trial in range(trials):
        session = VotingSession(election, machine, voter, seed=derive_seed(seed, "trial", trial))
        alerted = False
        for i, contest in enumerate(contests):
            session.make_selection(contest.contest_id, f"r{i}-a")
            session.request_print()
            session.confirm_printed()
            if session.phase.kind.value == "alert_raised":
                alerted = True
                break
        if alerted:
            session.spoil_ballot()
            detected += 1
        else:
            session.cast_ballot()
    return detected / trials


class AuditOutcome(Enum):
    CONFIRMED = "confirmed_at_risk_limit"
    ESCALATE = "escalate_to_full_count"


class AuditPlanError(ValueError):
    pass


@dataclass(frozen=True)
class AuditPlan:
    """Parameters for one contest's ballot-polling audit.

    reported_tallies is keyed by printed selection text (candidate names as
    they appear on paper), since the audit reads the same paper the voters
    verified. max_samples of None means the full ballot count is the budget.
    """

    risk_limit: float
    contest_id: str
    reported_tallies: tuple[tuple[str, int], ...]
    max_samples: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.risk_limit < 1.0:
            raise AuditPlanError(f"risk_limit must be in (0, 1), got {self.risk_limit}")
        if len(self.reported_tallies) < 2:
            raise AuditPlanError("reported_tallies needs at least two candidates")
        if any(n < 0 for _, n in self.reported_tallies):
            raise AuditPlanError("reported tallies cannot be negative")
        if self.max_samples is not None and self.max_samples < 1:
            raise AuditPlanError(f"max_samples must be positive, got {self.max_samples}")


def audit_plan_from_json_dict(data: dict) -> AuditPlan:
    if not isinstance(data, dict):
        raise AuditPlanError(f"plan: expected an object, got {type(data).__name__}")
    unknown = sorted(
        set(data) - {"risk_limit", "contest_id", "reported_tallies", "max_samples", "seed"}
    )
    if unknown:
        raise AuditPlanError(f"plan: unknown field '{unknown[0]}'")
    for req in ("risk_limit", "contest_id", "reported_tallies"):
        if req not in data:
            raise AuditPlanError(f"plan: missing required field '{req}'")
    tallies = data["reported_tallies"]
    if not isinstance(tallies, dict) or not all(
        isinstance(k, str) and isinstance(v, int) and not isinstance(v, bool)
        for k, v in tallies.items()
    ):
        raise AuditPlanError("plan.reported_tallies: expected an object of integer counts")
    risk = data["risk_limit"]
    if not isinstance(risk, (int, float)) or isinstance(risk, bool):
        raise AuditPlanError("plan.risk_limit: expected a number")
    contest_id = data["contest_id"]
    if not isinstance(contest_id, str) or not contest_id:
        raise AuditPlanError("plan.contest_id: expected a non-empty string")
    max_samples = data.get("max_samples")
    if max_samples is not None and (not isinstance(max_samples, int) or isinstance(max_samples, bool)):
        raise AuditPlanError("plan.max_samples: expected an integer")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise AuditPlanError("plan.seed: expected an integer")
    return AuditPlan(
        risk_limit=float(risk),
        contest_id=contest_id,
        reported_tallies=tuple(sorted(tallies.items())),
        max_samples=max_samples,
        seed=seed,
    )


@dataclass(frozen=True)
class AuditResult:
    outcome: AuditOutcome
    samples_drawn: int
    final_statistic: float

    def to_json_dict(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "samples_drawn": self.samples_drawn,
            "final_statistic": self.final_statistic,
        }


def bravo_audit(plan: AuditPlan, true_ballots: Sequence[PaperBallot]) -> AuditResult:
    """Sequential ballot-polling audit of one contest.

    Per (winner, loser) pair, a drawn ballot for the winner multiplies the
    pair's statistic by s/0.5 and one for the loser by (1-s)/0.5, where s is
    the winner's reported share of the pair's votes. Ballots showing neither
    of the pair (undervotes included) leave that pair's statistic unchanged.
    A pair is settled once its statistic reaches 1/risk_limit; the audit
    confirms when every pair settles, and escalates to a full hand count if
    the sample budget is exhausted first.
    """
    if not true_ballots:
        raise AuditPlanError("cannot audit an empty ballot set")
    reported = dict(plan.reported_tallies)
    winner = max(sorted(reported), key=lambda name: reported[name])
    losers = [name for name in sorted(reported) if name != winner]

    shares: dict[str, float] = {}
    for loser in losers:
        pair_total = reported[winner] + reported[loser]
        if pair_total == 0 or reported[winner] / pair_total <= 0.5:
            raise AuditPlanError(
                f"reported share for '{winner}' vs '{loser}' is not above one half; "
                "a ballot-polling audit cannot confirm a non-majority"
            )
        shares[loser] = reported[winner] / pair_total

    # Names actually shown on each ballot's line for the audited contest.
    ballot_names: list[frozenset[str]] = []
    for ballot in true_ballots:
        names: frozenset[str] = frozenset()
        for line in ballot.lines:
            if line.contest_id == plan.contest_id and line.text != NO_SELECTION_TEXT:
                names = frozenset(line.text.split("; "))
        ballot_names.append(names)

    threshold = 1.0 / plan.risk_limit
    statistic = {loser: 1.0 for loser in losers}
    pending = set(losers)
    budget = plan.max_samples if plan.max_samples is not None else len(true_ballots)
    rng = random.Random(plan.seed)

    samples = 0
    while pending and samples < budget:
        names = ballot_names[rng.randrange(len(true_ballots))]
        samples += 1
        for loser in list(pending):
            s = shares[loser]
            if winner in names and loser not in names:
                statistic[loser] *= s / 0.5
            elif loser in names and winner not in names:
                statistic[loser] *= (1.0 - s) / 0.5
            if statistic[loser] >= threshold:
                pending.discard(loser)

    outcome = AuditOutcome.CONFIRMED if not pending else AuditOutcome.ESCALATE
    return AuditResult(
        outcome=outcome,
        samples_drawn=samples,
        final_statistic=min(statistic.values()),
    )
