"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line
with the measured value so a full run reads as a scorecard. Tolerances are
pinned in the assertions; the helpers compute everything independently of
the code under test wherever the criterion allows it.
"""

import copy
import json
import math
import random
import time
from dataclasses import replace
from pathlib import Path

import numpy
import pytest

from stvmsim.ballot import NO_SELECTION_TEXT
from stvmsim.cli import main
from stvmsim.machine import (
    Machine,
    MachineError,
    ChecksumVerdict,
    attach_media,
    boot,
    build_base_image,
    byte_diff,
    content_digest,
    detach_media,
    genuine_image,
    graft_payload_into_image,
    inert_payload,
    install_payload,
    make_machine_state,
    power_off,
    reboot,
    stvm_config,
    swap_payload,
    trigger_wipe,
    verify_checksum,
    wipe_payload,
)
from stvmsim.attacks import (
    HmpbUndervoteHack,
    VoterPopulation,
    blanks_in_sheets,
    count_exploitable_blanks,
    generate_hmpb_sheets,
    run_clean_election,
    run_hmpb_baseline,
)
from stvmsim.printer import Disposition, PrintLog, finalize_ballot
from stvmsim.session import (
    OvervoteRejectedError,
    PhaseKind,
    SessionPhaseError,
    UnknownCandidateError,
    VoterProfile,
    VotingSession,
    WrongContestError,
)
from stvmsim.tally import (
    AuditOutcome,
    AuditPlan,
    bravo_audit,
    detection_probability,
    monte_carlo_detection,
    tabulate,
)

GOLDEN = Path(__file__).resolve().parent / "golden" / "experiment_report.json"


@pytest.fixture()
def report(capsys):
    def _report(number: int, label: str, ok: bool, value: str) -> None:
        with capsys.disabled():
            print(f"[criterion {number}] {label}: {'PASS' if ok else 'FAIL'} ({value})")

    return _report


# -- 1: the persistence experiment, end to end through the CLI -----------------


def test_criterion_1_experiment_replication(report, tmp_path):
    out = tmp_path / "report.json"
    started = time.perf_counter()
    code = main(["run-experiment", "--out", str(out)])
    elapsed = time.perf_counter() - started

    doc = json.loads(out.read_text())
    control = doc["experiment"]["control"]
    stvm = doc["experiment"]["stvm"]
    control_phases = {p["phase"]: p["flips_on_paper"] for p in control["phases"]}
    stvm_phases = {p["phase"]: p["flips_on_paper"] for p in stvm["phases"]}

    ok = (
        code == 0
        and control["persisted_after_reboot"] is True
        and control_phases["election_day_voting"] > 0
        and stvm["persisted_after_reboot"] is False
        and stvm_phases["election_day_voting"] == 0
        and stvm_phases["mid_session_install"] > 0
        and stvm_phases["post_reboot_voting"] == 0
        and out.read_bytes() == GOLDEN.read_bytes()
        and elapsed < 5.0
    )
    report(
        1,
        "experiment replication",
        ok,
        f"control day flips {control_phases['election_day_voting']}, "
        f"stvm window flips {stvm_phases['mid_session_install']}, "
        f"post-reboot {stvm_phases['election_day_voting']}, "
        f"golden byte-identical, {elapsed:.2f}s",
    )
    assert ok


# -- 2: the three observed detection rates ------------------------------------


def test_criterion_2_detection_rates(report):
    started = time.perf_counter()
    estimates = {
        p: monte_carlo_detection(p, k=1, trials=100_000, seed=round(p * 1000))
        for p in (0.77, 0.40, 0.176)
    }
    elapsed = time.perf_counter() - started
    worst = max(abs(est - p) for p, est in estimates.items())
    ok = worst <= 0.005 and elapsed < 30.0
    report(
        2,
        "detection rates",
        ok,
        ", ".join(f"{p} -> {est:.4f}" for p, est in estimates.items())
        + f"; worst |err| {worst:.4f} <= 0.005, {elapsed:.1f}s",
    )
    assert ok


# -- 3: ten chances to catch one persistent flipper -----------------------------


def test_criterion_3_escape_probability(report):
    exact = detection_probability(0.77, 10)
    assert exact == pytest.approx(1.0 - 0.23**10, rel=1e-12)

    trials = 10_000_000
    reviews = 10
    rng = numpy.random.default_rng(771_000)
    escapes = 0
    chunk = 1_000_000
    for _ in range(trials // chunk):
        draws = rng.random((chunk, reviews))
        escapes += int(numpy.count_nonzero(numpy.all(draws >= 0.77, axis=1)))
    estimate = 1.0 - escapes / trials

    sigma = math.sqrt(exact * (1.0 - exact) / trials)
    ok = abs(estimate - exact) <= 3.0 * sigma
    report(
        3,
        "escape probability",
        ok,
        f"exact {exact:.9f}, mc {estimate:.9f} ({escapes} escapes in 1e7), "
        f"|err| {abs(estimate - exact):.2e} <= 3 sigma {3 * sigma:.2e}",
    )
    assert ok


# -- 4: statelessness as a tested property ---------------------------------------


def test_criterion_4_statelessness_property(report):
    base = make_machine_state(stvm_config(), build_base_image("prop-disc"))
    booted = boot(base)
    clean = replace(reboot(booted), attached_media=frozenset())
    payloads = [
        inert_payload("quiet"),
        swap_payload("flipper", "governor", "a", "b"),
        wipe_payload("burn"),
    ]
    media = ["m1", "m2", "m3"]

    def step(rng, state):
        roll = rng.randrange(7)
        if roll == 0:
            return attach_media(state, rng.choice(media))
        if roll == 1:
            return detach_media(state, rng.choice(media))
        if roll == 2:
            return install_payload(state, rng.choice(payloads), rng.choice(media))
        if roll == 3:
            return reboot(state)
        if roll == 4:
            return power_off(state)
        if roll == 5:
            return boot(state)
        return trigger_wipe(state)[0]

    violations = 0
    trials = 10_000
    for i in range(trials):
        rng = random.Random(40_000 + i)
        state = booted
        for _ in range(rng.randrange(1, 9)):
            try:
                state = step(rng, state)
            except MachineError:
                pass  # precondition violations leave the state untouched
        state = reboot(state) if state.powered else boot(state)
        if replace(state, attached_media=frozenset()) != clean:
            violations += 1

    ok = violations == 0
    report(
        4,
        "statelessness property",
        ok,
        f"{trials} randomized action sequences, {violations} violations",
    )
    assert ok


# -- 5: overvotes cannot exist, skips always leave a record -----------------------


def test_criterion_5_overvote_impossibility(report, election, multi_seat_election):
    elections = [election, multi_seat_election]
    machines = []
    for e in elections:
        machine = Machine(make_machine_state(stvm_config(), build_base_image(f"{e.election_id}-d")))
        machine.boot()
        machines.append(machine)

    def check(session, e):
        for contest in e.contests:
            assert len(session.intent_for(contest.contest_id)) <= contest.vote_for
        for line in session.log.lines:
            if line.text == NO_SELECTION_TEXT:
                continue
            names = line.text.split("; ")
            assert len(names) <= e.contest(line.contest_id).vote_for

    lines_checked = 0
    skip_records = 0
    trials = 10_000
    for i in range(trials):
        e = elections[i % 2]
        rng = random.Random(50_000 + i)
        session = VotingSession(e, machines[i % 2], VoterProfile(), seed=i)
        all_contests = [c.contest_id for c in e.contests]
        for _ in range(rng.randrange(2, 10)):
            roll = rng.random()
            try:
                if roll < 0.5:
                    contest = e.contests[rng.randrange(len(e.contests))]
                    pool = [c.candidate_id for c in contest.candidates] + ["bogus"]
                    session.make_selection(contest.contest_id, rng.choice(pool))
                elif roll < 0.65:
                    session.request_print()
                elif roll < 0.75:
                    session.skip_contest()
                    assert session.log.lines[-1].text == NO_SELECTION_TEXT
                    skip_records += 1
                elif roll < 0.9:
                    session.confirm_printed()
                elif roll < 0.95:
                    session.cast_ballot()
                else:
                    session.spoil_ballot()
            except (
                SessionPhaseError,
                OvervoteRejectedError,
                WrongContestError,
                UnknownCandidateError,
            ):
                pass
            check(session, e)
            lines_checked += len(session.log.lines)
        del all_contests

    ok = skip_records > 0 and lines_checked > 0
    report(
        5,
        "overvote impossibility",
        ok,
        f"{trials} fuzzed input streams, {lines_checked} printed-line checks, "
        f"{skip_records} skips all recorded '{NO_SELECTION_TEXT}'",
    )
    assert ok


# -- 6: no path around the confirmation step --------------------------------------


def _phase_tuple(session):
    return (session.phase.kind, session.phase.contest_index)


def _signature(session):
    return (
        _phase_tuple(session),
        tuple((line.contest_id, line.text) for line in session.log.lines),
        tuple(
            (c.contest_id, tuple(sorted(session.intent_for(c.contest_id))))
            for c in session.election.contests
        ),
        None if session.ballot is None else session.ballot.disposition,
    )


def _enumerate_transitions(election, machine, p_detect):
    def op_select(session, which):
        index = session.phase.contest_index
        if index is None:
            raise SessionPhaseError("no active contest", session.phase)
        contest = session.election.contests[index]
        candidate = contest.candidates[which % len(contest.candidates)]
        session.make_selection(contest.contest_id, candidate.candidate_id)

    ops = {
        "select_a": lambda s: op_select(s, 0),
        "select_b": lambda s: op_select(s, 1),
        "print": lambda s: s.request_print(),
        "skip": lambda s: s.skip_contest(),
        "confirm": lambda s: s.confirm_printed(),
        "cast": lambda s: s.cast_ballot(),
        "spoil": lambda s: s.spoil_ballot(),
    }
    initial = VotingSession(election, machine, VoterProfile(p_detect), seed=6)
    states = {_signature(initial): initial}
    edges = []
    frontier = [initial]
    while frontier:
        session = frontier.pop()
        for name, op in ops.items():
            candidate = copy.deepcopy(session)
            try:
                op(candidate)
            except (SessionPhaseError, OvervoteRejectedError):
                continue
            sig = _signature(candidate)
            edges.append((_phase_tuple(session), name, _phase_tuple(candidate)))
            if sig not in states:
                states[sig] = candidate
                frontier.append(candidate)
    return states, edges


def _gating_violations(edges, last_index):
    bad = []
    for frm, op, to in edges:
        if frm == to:
            continue
        to_kind, to_index = to
        if to_kind is PhaseKind.CONTEST_ACTIVE and to_index > 0:
            if frm != (PhaseKind.AWAITING_CONFIRMATION, to_index - 1) or op != "confirm":
                bad.append((frm, op, to))
        if to_kind is PhaseKind.COMPLETE:
            if frm != (PhaseKind.AWAITING_CONFIRMATION, last_index) or op != "confirm":
                bad.append((frm, op, to))
        if to_kind is PhaseKind.CAST:
            if frm != (PhaseKind.COMPLETE, None) or op != "cast":
                bad.append((frm, op, to))
        if frm[0] is PhaseKind.ALERT_RAISED and op != "spoil":
            bad.append((frm, op, to))
    return bad


def test_criterion_6_confirmation_gating(report, election):
    last = len(election.contests) - 1

    clean = Machine(make_machine_state(stvm_config(), build_base_image("gate-cln")))
    clean.boot()
    clean_states, clean_edges = _enumerate_transitions(election, clean, p_detect=0.0)

    first = election.contests[0]
    flip = swap_payload(
        "gate-flip",
        first.contest_id,
        first.candidates[0].candidate_id,
        first.candidates[1].candidate_id,
    )
    hostile = Machine(
        make_machine_state(stvm_config(), graft_payload_into_image(build_base_image("gate-evil"), flip))
    )
    hostile.boot()
    hostile_states, hostile_edges = _enumerate_transitions(election, hostile, p_detect=1.0)

    violations = _gating_violations(clean_edges, last) + _gating_violations(hostile_edges, last)
    reached_cast = any(s.phase.kind is PhaseKind.CAST for s in clean_states.values())
    reached_alert = any(s.phase.kind is PhaseKind.ALERT_RAISED for s in hostile_states.values())

    ok = not violations and reached_cast and reached_alert
    report(
        6,
        "confirmation gating",
        ok,
        f"{len(clean_states)}+{len(hostile_states)} states, "
        f"{len(clean_edges)}+{len(hostile_edges)} edges enumerated to fixpoint, "
        f"{len(violations)} bypasses",
    )
    assert ok, violations[:5]


# -- 7: every single-byte change is caught and located ------------------------------


def test_criterion_7_tamper_evidence(report):
    base = build_base_image("tamper-disc")
    grafted = graft_payload_into_image(base, swap_payload("graft", "governor", "a", "b"))
    rng = random.Random(70_000)
    caught = 0
    located = 0
    trials = 1_000
    for i in range(trials):
        original = (base, grafted)[i % 2]
        offset = rng.randrange(len(original.content))
        old = original.content[offset]
        new = rng.randrange(256)
        while new == old:
            new = rng.randrange(256)
        mutated = (
            original.content[:offset] + bytes([new]) + original.content[offset + 1 :]
        )
        verdict = verify_checksum(genuine_image("mut", mutated), content_digest(original.content))
        if verdict is ChecksumVerdict.MISMATCH:
            caught += 1
        diffs = byte_diff(original.content, mutated)
        if len(diffs) == 1 and diffs[0].offset == offset and diffs[0].byte_b == new:
            located += 1

    ok = caught == trials and located == trials
    report(
        7,
        "tamper evidence",
        ok,
        f"{caught}/{trials} mismatches reported, {located}/{trials} exact offsets",
    )
    assert ok


# -- 8: the audit's risk guarantee, measured ------------------------------------------


def _governor_ballots(election, doe, rayne):
    ballots = []
    for i in range(doe + rayne):
        log = PrintLog().append("governor", "John Doe" if i < doe else "David Rayne")
        log = log.append("agriculture-commissioner", NO_SELECTION_TEXT)
        _, ballot = finalize_ballot(log, election, Disposition.CAST, f"B-{i:010x}")
        ballots.append(ballot)
    return ballots


def test_criterion_8_rla_risk_guarantee(report, election):
    started = time.perf_counter()
    runs = 1_000

    wrong_true = _governor_ballots(election, doe=900, rayne=1100)  # 45/55
    reported_wrong = (("David Rayne", 900), ("John Doe", 1100))  # 55/45
    wrong_confirms = sum(
        bravo_audit(
            AuditPlan(0.05, "governor", reported_wrong, seed=seed), wrong_true
        ).outcome
        is AuditOutcome.CONFIRMED
        for seed in range(runs)
    )

    right_true = _governor_ballots(election, doe=1200, rayne=800)  # 60/40
    reported_right = (("David Rayne", 800), ("John Doe", 1200))
    right_confirms = sum(
        bravo_audit(
            AuditPlan(0.05, "governor", reported_right, seed=seed), right_true
        ).outcome
        is AuditOutcome.CONFIRMED
        for seed in range(runs)
    )
    elapsed = time.perf_counter() - started

    wrong_rate = wrong_confirms / runs
    right_rate = right_confirms / runs
    bound = 0.05 + 3.0 * math.sqrt(0.05 * 0.95 / runs)
    ok = wrong_rate <= bound and right_rate >= 0.99 and elapsed < 60.0
    report(
        8,
        "rla risk guarantee",
        ok,
        f"wrong outcome confirmed {wrong_rate:.3f} <= {bound:.3f}, "
        f"true outcome confirmed {right_rate:.3f} >= 0.99, {elapsed:.1f}s",
    )
    assert ok


# -- 9: the blank-space attack exists on hand-marked paper, not here -------------------


def test_criterion_9_hmpb_comparison(report, election):
    population = VoterPopulation(count=200, profile=VoterProfile(0.77), undervote_rate=0.1)
    seed = 90

    blanks = blanks_in_sheets(generate_hmpb_sheets(population, election, seed), "governor")
    hacked = run_hmpb_baseline(HmpbUndervoteHack("governor", "john-doe"), population, election, seed)

    cast, _ = run_clean_election(stvm_config(), election, population, seed)
    undervotes = tabulate(cast, election).contest("governor").undervotes
    exploitable = count_exploitable_blanks(cast, "governor")

    ok = (
        blanks > 0
        and hacked.flips_attempted == blanks
        and hacked.flips_cast_undetected == blanks
        and hacked.detected_by == ()
        and len(cast) == population.count
        and undervotes > 0
        and exploitable == 0
    )
    report(
        9,
        "hand-marked paper comparison",
        ok,
        f"insider gained {hacked.flips_attempted} of {blanks} blanks undetected; "
        f"machine ballots: {undervotes} undervotes, {exploitable} exploitable blanks",
    )
    assert ok
