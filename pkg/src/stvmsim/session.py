"""One voter's session: select, print, verify, confirm, repeat.

The engine enforces the protocol's central discipline: a contest is not
done until the voter has confirmed the line the printer actually produced.
What gets printed is the voter's intent as seen by the machine's active
software, so a selection-transforming payload shows up on paper, in front
of the voter, at the moment it acts. Whether the voter notices is a
Bernoulli draw from their profile; noticing raises an alert, after which
the only legal move is to spoil.

Phases and the transitions between them:

    idle -> contest_active(0)                        start
    contest_active(i) -> awaiting_print(i)           print requested (or skip)
    awaiting_print(i) -> awaiting_confirmation(i)    line emitted
    awaiting_confirmation(i) -> contest_active(i+1)  confirmed, more contests
    awaiting_confirmation(i) -> complete             confirmed, last contest
    awaiting_confirmation(i) -> alert_raised         mismatch noticed
    complete -> cast                                 ballot cast
    any non-terminal -> spoiled                      ballot spoiled

cast and spoiled are terminal; alert_raised admits only spoiling.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .ballot import (
    ElectionDefinition,
    SelectionSet,
    SelectionVerdict,
    VerdictKind,
    render_selection_text,
    validate_selection,
)
from .machine import EffectKind, Machine
from .printer import Disposition, PaperBallot, PrintLog, finalize_ballot

# Review-and-notice rates for a voter facing a wrong printed line, by
# interface style: reading line by line as each prints, reviewing a full
# printed summary, and a plain error-prone data-entry baseline.
P_DETECT_TRANSPARENT = 0.77
P_DETECT_REVIEW = 0.40
P_DETECT_ERROR_BASELINE = 0.176


class PhaseKind(Enum):
    IDLE = "idle"
    CONTEST_ACTIVE = "contest_active"
    AWAITING_PRINT = "awaiting_print"
    AWAITING_CONFIRMATION = "awaiting_confirmation"
    COMPLETE = "complete"
    CAST = "cast"
    SPOILED = "spoiled"
    ALERT_RAISED = "alert_raised"


_INDEXED = {PhaseKind.CONTEST_ACTIVE, PhaseKind.AWAITING_PRINT, PhaseKind.AWAITING_CONFIRMATION}
_TERMINAL = {PhaseKind.CAST, PhaseKind.SPOILED}


@dataclass(frozen=True)
class SessionPhase:
    kind: PhaseKind
    contest_index: int | None = None

    def __post_init__(self) -> None:
        if self.kind in _INDEXED and self.contest_index is None:
            raise ValueError(f"phase {self.kind.value} requires a contest index")
        if self.kind not in _INDEXED and self.contest_index is not None:
            raise ValueError(f"phase {self.kind.value} does not take a contest index")

    @property
    def terminal(self) -> bool:
        return self.kind in _TERMINAL

    def label(self) -> str:
        if self.contest_index is not None:
            return f"{self.kind.value}({self.contest_index})"
        return self.kind.value


class SessionError(RuntimeError):
    pass


class SessionPhaseError(SessionError):
    """Operation attempted in a phase that does not allow it."""

    def __init__(self, message: str, phase: SessionPhase):
        super().__init__(f"{message} (phase: {phase.label()})")
        self.phase = phase


class WrongContestError(SessionError):
    pass


class UnknownCandidateError(SessionError):
    pass


class OvervoteRejectedError(SessionError):
    """Selection would exceed vote_for; the intent is left unchanged."""

    def __init__(self, verdict: SelectionVerdict):
        super().__init__(f"overvote rejected: {verdict.detail}")
        self.verdict = verdict


class MachineUnavailableError(SessionError):
    """The machine is off or was power-cycled out from under this session."""


@dataclass(frozen=True)
class VoterProfile:
    p_detect: float = P_DETECT_TRANSPARENT

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_detect <= 1.0:
            raise ValueError(f"p_detect must be within [0, 1], got {self.p_detect}")


@dataclass(frozen=True)
class SessionEvent:
    kind: str
    phase_before: SessionPhase
    phase_after: SessionPhase
    payload: tuple[tuple[str, object], ...] = ()

    def payload_dict(self) -> dict:
        return dict(self.payload)


def format_trace(events: list[SessionEvent]) -> str:
    """Newline-delimited trace export; replayable and diffable."""
    out = []
    for ev in events:
        detail = " ".join(f"{k}={v!r}" for k, v in ev.payload)
        line = f"{ev.kind} {ev.phase_before.label()} -> {ev.phase_after.label()}"
        out.append(f"{line} {detail}".rstrip())
    return "\n".join(out) + "\n"


class VotingSession:
    """Drives one voter through the election on a live machine."""

    def __init__(
        self,
        election: ElectionDefinition,
        machine: Machine,
        voter: VoterProfile,
        seed: int,
        manual_detection: bool = False,
    ):
        if not machine.powered:
            raise MachineUnavailableError("machine is not powered on")
        self.election = election
        self.voter = voter
        self.manual_detection = manual_detection
        self._machine = machine
        self._boot_epoch = machine.boot_epoch
        self._rng = random.Random(seed)
        self._intents: dict[str, set[str]] = {}
        self._printed_text: dict[int, str] = {}
        self._intent_text: dict[int, str] = {}
        self._log = PrintLog()
        self._ballot: PaperBallot | None = None
        self.events: list[SessionEvent] = []
        self.phase = SessionPhase(PhaseKind.IDLE)
        self._transition(
            "session_started",
            SessionPhase(PhaseKind.CONTEST_ACTIVE, 0),
            ballot_style=election.election_id,
        )

    # -- observation ------------------------------------------------------

    @property
    def log(self) -> PrintLog:
        return self._log

    @property
    def ballot(self) -> PaperBallot | None:
        return self._ballot

    def intent_for(self, contest_id: str) -> frozenset[str]:
        return frozenset(self._intents.get(contest_id, ()))

    def current_contest_id(self) -> str | None:
        if self.phase.contest_index is None:
            return None
        return self.election.contests[self.phase.contest_index].contest_id

    def rendered_intent(self, contest_index: int) -> str | None:
        return self._intent_text.get(contest_index)

    def printed_text(self, contest_index: int) -> str | None:
        return self._printed_text.get(contest_index)

    def printed_mismatch(self, contest_index: int) -> bool | None:
        """Whether the printed line differs from the voter's intent, for a
        contest that has printed. Mismatch is exact text inequality."""
        if contest_index not in self._printed_text:
            return None
        return self._printed_text[contest_index] != self._intent_text[contest_index]

    # -- internals ---------------------------------------------------------

    def _transition(self, kind: str, after: SessionPhase, **payload: object) -> None:
        event = SessionEvent(
            kind=kind,
            phase_before=self.phase,
            phase_after=after,
            payload=tuple(payload.items()),
        )
        self.events.append(event)
        self.phase = after

    def _check_machine(self) -> None:
        if not self._machine.powered or self._machine.boot_epoch != self._boot_epoch:
            raise MachineUnavailableError("machine rebooted or lost power during the session")

    def _require(self, kind: PhaseKind, action: str) -> int:
        self._check_machine()
        if self.phase.kind is not kind:
            raise SessionPhaseError(f"cannot {action}", self.phase)
        return self.phase.contest_index if self.phase.contest_index is not None else -1

    def _transformed(self, contest_id: str, chosen: frozenset[str]) -> frozenset[str]:
        # Transforms apply in installation order; each maps the full selection.
        current = set(chosen)
        for payload in self._machine.active_software:
            effect = payload.effect
            if effect.kind is EffectKind.SELECTION_TRANSFORM and effect.contest_id == contest_id:
                mapping = effect.mapping_dict()
                current = {mapping.get(c, c) for c in current}
        return frozenset(current)

    def _emit_line(self, index: int, via: str) -> None:
        contest = self.election.contests[index]
        intent = self.intent_for(contest.contest_id)
        intent_text = render_selection_text(contest, intent)
        printed = render_selection_text(contest, self._transformed(contest.contest_id, intent))
        self._transition(
            "print_requested",
            SessionPhase(PhaseKind.AWAITING_PRINT, index),
            contest_id=contest.contest_id,
            via=via,
        )
        self._log = self._log.append(contest.contest_id, printed)
        self._printed_text[index] = printed
        self._intent_text[index] = intent_text
        self._transition(
            "line_emitted",
            SessionPhase(PhaseKind.AWAITING_CONFIRMATION, index),
            seq=self._log.lines[-1].seq,
            contest_id=contest.contest_id,
            text=printed,
        )

    def _ballot_id(self) -> str:
        return f"B-{self._rng.getrandbits(40):010x}"

    # -- voter actions ------------------------------------------------------

    def make_selection(self, contest_id: str, candidate_id: str) -> frozenset[str]:
        """Toggle a candidate in the active contest; returns the new intent."""
        index = self._require(PhaseKind.CONTEST_ACTIVE, "change selections")
        contest = self.election.contests[index]
        if contest_id != contest.contest_id:
            raise WrongContestError(
                f"contest '{contest_id}' is not on screen (active: '{contest.contest_id}')"
            )
        if not contest.has_candidate(candidate_id):
            raise UnknownCandidateError(
                f"no candidate '{candidate_id}' in contest '{contest_id}'"
            )
        chosen = self._intents.setdefault(contest_id, set())
        if candidate_id in chosen:
            chosen.discard(candidate_id)
            self._transition(
                "selection_toggled", self.phase,
                contest_id=contest_id, candidate_id=candidate_id, selected=False,
            )
        else:
            proposed = SelectionSet(contest_id=contest_id, chosen=frozenset(chosen | {candidate_id}))
            verdict = validate_selection(self.election, proposed)
            if verdict.kind is VerdictKind.OVERVOTE:
                self._transition(
                    "overvote_rejected", self.phase,
                    contest_id=contest_id, candidate_id=candidate_id,
                )
                raise OvervoteRejectedError(verdict)
            chosen.add(candidate_id)
            self._transition(
                "selection_toggled", self.phase,
                contest_id=contest_id, candidate_id=candidate_id, selected=True,
            )
        return frozenset(chosen)

    def request_print(self) -> None:
        index = self._require(PhaseKind.CONTEST_ACTIVE, "print")
        self._emit_line(index, via="print")

    def skip_contest(self) -> None:
        """Decline the contest: prints the explicit undervote marker. The
        line still has to be confirmed like any other."""
        index = self._require(PhaseKind.CONTEST_ACTIVE, "skip")
        self._intents[self.election.contests[index].contest_id] = set()
        self._emit_line(index, via="skip")

    def confirm_printed(self, noticed: bool | None = None) -> None:
        """Voter accepts or flags the line just printed.

        With manual_detection the caller plays the voter and must pass
        `noticed`. Otherwise a matching line always advances, and a
        mismatched line is noticed with probability p_detect (one draw per
        mismatched confirmation screen).
        """
        index = self._require(PhaseKind.AWAITING_CONFIRMATION, "confirm")
        mismatch = self._printed_text[index] != self._intent_text[index]
        if self.manual_detection:
            if noticed is None:
                raise ValueError("manual_detection session requires noticed=True/False")
            detected = noticed
        else:
            if noticed is not None:
                raise ValueError("noticed is only accepted on manual_detection sessions")
            detected = mismatch and self._rng.random() < self.voter.p_detect
        if detected:
            self._transition(
                "alert_raised", SessionPhase(PhaseKind.ALERT_RAISED),
                contest_id=self.election.contests[index].contest_id,
                mismatch=mismatch,
            )
            return
        if index + 1 < len(self.election.contests):
            after = SessionPhase(PhaseKind.CONTEST_ACTIVE, index + 1)
        else:
            after = SessionPhase(PhaseKind.COMPLETE)
        self._transition("confirmed", after, contest_id=self.election.contests[index].contest_id,
                         mismatch=mismatch)

    def cast_ballot(self) -> PaperBallot:
        self._check_machine()
        if self.phase.kind is not PhaseKind.COMPLETE:
            raise SessionPhaseError("cannot cast", self.phase)
        self._log, ballot = finalize_ballot(
            self._log, self.election, Disposition.CAST, self._ballot_id()
        )
        self._ballot = ballot
        self._transition("ballot_cast", SessionPhase(PhaseKind.CAST), ballot_id=ballot.ballot_id)
        return ballot

    def spoil_ballot(self) -> PaperBallot:
        """Abort from any non-terminal phase. The partial paper record is
        finalized as-is and kept; investigations read spoiled ballots."""
        self._check_machine()
        if self.phase.terminal:
            raise SessionPhaseError("cannot spoil", self.phase)
        self._log, ballot = finalize_ballot(
            self._log, self.election, Disposition.SPOILED, self._ballot_id()
        )
        self._ballot = ballot
        self._transition("ballot_spoiled", SessionPhase(PhaseKind.SPOILED), ballot_id=ballot.ballot_id)
        return ballot


def start_session(
    election: ElectionDefinition,
    machine: Machine,
    voter: VoterProfile,
    seed: int,
    manual_detection: bool = False,
) -> VotingSession:
    return VotingSession(election, machine, voter, seed, manual_detection=manual_detection)
