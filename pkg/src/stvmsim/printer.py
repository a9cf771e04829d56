"""Virtual ballot printer: an append-only log that becomes a paper ballot.

Paper is the trust anchor of the whole design, so the model is strict about
the two things real thermal paper enforces physically: you cannot reprint a
contest line (corrections mean spoiling the sheet and starting over) and you
cannot add lines after the ballot has been torn off (finalized).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .ballot import ElectionDefinition


class PrintLogError(RuntimeError):
    """Base class for paper-handling violations."""


class LogFinalizedError(PrintLogError):
    pass


class DuplicateContestLineError(PrintLogError):
    pass


class IncompleteBallotError(PrintLogError):
    def __init__(self, missing: tuple[str, ...]):
        super().__init__(f"cannot cast: no printed line for contest(s) {', '.join(missing)}")
        self.missing = missing


@dataclass(frozen=True)
class PrintedLine:
    seq: int
    contest_id: str
    text: str


class Disposition(Enum):
    CAST = "Cast"
    SPOILED = "Spoiled"


@dataclass(frozen=True)
class PrintLog:
    lines: tuple[PrintedLine, ...] = ()
    finalized: bool = False

    def append(self, contest_id: str, text: str) -> PrintLog:
        if self.finalized:
            raise LogFinalizedError("cannot print on a finalized ballot")
        if any(line.contest_id == contest_id for line in self.lines):
            raise DuplicateContestLineError(
                f"contest '{contest_id}' already has a printed line"
            )
        line = PrintedLine(seq=len(self.lines), contest_id=contest_id, text=text)
        return PrintLog(lines=self.lines + (line,), finalized=False)

    def line_for(self, contest_id: str) -> PrintedLine | None:
        for line in self.lines:
            if line.contest_id == contest_id:
                return line
        return None


@dataclass(frozen=True)
class PaperBallot:
    ballot_id: str
    lines: tuple[PrintedLine, ...]
    disposition: Disposition


def finalize_ballot(
    log: PrintLog,
    election: ElectionDefinition,
    disposition: Disposition,
    ballot_id: str,
) -> tuple[PrintLog, PaperBallot]:
    """Tear off the ballot. Cast ballots must cover every contest exactly once;
    spoiled ballots are kept as-is, however partial, for investigation."""
    if log.finalized:
        raise LogFinalizedError("ballot already finalized")
    if disposition is Disposition.CAST:
        printed = {line.contest_id for line in log.lines}
        missing = tuple(
            c.contest_id for c in election.contests if c.contest_id not in printed
        )
        if missing:
            raise IncompleteBallotError(missing)
        stray = sorted(printed - {c.contest_id for c in election.contests})
        if stray:
            raise PrintLogError(f"printed line for unknown contest '{stray[0]}'")
    finalized = PrintLog(lines=log.lines, finalized=True)
    ballot = PaperBallot(ballot_id=ballot_id, lines=log.lines, disposition=disposition)
    return finalized, ballot


def ballot_to_text(ballot: PaperBallot) -> str:
    out = [f"BALLOT {ballot.ballot_id} {ballot.disposition.value}"]
    out.extend(f"{line.contest_id}: {line.text}" for line in ballot.lines)
    return "\n".join(out) + "\n"


def ballots_to_text(ballots: Iterable[PaperBallot]) -> str:
    return "\n".join(ballot_to_text(b) for b in ballots)


class BallotFileError(ValueError):
    """A ballot export that does not parse; message carries the line number."""


_HEADER_RE = re.compile(r"^BALLOT (\S+) (Cast|Spoiled)$")


def parse_ballots_text(text: str) -> list[PaperBallot]:
    ballots: list[PaperBallot] = []
    header: tuple[str, Disposition] | None = None
    lines: list[PrintedLine] = []

    def flush() -> None:
        nonlocal header, lines
        if header is not None:
            ballot_id, disposition = header
            ballots.append(
                PaperBallot(ballot_id=ballot_id, lines=tuple(lines), disposition=disposition)
            )
        header = None
        lines = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.startswith("#"):
            continue
        if raw.startswith("BALLOT "):
            match = _HEADER_RE.match(raw)
            if not match:
                raise BallotFileError(f"line {lineno}: malformed ballot header")
            flush()
            header = (match.group(1), Disposition(match.group(2)))
            continue
        if header is None:
            raise BallotFileError(f"line {lineno}: contest line before any ballot header")
        if ": " not in raw:
            raise BallotFileError(f"line {lineno}: expected '<contest_id>: <text>'")
        contest_id, text_part = raw.split(": ", 1)
        lines.append(PrintedLine(seq=len(lines), contest_id=contest_id, text=text_part))
    flush()
    return ballots
