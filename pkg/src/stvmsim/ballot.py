"""Election structure and selection validity rules.

An election document is strict-schema JSON: unknown fields are rejected so
fixtures stay canonical, syntax problems are reported with their position,
and schema problems name the offending element. Everything built here is
immutable; contests and candidates keep their document order, which is also
the display order used on screen and on paper.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable

NO_SELECTION_TEXT = "no-selection"


class ElectionDocumentError(ValueError):
    """Base class for election document failures."""


class ElectionSyntaxError(ElectionDocumentError):
    """Document is not well-formed JSON. Carries the failing position."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ElectionSchemaError(ElectionDocumentError):
    """Well-formed JSON that violates the election schema."""

    def __init__(self, element: str, message: str):
        super().__init__(f"{element}: {message}")
        self.element = element


@dataclass(frozen=True)
class Candidate:
    candidate_id: str
    name: str

    def __post_init__(self) -> None:
        if not self.candidate_id:
            raise ElectionSchemaError("candidate", "candidate_id must be non-empty")
        if not self.name:
            raise ElectionSchemaError(
                f"candidate '{self.candidate_id}'", "name must be non-empty"
            )


@dataclass(frozen=True)
class Contest:
    contest_id: str
    title: str
    vote_for: int
    candidates: tuple[Candidate, ...]

    def __post_init__(self) -> None:
        if not self.contest_id:
            raise ElectionSchemaError("contest", "contest_id must be non-empty")
        seen: set[str] = set()
        for cand in self.candidates:
            if cand.candidate_id in seen:
                raise ElectionSchemaError(
                    f"contest '{self.contest_id}'",
                    f"duplicate candidate_id '{cand.candidate_id}'",
                )
            seen.add(cand.candidate_id)
        if not 1 <= self.vote_for <= len(self.candidates):
            raise ElectionSchemaError(
                f"contest '{self.contest_id}'",
                f"vote_for ({self.vote_for}) must be between 1 and the "
                f"candidate count ({len(self.candidates)})",
            )

    def candidate_ids(self) -> tuple[str, ...]:
        return tuple(c.candidate_id for c in self.candidates)

    def candidate(self, candidate_id: str) -> Candidate:
        for cand in self.candidates:
            if cand.candidate_id == candidate_id:
                return cand
        raise KeyError(candidate_id)

    def has_candidate(self, candidate_id: str) -> bool:
        return any(c.candidate_id == candidate_id for c in self.candidates)


@dataclass(frozen=True)
class ElectionDefinition:
    election_id: str
    title: str
    contests: tuple[Contest, ...]

    def __post_init__(self) -> None:
        if not self.election_id:
            raise ElectionSchemaError("election", "election_id must be non-empty")
        if not self.contests:
            raise ElectionSchemaError(
                f"election '{self.election_id}'", "must define at least one contest"
            )
        seen: set[str] = set()
        for contest in self.contests:
            if contest.contest_id in seen:
                raise ElectionSchemaError(
                    f"election '{self.election_id}'",
                    f"duplicate contest_id '{contest.contest_id}'",
                )
            seen.add(contest.contest_id)

    def contest(self, contest_id: str) -> Contest:
        for contest in self.contests:
            if contest.contest_id == contest_id:
                return contest
        raise KeyError(contest_id)

    def has_contest(self, contest_id: str) -> bool:
        return any(c.contest_id == contest_id for c in self.contests)

    def contest_index(self, contest_id: str) -> int:
        for i, contest in enumerate(self.contests):
            if contest.contest_id == contest_id:
                return i
        raise KeyError(contest_id)


_ELECTION_FIELDS = {"election_id", "title", "contests"}
_CONTEST_FIELDS = {"contest_id", "title", "vote_for", "candidates"}
_CANDIDATE_FIELDS = {"candidate_id", "name"}


def _require_object(value: Any, element: str) -> dict:
    if not isinstance(value, dict):
        raise ElectionSchemaError(element, f"expected an object, got {type(value).__name__}")
    return value


def _check_fields(obj: dict, allowed: set[str], element: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ElectionSchemaError(element, f"unknown field '{unknown[0]}'")
    missing = sorted(allowed - set(obj))
    if missing:
        raise ElectionSchemaError(element, f"missing required field '{missing[0]}'")


def _require_str(obj: dict, field: str, element: str) -> str:
    value = obj[field]
    if not isinstance(value, str):
        raise ElectionSchemaError(
            f"{element}.{field}", f"expected a string, got {type(value).__name__}"
        )
    return value


def _require_int(obj: dict, field: str, element: str) -> int:
    value = obj[field]
    # bool is an int subclass; it is not a legal count.
    if not isinstance(value, int) or isinstance(value, bool):
        raise ElectionSchemaError(
            f"{element}.{field}", f"expected an integer, got {type(value).__name__}"
        )
    return value


def _require_list(obj: dict, field: str, element: str) -> list:
    value = obj[field]
    if not isinstance(value, list):
        raise ElectionSchemaError(
            f"{element}.{field}", f"expected a list, got {type(value).__name__}"
        )
    return value


def parse_election_definition(document: str) -> ElectionDefinition:
    """Parse a JSON election document, rejecting anything off-schema."""
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ElectionSyntaxError(exc.msg, exc.lineno, exc.colno) from exc

    top = _require_object(raw, "election")
    _check_fields(top, _ELECTION_FIELDS, "election")
    election_id = _require_str(top, "election_id", "election")
    title = _require_str(top, "title", "election")

    contests: list[Contest] = []
    for i, raw_contest in enumerate(_require_list(top, "contests", "election")):
        element = f"contests[{i}]"
        obj = _require_object(raw_contest, element)
        _check_fields(obj, _CONTEST_FIELDS, element)
        contest_id = _require_str(obj, "contest_id", element)
        if contest_id:
            element = f"contest '{contest_id}'"

        candidates: list[Candidate] = []
        for j, raw_cand in enumerate(_require_list(obj, "candidates", element)):
            cand_element = f"{element}.candidates[{j}]"
            cand_obj = _require_object(raw_cand, cand_element)
            _check_fields(cand_obj, _CANDIDATE_FIELDS, cand_element)
            candidates.append(
                Candidate(
                    candidate_id=_require_str(cand_obj, "candidate_id", cand_element),
                    name=_require_str(cand_obj, "name", cand_element),
                )
            )

        contests.append(
            Contest(
                contest_id=contest_id,
                title=_require_str(obj, "title", element),
                vote_for=_require_int(obj, "vote_for", element),
                candidates=tuple(candidates),
            )
        )

    return ElectionDefinition(election_id=election_id, title=title, contests=tuple(contests))


def election_to_json_dict(definition: ElectionDefinition) -> dict:
    return {
        "election_id": definition.election_id,
        "title": definition.title,
        "contests": [
            {
                "contest_id": c.contest_id,
                "title": c.title,
                "vote_for": c.vote_for,
                "candidates": [
                    {"candidate_id": cand.candidate_id, "name": cand.name}
                    for cand in c.candidates
                ],
            }
            for c in definition.contests
        ],
    }


def serialize_election_definition(definition: ElectionDefinition) -> str:
    return json.dumps(election_to_json_dict(definition), indent=2) + "\n"


@dataclass(frozen=True)
class SelectionSet:
    """A voter's choices for one contest. Empty chosen set is an undervote."""

    contest_id: str
    chosen: frozenset[str]


class VerdictKind(Enum):
    VALID = "valid"
    OVERVOTE = "overvote"
    UNKNOWN_CONTEST = "unknown_contest"
    UNKNOWN_CANDIDATE = "unknown_candidate"


@dataclass(frozen=True)
class SelectionVerdict:
    kind: VerdictKind
    contest_id: str
    detail: str

    @property
    def ok(self) -> bool:
        return self.kind is VerdictKind.VALID

    def to_json_dict(self) -> dict:
        return {"kind": self.kind.value, "contest_id": self.contest_id, "detail": self.detail}


class InvalidSelectionError(ValueError):
    """Raised when constructing a selection that fails validation."""

    def __init__(self, verdict: SelectionVerdict):
        super().__init__(f"{verdict.kind.value}: {verdict.detail}")
        self.verdict = verdict


def validate_selection(
    definition: ElectionDefinition, selection: SelectionSet
) -> SelectionVerdict:
    """Classify a selection set as valid, overvote, or reference error."""
    cid = selection.contest_id
    if not definition.has_contest(cid):
        return SelectionVerdict(
            VerdictKind.UNKNOWN_CONTEST, cid, f"no contest '{cid}' in this election"
        )
    contest = definition.contest(cid)
    for candidate_id in sorted(selection.chosen):
        if not contest.has_candidate(candidate_id):
            return SelectionVerdict(
                VerdictKind.UNKNOWN_CANDIDATE,
                cid,
                f"no candidate '{candidate_id}' in contest '{cid}'",
            )
    if len(selection.chosen) > contest.vote_for:
        return SelectionVerdict(
            VerdictKind.OVERVOTE,
            cid,
            f"{len(selection.chosen)} selections exceed vote_for ({contest.vote_for})",
        )
    return SelectionVerdict(VerdictKind.VALID, cid, "ok")


def make_selection_set(
    definition: ElectionDefinition, contest_id: str, chosen: Iterable[str]
) -> SelectionSet:
    """Validating constructor; the only sanctioned way to build a SelectionSet."""
    selection = SelectionSet(contest_id=contest_id, chosen=frozenset(chosen))
    verdict = validate_selection(definition, selection)
    if not verdict.ok:
        raise InvalidSelectionError(verdict)
    return selection


def render_selection_text(contest: Contest, chosen: Iterable[str]) -> str:
    """Display text for a selection: names in ballot order, or the undervote marker."""
    chosen_set = set(chosen)
    names = [c.name for c in contest.candidates if c.candidate_id in chosen_set]
    return "; ".join(names) if names else NO_SELECTION_TEXT


def parse_selection_text(contest: Contest, text: str) -> frozenset[str]:
    """Inverse of render_selection_text, mapping printed names back to ids."""
    if text == NO_SELECTION_TEXT:
        return frozenset()
    by_name: dict[str, str | None] = {}
    for cand in contest.candidates:
        by_name[cand.name] = None if cand.name in by_name else cand.candidate_id
    chosen = []
    for name in text.split("; "):
        if name not in by_name:
            raise ValueError(
                f"unknown candidate name '{name}' in contest '{contest.contest_id}'"
            )
        candidate_id = by_name[name]
        if candidate_id is None:
            raise ValueError(
                f"candidate name '{name}' is ambiguous in contest '{contest.contest_id}'"
            )
        chosen.append(candidate_id)
    return frozenset(chosen)
