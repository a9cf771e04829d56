import pytest

from stvmsim.printer import (
    BallotFileError,
    Disposition,
    DuplicateContestLineError,
    IncompleteBallotError,
    LogFinalizedError,
    PaperBallot,
    PrintLog,
    PrintedLine,
    ballot_to_text,
    ballots_to_text,
    finalize_ballot,
    parse_ballots_text,
)


def test_append_assigns_increasing_seq():
    log = PrintLog().append("a", "x").append("b", "y").append("c", "z")
    assert [line.seq for line in log.lines] == [0, 1, 2]


def test_append_is_pure():
    log = PrintLog()
    log2 = log.append("a", "x")
    assert log.lines == ()
    assert len(log2.lines) == 1


def test_duplicate_contest_line_rejected():
    log = PrintLog().append("mayor", "Alice Stone")
    with pytest.raises(DuplicateContestLineError, match="mayor"):
        log.append("mayor", "Bo Vale")


def test_no_append_after_finalize(election):
    log = PrintLog().append("governor", "John Doe")
    finalized, _ = finalize_ballot(log, election, Disposition.SPOILED, "B-1")
    with pytest.raises(LogFinalizedError):
        finalized.append("agriculture-commissioner", "Casey Brook")


def test_double_finalize_rejected(election):
    log = PrintLog().append("governor", "John Doe")
    finalized, _ = finalize_ballot(log, election, Disposition.SPOILED, "B-1")
    with pytest.raises(LogFinalizedError):
        finalize_ballot(finalized, election, Disposition.SPOILED, "B-2")


def test_cast_requires_every_contest(election):
    log = PrintLog().append("governor", "John Doe")
    with pytest.raises(IncompleteBallotError) as exc:
        finalize_ballot(log, election, Disposition.CAST, "B-1")
    assert exc.value.missing == ("agriculture-commissioner",)


def test_spoil_accepts_partial_log(election):
    log = PrintLog()  # nothing printed at all
    _, ballot = finalize_ballot(log, election, Disposition.SPOILED, "B-1")
    assert ballot.disposition is Disposition.SPOILED
    assert ballot.lines == ()


def test_export_format(election):
    log = PrintLog().append("governor", "John Doe").append(
        "agriculture-commissioner", "no-selection"
    )
    _, ballot = finalize_ballot(log, election, Disposition.CAST, "B-77")
    text = ballot_to_text(ballot)
    assert text == (
        "BALLOT B-77 Cast\n"
        "governor: John Doe\n"
        "agriculture-commissioner: no-selection\n"
    )


def test_export_parse_round_trip(election):
    a = PaperBallot("B-1", (PrintedLine(0, "governor", "John Doe"),), Disposition.SPOILED)
    b = PaperBallot(
        "B-2",
        (
            PrintedLine(0, "governor", "David Rayne"),
            PrintedLine(1, "agriculture-commissioner", "Casey Brook"),
        ),
        Disposition.CAST,
    )
    parsed = parse_ballots_text(ballots_to_text([a, b]))
    assert parsed == [a, b]


def test_parse_skips_comments_and_blanks():
    text = "# seed=5\n\nBALLOT B-1 Cast\nmayor: Alice Stone\n"
    (ballot,) = parse_ballots_text(text)
    assert ballot.ballot_id == "B-1"
    assert ballot.lines[0].text == "Alice Stone"


def test_parse_rejects_bad_header():
    with pytest.raises(BallotFileError, match="line 1"):
        parse_ballots_text("BALLOT B-1 Burned\nmayor: A\n")


def test_parse_rejects_orphan_line():
    with pytest.raises(BallotFileError, match="line 1.*before any ballot header"):
        parse_ballots_text("mayor: Alice Stone\n")


def test_parse_rejects_unseparated_line():
    with pytest.raises(BallotFileError, match="line 2"):
        parse_ballots_text("BALLOT B-1 Cast\njustsomeText\n")
