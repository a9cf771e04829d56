"""HTTP front end for interactive voting sessions.

One service instance owns one machine and any number of sessions on it.
The API is a thin shell over the session engine: every request runs the
same methods a library caller would, so an API-driven session leaves the
identical event trace. Phase rules are enforced by the engine and surface
as status codes: 409 for an action the current phase forbids, 422 for a
rejected selection (overvote and friends, with the verdict in the body),
404 for an unknown session.

Events stream at GET /events either as server-sent events (when the client
accepts text/event-stream) or as long-poll JSON with an `after` cursor.
Print animation is event-driven: the service emits print_started, chunked
print_progress, and line_complete for every line, and the client paces the
reveal however it likes.

The server is meant to bind loopback; it trusts its caller and holds no
authentication. Anything else would be out of character for a machine
whose whole point is having no network.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path
from typing import Any, Iterator

from fastapi import Body, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, PlainTextResponse, RedirectResponse, StreamingResponse

from .ballot import ElectionDefinition, election_to_json_dict, render_selection_text
from .machine import (
    Machine,
    Payload,
    bmd_config,
    build_base_image,
    make_machine_state,
    payload_from_json_dict,
    stvm_config,
)
from .printer import PaperBallot, ballots_to_text
from .seeds import derive_seed
from .session import (
    MachineUnavailableError,
    OvervoteRejectedError,
    PhaseKind,
    SessionPhaseError,
    UnknownCandidateError,
    VoterProfile,
    VotingSession,
    WrongContestError,
    format_trace,
)

_PRINT_CHUNK = 6
_DEFAULT_P_DETECT = 0.77


class ServiceState:
    def __init__(self, election: ElectionDefinition, machine: Machine, seed: int):
        self.election = election
        self.machine = machine
        self.seed = seed
        self.lock = threading.RLock()
        self.sessions: dict[str, VotingSession] = {}
        self.session_counter = 0
        self.ballots: list[PaperBallot] = []
        self.events: list[dict] = []
        self.event_cond = threading.Condition(self.lock)

    def emit(self, kind: str, **data: Any) -> None:
        with self.event_cond:
            self.events.append({"id": len(self.events), "kind": kind, **data})
            self.event_cond.notify_all()

    def events_after(self, after: int) -> list[dict]:
        with self.lock:
            return [ev for ev in self.events if ev["id"] > after]


def _phase_json(session: VotingSession) -> dict:
    return {"kind": session.phase.kind.value, "contest_index": session.phase.contest_index}


def _session_view(sid: str, session: VotingSession) -> dict:
    election = session.election
    contest_view = None
    review_view = None
    index = session.phase.contest_index
    if index is not None:
        contest = election.contests[index]
        contest_view = {
            "contest_id": contest.contest_id,
            "title": contest.title,
            "vote_for": contest.vote_for,
            "candidates": [
                {"candidate_id": c.candidate_id, "name": c.name} for c in contest.candidates
            ],
        }
        if session.phase.kind is PhaseKind.AWAITING_CONFIRMATION:
            review_view = {
                "contest_id": contest.contest_id,
                "intent_text": session.rendered_intent(index),
                "printed_text": session.printed_text(index),
            }
    ballot = session.ballot
    return {
        "session_id": sid,
        "phase": _phase_json(session),
        "phase_label": session.phase.label(),
        "contest_count": len(election.contests),
        "contest": contest_view,
        "review": review_view,
        "intent": {
            c.contest_id: sorted(session.intent_for(c.contest_id)) for c in election.contests
        },
        "intent_text": {
            c.contest_id: render_selection_text(c, session.intent_for(c.contest_id))
            for c in election.contests
        },
        "lines": [
            {"seq": line.seq, "contest_id": line.contest_id, "text": line.text}
            for line in session.log.lines
        ],
        "manual_detection": session.manual_detection,
        "ballot": (
            {"ballot_id": ballot.ballot_id, "disposition": ballot.disposition.value}
            if ballot
            else None
        ),
    }


def _make_machine(kind: str, election: ElectionDefinition) -> Machine:
    image = build_base_image(f"{election.election_id}-disc")
    config = stvm_config() if kind == "stvm" else bmd_config()
    machine = Machine(make_machine_state(config, image))
    machine.boot()
    return machine


def create_app(
    election: ElectionDefinition,
    machine: str = "stvm",
    seed: int = 0,
    ui_dir: Path | None = None,
) -> FastAPI:
    if machine not in ("stvm", "bmd"):
        raise ValueError(f"machine must be 'stvm' or 'bmd', got {machine!r}")
    state = ServiceState(election, _make_machine(machine, election), seed)
    app = FastAPI(title="stvmsim", docs_url=None, redoc_url=None)
    app.state.service = state

    @app.exception_handler(SessionPhaseError)
    def _phase_error(_req: Request, exc: SessionPhaseError) -> JSONResponse:
        return JSONResponse(
            status_code=409,
            content={
                "error": str(exc),
                "phase": {"kind": exc.phase.kind.value, "contest_index": exc.phase.contest_index},
            },
        )

    @app.exception_handler(MachineUnavailableError)
    def _machine_error(_req: Request, exc: MachineUnavailableError) -> JSONResponse:
        return JSONResponse(status_code=409, content={"error": str(exc), "phase": None})

    @app.exception_handler(OvervoteRejectedError)
    def _overvote(_req: Request, exc: OvervoteRejectedError) -> JSONResponse:
        return JSONResponse(
            status_code=422,
            content={"error": str(exc), "verdict": exc.verdict.to_json_dict()},
        )

    @app.exception_handler(WrongContestError)
    @app.exception_handler(UnknownCandidateError)
    def _selection_error(_req: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=422, content={"error": str(exc)})

    def _session_or_404(sid: str) -> VotingSession:
        session = state.sessions.get(sid)
        if session is None:
            raise HTTPException(status_code=404, detail=f"no session '{sid}'")
        return session

    def _emit_phase(sid: str, session: VotingSession) -> None:
        state.emit(
            "phase_changed",
            session_id=sid,
            phase=_phase_json(session),
            phase_label=session.phase.label(),
        )

    def _emit_print(sid: str, session: VotingSession) -> None:
        line = session.log.lines[-1]
        state.emit(
            "print_started", session_id=sid, seq=line.seq, contest_id=line.contest_id
        )
        for end in range(_PRINT_CHUNK, len(line.text) + _PRINT_CHUNK, _PRINT_CHUNK):
            state.emit(
                "print_progress",
                session_id=sid,
                seq=line.seq,
                text_so_far=line.text[:end],
            )
        state.emit(
            "line_complete",
            session_id=sid,
            seq=line.seq,
            contest_id=line.contest_id,
            text=line.text,
        )

    def _finalized(sid: str, session: VotingSession) -> None:
        assert session.ballot is not None
        state.ballots.append(session.ballot)
        state.emit(
            "ballot_finalized",
            session_id=sid,
            ballot_id=session.ballot.ballot_id,
            disposition=session.ballot.disposition.value,
        )

    # -- session lifecycle --------------------------------------------------

    @app.post("/session")
    def create_session(body: dict | None = Body(None)) -> dict:
        body = body or {}
        unknown = sorted(set(body) - {"p_detect", "seed", "manual_detection"})
        if unknown:
            raise HTTPException(status_code=422, detail=f"unknown field '{unknown[0]}'")
        p_detect = body.get("p_detect", _DEFAULT_P_DETECT)
        if not isinstance(p_detect, (int, float)) or isinstance(p_detect, bool):
            raise HTTPException(status_code=422, detail="p_detect must be a number")
        manual = body.get("manual_detection", False)
        if not isinstance(manual, bool):
            raise HTTPException(status_code=422, detail="manual_detection must be a boolean")
        with state.lock:
            state.session_counter += 1
            sid = f"s{state.session_counter}"
            session_seed = body.get("seed")
            if session_seed is None:
                session_seed = derive_seed(state.seed, "session", state.session_counter)
            elif not isinstance(session_seed, int) or isinstance(session_seed, bool):
                raise HTTPException(status_code=422, detail="seed must be an integer")
            try:
                profile = VoterProfile(p_detect=float(p_detect))
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            session = VotingSession(
                state.election,
                state.machine,
                profile,
                seed=session_seed,
                manual_detection=manual,
            )
            state.sessions[sid] = session
            state.emit("session_started", session_id=sid)
            _emit_phase(sid, session)
            return _session_view(sid, session)

    @app.get("/session/{sid}")
    def get_session(sid: str) -> dict:
        with state.lock:
            return _session_view(sid, _session_or_404(sid))

    @app.get("/session/{sid}/trace")
    def get_trace(sid: str) -> PlainTextResponse:
        with state.lock:
            return PlainTextResponse(format_trace(_session_or_404(sid).events))

    @app.post("/session/{sid}/selection")
    def post_selection(sid: str, body: dict = Body(...)) -> dict:
        with state.lock:
            session = _session_or_404(sid)
            contest_id = body.get("contest_id")
            candidate_id = body.get("candidate_id")
            if not isinstance(contest_id, str) or not isinstance(candidate_id, str):
                raise HTTPException(
                    status_code=422, detail="contest_id and candidate_id are required strings"
                )
            session.make_selection(contest_id, candidate_id)
            state.emit(
                "selection_changed",
                session_id=sid,
                contest_id=contest_id,
                selected=sorted(session.intent_for(contest_id)),
            )
            return _session_view(sid, session)

    @app.post("/session/{sid}/print")
    def post_print(sid: str) -> dict:
        with state.lock:
            session = _session_or_404(sid)
            session.request_print()
            _emit_print(sid, session)
            _emit_phase(sid, session)
            return _session_view(sid, session)

    @app.post("/session/{sid}/skip")
    def post_skip(sid: str) -> dict:
        with state.lock:
            session = _session_or_404(sid)
            session.skip_contest()
            _emit_print(sid, session)
            _emit_phase(sid, session)
            return _session_view(sid, session)

    @app.post("/session/{sid}/confirm")
    def post_confirm(sid: str, body: dict | None = Body(None)) -> dict:
        with state.lock:
            session = _session_or_404(sid)
            noticed = (body or {}).get("noticed")
            if noticed is not None and not isinstance(noticed, bool):
                raise HTTPException(status_code=422, detail="noticed must be a boolean")
            try:
                session.confirm_printed(noticed=noticed)
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            if session.phase.kind is PhaseKind.ALERT_RAISED:
                state.emit("alert_raised", session_id=sid)
            _emit_phase(sid, session)
            return _session_view(sid, session)

    @app.post("/session/{sid}/cast")
    def post_cast(sid: str) -> dict:
        with state.lock:
            session = _session_or_404(sid)
            session.cast_ballot()
            _finalized(sid, session)
            _emit_phase(sid, session)
            return _session_view(sid, session)

    @app.post("/session/{sid}/spoil")
    def post_spoil(sid: str) -> dict:
        with state.lock:
            session = _session_or_404(sid)
            session.spoil_ballot()
            _finalized(sid, session)
            _emit_phase(sid, session)
            return _session_view(sid, session)

    # -- machine ------------------------------------------------------------

    @app.get("/machine")
    def get_machine() -> dict:
        with state.lock:
            m = state.machine
            return {
                "machine_kind": m.state.config.machine_kind.value,
                "powered": m.powered,
                "boot_epoch": m.boot_epoch,
                "image_id": m.state.boot_image.image_id,
                "active_payload_ids": [p.payload_id for p in m.active_software],
                "attached_media": sorted(m.state.attached_media),
            }

    @app.post("/machine/inject")
    def post_inject(body: dict = Body(...)) -> dict:
        with state.lock:
            raw = body.get("payload")
            if raw is None:
                raise HTTPException(status_code=422, detail="payload is required")
            leave_attached = body.get("leave_attached", False)
            if not isinstance(leave_attached, bool):
                raise HTTPException(status_code=422, detail="leave_attached must be a boolean")
            try:
                payload: Payload = payload_from_json_dict(raw)
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            state.machine.attach_media("usb-inject")
            state.machine.install_payload(payload, "usb-inject")
            if not leave_attached:
                state.machine.detach_media("usb-inject")
            state.emit(
                "payload_injected",
                payload_id=payload.payload_id,
                active_payload_ids=[p.payload_id for p in state.machine.active_software],
            )
            return get_machine()

    @app.post("/machine/reboot")
    def post_reboot() -> dict:
        with state.lock:
            # A power cycle ends every live session; partial paper is kept.
            for sid, session in state.sessions.items():
                if not session.phase.terminal:
                    session.spoil_ballot()
                    _finalized(sid, session)
                    _emit_phase(sid, session)
            state.machine.reboot()
            state.emit(
                "machine_rebooted",
                boot_epoch=state.machine.boot_epoch,
                active_payload_ids=[p.payload_id for p in state.machine.active_software],
            )
            return get_machine()

    # -- paper trail and metadata --------------------------------------------

    @app.get("/ballots")
    def get_ballots() -> PlainTextResponse:
        with state.lock:
            return PlainTextResponse(ballots_to_text(state.ballots))

    @app.get("/election")
    def get_election() -> dict:
        return election_to_json_dict(state.election)

    # -- events ---------------------------------------------------------------

    def _sse_stream(after: int, duration: float) -> Iterator[str]:
        # A positive duration ends the stream after that many seconds; an
        # EventSource client reconnects with its Last-Event-ID cursor, so
        # bounded connections are invisible to it and keep tests finite.
        cursor = after
        started = time.monotonic()
        last_beat = started
        while duration <= 0.0 or time.monotonic() - started < duration:
            batch = state.events_after(cursor)
            if batch:
                for ev in batch:
                    cursor = ev["id"]
                    yield f"id: {ev['id']}\nevent: {ev['kind']}\ndata: {json.dumps(ev)}\n\n"
                last_beat = time.monotonic()
            else:
                if time.monotonic() - last_beat > 15.0:
                    yield ": keep-alive\n\n"
                    last_beat = time.monotonic()
                time.sleep(0.05)

    @app.get("/events")
    def get_events(
        request: Request, after: int = -1, wait: float = 0.0, duration: float = 0.0
    ) -> Any:
        accepts = request.headers.get("accept", "")
        if "text/event-stream" in accepts:
            return StreamingResponse(
                _sse_stream(after, duration),
                media_type="text/event-stream",
                headers={"cache-control": "no-cache"},
            )
        deadline = time.monotonic() + min(wait, 30.0)
        with state.event_cond:
            batch = [ev for ev in state.events if ev["id"] > after]
            while not batch and time.monotonic() < deadline:
                state.event_cond.wait(timeout=deadline - time.monotonic())
                batch = [ev for ev in state.events if ev["id"] > after]
        next_after = batch[-1]["id"] if batch else after
        return {"events": batch, "next_after": next_after}

    @app.get("/")
    def root() -> Any:
        if ui_dir is not None:
            return RedirectResponse(url="/ui/")
        return {"service": "stvmsim", "election_id": state.election.election_id}

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
