"""HTTP front end: the same sessions as the line protocol, one per id."""

from __future__ import annotations

import threading
import uuid
from typing import Optional, Union

from fastapi import FastAPI, HTTPException
from pydantic import Field

from . import __version__
from .domain import Actor, DialogueAct, EldAction, HelAction, belief_from_index
from .env import EnvConfig
from .features import FEATURE_SCHEMA_HASH, InteractionContext
from .protocol import EldMoveMsg, EpisodeEndMsg, Goal, HelMoveMsg, ProtocolError, StrictModel
from .server import Connection


class SessionCreate(StrictModel):
    seed: Optional[int] = None
    goal: Optional[Goal] = None


class SessionCreated(StrictModel):
    session_id: str
    opening: EldMoveMsg


class ContextIn(StrictModel):
    """A single interaction context, for stateless queries."""

    prev_actor: Optional[str] = Field(default=None, pattern="^(ELD|HEL)$")
    uttered_ot: bool
    uttered_l: bool
    prev_belief: int = Field(ge=0, lt=13)
    hel_action: int = Field(ge=0, lt=len(HelAction))
    hel_da: int = Field(ge=0, lt=len(DialogueAct))
    prev_eld_action: int = Field(default=0, ge=0, lt=len(EldAction))
    prev_eld_da: int = Field(default=0, ge=0, lt=len(DialogueAct))
    goal: Goal
    hel_move: Optional[HelMoveMsg] = None

    def to_context(self) -> InteractionContext:
        move = self.hel_move.to_move() if self.hel_move else None
        return InteractionContext(
            prev_actor=Actor(self.prev_actor) if self.prev_actor else None,
            uttered_ot=self.uttered_ot,
            uttered_l=self.uttered_l,
            prev_belief=belief_from_index(self.prev_belief),
            hel_action=HelAction(self.hel_action),
            hel_da=DialogueAct(self.hel_da),
            prev_eld_action=EldAction(self.prev_eld_action),
            prev_eld_da=DialogueAct(self.prev_eld_da),
            goal=self.goal.to_goal(),
            hel_pointing=move.pointing if move else None,
            hel_ho=move.ho if move else None,
            hel_mentions=move.mentioned if move else (),
        )


class EldOut(StrictModel):
    da: int
    action: int
    belief: int


def _raise(e: ProtocolError):
    status = {"no_session": 404, "session_done": 409}.get(e.code, 422)
    raise HTTPException(status_code=status, detail={"code": e.code, "detail": e.detail})


def create_app(make_policy, cfg: EnvConfig | None = None) -> FastAPI:
    cfg = cfg or EnvConfig()
    app = FastAPI(title="musim", version=__version__)
    sessions: dict[str, Connection] = {}
    locks: dict[str, threading.Lock] = {}
    registry_lock = threading.Lock()
    shared = make_policy()

    def lookup(session_id: str) -> tuple[Connection, threading.Lock]:
        with registry_lock:
            if session_id not in sessions:
                raise HTTPException(status_code=404, detail={"code": "no_session", "detail": session_id})
            return sessions[session_id], locks[session_id]

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__, "feature_schema": FEATURE_SCHEMA_HASH, "sessions": len(sessions)}

    @app.post("/sessions", response_model=SessionCreated)
    def create_session(body: SessionCreate):
        conn = Connection(make_policy(), cfg)
        try:
            goal = body.goal.to_goal() if body.goal else None
        except ValueError as e:
            raise HTTPException(status_code=422, detail={"code": "bad_goal", "detail": str(e)}) from e
        move = conn.session.reset(goal, body.seed)
        conn.started = True
        sid = uuid.uuid4().hex
        with registry_lock:
            sessions[sid] = conn
            locks[sid] = threading.Lock()
        s = conn.session
        return SessionCreated(session_id=sid, opening=EldMoveMsg.build(move, s.uttered, s.belief, s.turn))

    @app.post("/sessions/{session_id}/step", response_model=Union[EpisodeEndMsg, EldMoveMsg])
    def step(session_id: str, body: HelMoveMsg):
        conn, lock = lookup(session_id)
        with lock:
            try:
                return conn.dispatch(body)
            except ProtocolError as e:
                _raise(e)

    @app.delete("/sessions/{session_id}")
    def close(session_id: str):
        conn, lock = lookup(session_id)
        with lock:
            conn.close()
        with registry_lock:
            sessions.pop(session_id, None)
            locks.pop(session_id, None)
        return {"session_id": session_id, "outcome": conn.session.outcome}

    @app.post("/respond", response_model=EldOut)
    def respond(body: ContextIn):
        try:
            move, nb = shared.respond(body.to_context())
        except ProtocolError as e:
            _raise(e)
        except ValueError as e:
            raise HTTPException(status_code=422, detail={"code": "malformed_move", "detail": str(e)}) from e
        return EldOut(da=int(move.da), action=int(move.eld_action), belief=nb.index)

    return app
