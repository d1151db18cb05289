"""Wire messages shared by the line protocol and the HTTP service.

Every message is one JSON object with a ``type`` field. Enum-valued fields
carry canonical indexes (dialogue act 0..13, actions, H-O type, belief index
0..12). Unknown fields are rejected.
"""

from __future__ import annotations

import json
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError

from .domain import (
    Actor,
    BeliefState,
    DialogueAct,
    HapticOstensiveEvent,
    HelAction,
    HoType,
    Move,
    PointingEvent,
    TargetKind,
    TargetRef,
    WorldGoal,
)


class ProtocolError(ValueError):
    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Target(StrictModel):
    kind: Literal["Location", "Object"]
    identity: Optional[str] = None
    object_type: Optional[str] = None

    def to_ref(self) -> TargetRef:
        return TargetRef(TargetKind(self.kind), self.identity, self.object_type)

    @classmethod
    def from_ref(cls, ref: TargetRef) -> Target:
        return cls(kind=ref.kind.value, identity=ref.identity, object_type=ref.object_type)


class Pointing(StrictModel):
    target: Target


class HoEvent(StrictModel):
    target: Target
    ho_type: int = Field(ge=0, lt=len(HoType))


class Goal(StrictModel):
    object_type: str
    location: str
    object: str

    def to_goal(self) -> WorldGoal:
        return WorldGoal.make(self.object_type, self.location, self.object)

    @classmethod
    def from_goal(cls, g: WorldGoal) -> Goal:
        return cls(object_type=g.target_object_type, location=g.target_location, object=g.target_object.identity)


class ResetMsg(StrictModel):
    type: Literal["reset"] = "reset"
    seed: Optional[int] = None
    goal: Optional[Goal] = None


class HelMoveMsg(StrictModel):
    type: Literal["hel_move"] = "hel_move"
    da: int = Field(ge=0, lt=len(DialogueAct))
    action: int = Field(ge=0, lt=len(HelAction))
    pointing: Optional[Pointing] = None
    ho: Optional[HoEvent] = None
    mentioned: list[Target] = Field(default_factory=list)

    def to_move(self) -> Move:
        try:
            return Move.hel(
                DialogueAct(self.da),
                HelAction(self.action),
                pointing=PointingEvent(self.pointing.target.to_ref()) if self.pointing else None,
                ho=HapticOstensiveEvent(self.ho.target.to_ref(), HoType(self.ho.ho_type)) if self.ho else None,
                mentioned=tuple(t.to_ref() for t in self.mentioned),
            )
        except ValueError as e:
            raise ProtocolError("malformed_move", str(e)) from e

    @classmethod
    def from_move(cls, move: Move) -> HelMoveMsg:
        if move.actor is not Actor.HEL:
            raise ValueError("not a HEL move")
        return cls(
            da=int(move.da),
            action=int(move.hel_action),
            pointing=Pointing(target=Target.from_ref(move.pointing.target)) if move.pointing else None,
            ho=HoEvent(target=Target.from_ref(move.ho.target), ho_type=int(move.ho.ho_type)) if move.ho else None,
            mentioned=[Target.from_ref(t) for t in move.mentioned],
        )


class EldMoveMsg(StrictModel):
    type: Literal["eld_move"] = "eld_move"
    da: int
    action: int
    utteredOT: bool
    utteredL: bool
    belief: int
    turn: int
    reward: float = 0.0

    @classmethod
    def build(cls, move: Move, uttered: tuple[bool, bool], belief: BeliefState, turn: int, reward: float = 0.0):
        return cls(
            da=int(move.da),
            action=int(move.eld_action),
            utteredOT=uttered[0],
            utteredL=uttered[1],
            belief=belief.index,
            turn=turn,
            reward=reward,
        )


class EpisodeEndMsg(StrictModel):
    type: Literal["episode_end"] = "episode_end"
    outcome: Literal["Success", "Timeout", "Aborted"]
    totalReward: float
    turns: int
    last: Optional[EldMoveMsg] = None


class ErrorMsg(StrictModel):
    type: Literal["error"] = "error"
    code: str
    detail: str


Request = Annotated[Union[ResetMsg, HelMoveMsg], Field(discriminator="type")]
Response = Annotated[Union[EldMoveMsg, EpisodeEndMsg, ErrorMsg], Field(discriminator="type")]

_REQUEST = TypeAdapter(Request)
_RESPONSE = TypeAdapter(Response)
_REQUEST_TYPES = {"reset", "hel_move"}


def parse_request(line: str | bytes) -> ResetMsg | HelMoveMsg:
    try:
        data = json.loads(line)
    except (ValueError, UnicodeDecodeError) as e:
        raise ProtocolError("parse", f"not JSON: {e}") from e
    if not isinstance(data, dict):
        raise ProtocolError("parse", "a message must be a JSON object")
    if data.get("type") not in _REQUEST_TYPES:
        raise ProtocolError("unknown_type", f"unknown message type {data.get('type')!r}")
    try:
        return _REQUEST.validate_python(data)
    except ValidationError as e:
        code = "bad_goal" if data["type"] == "reset" else "malformed_move"
        raise ProtocolError(code, "; ".join(f"{'.'.join(map(str, x['loc']))}: {x['msg']}" for x in e.errors())) from e


def parse_response(line: str | bytes):
    return _RESPONSE.validate_json(line)


def dump(msg: BaseModel) -> str:
    """One compact line, keys in declaration order, no trailing newline."""
    return msg.model_dump_json(exclude_none=True)
