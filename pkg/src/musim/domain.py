"""Taxonomies shared by every part of the simulator, plus the ELD belief heuristic.

Enum member order is part of the file formats: the integer value of each
member is the index used in feature vectors, corpus files and wire messages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum


class InvalidBelief(ValueError):
    pass


class MatchUndecidable(ValueError):
    pass


class Actor(str, Enum):
    ELD = "ELD"
    HEL = "HEL"


class DialogueAct(IntEnum):
    NoUtterance = 0
    Instruct = 1
    Acknowledge = 2
    QueryW = 3
    QueryYn = 4
    ReplyW = 5
    ReplyY = 6
    ReplyN = 7
    Check = 8
    Explain = 9
    Align = 10
    StateY = 11
    StateN = 12
    State = 13


class EldAction(IntEnum):
    NoAction = 0
    GiveOT = 1
    GiveL = 2
    GiveOTL = 3
    Acknowledge = 4
    Yes = 5
    No = 6


class HelAction(IntEnum):
    NoAction = 0
    RequestOT = 1
    RequestL = 2
    VerifyOT = 3
    VerifyL = 4
    VerifyO = 5
    Acknowledge = 6
    Yes = 7
    No = 8


class HoType(IntEnum):
    OpenLocation = 0
    CloseLocation = 1
    Touch = 2
    TakeOutObject = 3
    HoldObject = 4


class TargetKind(str, Enum):
    Location = "Location"
    Object = "Object"


class MatchStatus(IntEnum):
    """Relation of a referenced entity to the trial goal."""

    Correct = 0
    Wrong = 1
    RightTypeWrongInstance = 2


@dataclass(frozen=True)
class BeliefState:
    """ELD's belief about what HEL knows of (object type, location, object).

    Each component is 0 (HEL does not know it), 1 (HEL knows it) or
    2 (HEL has the wrong one in mind).
    """

    ot: int
    loc: int
    obj: int

    def __post_init__(self):
        if (self.ot, self.loc, self.obj) not in _BELIEF_INDEX:
            raise InvalidBelief(_belief_violation(self.ot, self.loc, self.obj))

    @property
    def index(self) -> int:
        return _BELIEF_INDEX[(self.ot, self.loc, self.obj)]

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.ot, self.loc, self.obj)

    def __str__(self) -> str:
        return f"({self.ot},{self.loc},{self.obj})"


VALID_BELIEF_TRIPLES: tuple[tuple[int, int, int], ...] = (
    (0, 0, 0),
    (0, 1, 0),
    (0, 2, 0),
    (1, 0, 0),
    (1, 0, 1),
    (1, 0, 2),
    (1, 1, 0),
    (1, 1, 1),
    (1, 1, 2),
    (1, 2, 0),
    (2, 0, 0),
    (2, 1, 0),
    (2, 2, 0),
)
_BELIEF_INDEX = {t: i for i, t in enumerate(VALID_BELIEF_TRIPLES)}


def _belief_violation(ot: int, loc: int, obj: int) -> str:
    if any(c not in (0, 1, 2) for c in (ot, loc, obj)):
        return f"components of {(ot, loc, obj)} must each be 0, 1 or 2"
    if obj != 0 and ot != 1:
        return f"{(ot, loc, obj)}: object knowledge requires ot=1"
    return f"{(ot, loc, obj)}: object knowledge is impossible while the location is wrong"


def validate_belief(ot: int, loc: int, obj: int) -> BeliefState:
    return BeliefState(ot, loc, obj)


def belief_index(b: BeliefState) -> int:
    return b.index


def belief_from_index(i: int) -> BeliefState:
    if not 0 <= i < len(VALID_BELIEF_TRIPLES):
        raise InvalidBelief(f"belief index {i} outside 0..12")
    return BeliefState(*VALID_BELIEF_TRIPLES[i])


ALL_BELIEFS: tuple[BeliefState, ...] = tuple(BeliefState(*t) for t in VALID_BELIEF_TRIPLES)
INITIAL_BELIEF = ALL_BELIEFS[0]
FOUND_BELIEF = BeliefState(1, 1, 1)


@dataclass(frozen=True)
class TargetRef:
    """A location or object that a gesture, H-O action or utterance refers to.

    ``identity`` may be None only for an Object reference that names a type
    without a specific instance ("a bowl").
    """

    kind: TargetKind
    identity: str | None
    object_type: str | None = None

    def __post_init__(self):
        if self.kind is TargetKind.Object and not self.object_type:
            raise ValueError("object references must carry an object type")
        if self.kind is TargetKind.Location and not self.identity:
            raise ValueError("location references must carry an identity")

    @classmethod
    def location(cls, name: str) -> TargetRef:
        return cls(TargetKind.Location, name)

    @classmethod
    def obj(cls, identity: str | None, object_type: str) -> TargetRef:
        return cls(TargetKind.Object, identity, object_type)


@dataclass(frozen=True)
class PointingEvent:
    target: TargetRef


_HO_KINDS = {
    HoType.OpenLocation: {TargetKind.Location},
    HoType.CloseLocation: {TargetKind.Location},
    HoType.Touch: {TargetKind.Location, TargetKind.Object},
    HoType.TakeOutObject: {TargetKind.Object},
    HoType.HoldObject: {TargetKind.Object},
}


def ho_allows(ho_type: HoType, kind: TargetKind) -> bool:
    return kind in _HO_KINDS[ho_type]


@dataclass(frozen=True)
class HapticOstensiveEvent:
    target: TargetRef
    ho_type: HoType

    def __post_init__(self):
        if not ho_allows(self.ho_type, self.target.kind):
            raise ValueError(f"{self.ho_type.name} cannot be applied to a {self.target.kind.value}")


@dataclass(frozen=True)
class WorldGoal:
    target_object_type: str
    target_location: str
    target_object: TargetRef

    def __post_init__(self):
        if self.target_object.kind is not TargetKind.Object or not self.target_object.identity:
            raise ValueError("the goal object must be a concrete object reference")
        if self.target_object.object_type != self.target_object_type:
            raise ValueError("goal object type disagrees with the goal object's type")

    @classmethod
    def make(cls, object_type: str, location: str, obj: str) -> WorldGoal:
        return cls(object_type, location, TargetRef.obj(obj, object_type))


def match_target(target: TargetRef, goal: WorldGoal) -> MatchStatus:
    """Match a concrete referenced entity against the goal."""
    if target.kind is TargetKind.Location:
        return MatchStatus.Correct if target.identity == goal.target_location else MatchStatus.Wrong
    if target.identity is None:
        raise MatchUndecidable(f"object reference of type {target.object_type!r} names no instance")
    if target.identity == goal.target_object.identity:
        if target.object_type != goal.target_object_type:
            raise MatchUndecidable(
                f"object {target.identity!r} has type {target.object_type!r} but the goal says "
                f"{goal.target_object_type!r}"
            )
        return MatchStatus.Correct
    if target.object_type == goal.target_object_type:
        return MatchStatus.RightTypeWrongInstance
    return MatchStatus.Wrong


@dataclass(frozen=True)
class Move:
    actor: Actor
    da: DialogueAct
    eld_action: EldAction | None = None
    hel_action: HelAction | None = None
    pointing: PointingEvent | None = None
    ho: HapticOstensiveEvent | None = None
    uttered_ot: bool = False
    uttered_l: bool = False
    mentioned: tuple[TargetRef, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.actor is Actor.ELD:
            if self.eld_action is None or self.hel_action is not None:
                raise ValueError("an ELD move carries an ELD action and no HEL action")
        elif self.hel_action is None or self.eld_action is not None:
            raise ValueError("a HEL move carries a HEL action and no ELD action")
        if self.da is DialogueAct.NoUtterance and (self.uttered_ot or self.uttered_l):
            raise ValueError("nothing can be uttered without an utterance")

    @classmethod
    def hel(
        cls,
        da: DialogueAct,
        action: HelAction,
        pointing: PointingEvent | None = None,
        ho: HapticOstensiveEvent | None = None,
        mentioned: tuple[TargetRef, ...] = (),
    ) -> Move:
        spoken = da is not DialogueAct.NoUtterance
        return cls(
            Actor.HEL,
            da,
            hel_action=action,
            pointing=pointing,
            ho=ho,
            uttered_ot=spoken and any(t.kind is TargetKind.Object for t in mentioned),
            uttered_l=spoken and any(t.kind is TargetKind.Location for t in mentioned),
            mentioned=tuple(mentioned),
        )

    @classmethod
    def eld(cls, da: DialogueAct, action: EldAction) -> Move:
        ot, loc = gives(action)
        return cls(Actor.ELD, da, eld_action=action, uttered_ot=ot, uttered_l=loc)

    @property
    def is_pass(self) -> bool:
        return self.da is DialogueAct.NoUtterance and self.action_index == 0

    @property
    def action_index(self) -> int:
        return int(self.eld_action if self.actor is Actor.ELD else self.hel_action)


def gives(action: EldAction) -> tuple[bool, bool]:
    """Which entities (object type, location) an ELD action names."""
    return (
        action in (EldAction.GiveOT, EldAction.GiveOTL),
        action in (EldAction.GiveL, EldAction.GiveOTL),
    )


def give_action(ot: bool, loc: bool) -> EldAction:
    if ot and loc:
        return EldAction.GiveOTL
    if ot:
        return EldAction.GiveOT
    if loc:
        return EldAction.GiveL
    return EldAction.NoAction


# -- belief heuristic --------------------------------------------------------

_CORRECT, _WRONG = 1, 2


def _merge(current: int | None, new: int) -> int:
    # Contradictory evidence inside one move resolves to "wrong".
    return new if current is None else max(current, new)


def _evidence(move: Move, goal: WorldGoal) -> tuple[int | None, int | None, int | None]:
    ot = loc = obj = None
    refs = list(move.mentioned)
    if move.pointing is not None:
        refs.append(move.pointing.target)
    if move.ho is not None:
        refs.append(move.ho.target)
    for ref in refs:
        if ref.kind is TargetKind.Location:
            loc = _merge(loc, _CORRECT if ref.identity == goal.target_location else _WRONG)
            continue
        type_ok = ref.object_type == goal.target_object_type
        ot = _merge(ot, _CORRECT if type_ok else _WRONG)
        if ref.identity is not None and type_ok:
            obj = _merge(obj, _CORRECT if ref.identity == goal.target_object.identity else _WRONG)

    # Verifying or acknowledging without naming anything refers to what ELD said.
    act = move.hel_action
    if act is HelAction.VerifyOT and ot is None:
        ot = _CORRECT
    elif act is HelAction.VerifyL and loc is None:
        loc = _CORRECT
    elif act is HelAction.VerifyO and obj is None and ot is None:
        obj = _CORRECT
    elif act is HelAction.Acknowledge or (act is HelAction.NoAction and move.da is DialogueAct.Acknowledge):
        ot = _CORRECT if ot is None else ot
        loc = _CORRECT if loc is None else loc
    return ot, loc, obj


def _apply(current: int, evidence: int | None, uttered: bool) -> int:
    if current == 0 and not uttered:
        return 0
    return current if evidence is None else evidence


def belief_update(
    current: BeliefState,
    hel_move: Move,
    goal: WorldGoal,
    uttered_so_far: tuple[bool, bool],
) -> BeliefState:
    """ELD's belief after observing one HEL move.

    ``uttered_so_far`` tells whether ELD has already named the object type and
    the location in this trial; a component cannot leave 0 before that.
    Requests for an entity are taken as HEL showing it does not know it.
    """
    if hel_move.actor is not Actor.HEL:
        raise ValueError("belief_update takes HEL moves only")
    uttered_ot, uttered_l = uttered_so_far
    ev_ot, ev_loc, ev_obj = _evidence(hel_move, goal)

    ot = _apply(current.ot, ev_ot, uttered_ot)
    loc = _apply(current.loc, ev_loc, uttered_l)
    if hel_move.hel_action is HelAction.RequestOT:
        ot = 0
    elif hel_move.hel_action is HelAction.RequestL:
        loc = 0

    if ot != 1 or loc == 2:
        obj = 0
    else:
        obj = current.obj if ev_obj is None else ev_obj
    return BeliefState(ot, loc, obj)
