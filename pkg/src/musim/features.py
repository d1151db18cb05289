"""Fixed-width binary encoding of the interaction context.

Layout (76 columns, in order)::

    prev_actor(2) | uttered_ot(1) | uttered_l(1) | prev_belief(13) | pointing(5)
    | ho(10) | hel_action(9) | hel_da(14) | prev_eld_action(7) | prev_eld_da(14)

Pointing columns: [location, object, correct, wrong, right-type-wrong-instance].
The H-O block repeats those five columns and appends a one-hot over HoType.
Goal and target identities are not encoded, only their match status.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .domain import (
    Actor,
    BeliefState,
    DialogueAct,
    EldAction,
    HapticOstensiveEvent,
    HelAction,
    HoType,
    MatchStatus,
    Move,
    PointingEvent,
    TargetKind,
    TargetRef,
    WorldGoal,
    belief_from_index,
    match_target,
)

FEATURE_BLOCKS: tuple[tuple[str, int], ...] = (
    ("prev_actor", 2),
    ("uttered_ot", 1),
    ("uttered_l", 1),
    ("prev_belief", 13),
    ("pointing", 5),
    ("ho", 10),
    ("hel_action", 9),
    ("hel_da", 14),
    ("prev_eld_action", 7),
    ("prev_eld_da", 14),
)
INPUT_DIM = sum(width for _, width in FEATURE_BLOCKS)
assert INPUT_DIM == 76

BLOCK_SLICES: dict[str, slice] = {}
_start = 0
for _name, _width in FEATURE_BLOCKS:
    BLOCK_SLICES[_name] = slice(_start, _start + _width)
    _start += _width

FEATURE_SCHEMA = "musim-features/1:" + "|".join(f"{n}:{w}" for n, w in FEATURE_BLOCKS)
FEATURE_SCHEMA_HASH = hashlib.sha256(FEATURE_SCHEMA.encode()).hexdigest()[:16]

HEAD_SIZES = (len(EldAction), len(DialogueAct), 13)


class MalformedVector(ValueError):
    def __init__(self, block: str, reason: str):
        super().__init__(f"{block}: {reason}")
        self.block = block
        self.reason = reason


class InvalidContext(ValueError):
    pass


@dataclass(frozen=True)
class InteractionContext:
    """Everything ELD can condition on when HEL has just moved.

    ``uttered_ot``/``uttered_l`` say whether ELD has named the object type or
    location earlier in the trial. ``hel_mentions`` is what HEL's utterance
    names; it drives the belief heuristic but is not part of the encoding.
    """

    prev_actor: Actor | None
    uttered_ot: bool
    uttered_l: bool
    prev_belief: BeliefState
    hel_action: HelAction
    hel_da: DialogueAct
    prev_eld_action: EldAction
    prev_eld_da: DialogueAct
    goal: WorldGoal
    hel_pointing: PointingEvent | None = None
    hel_ho: HapticOstensiveEvent | None = None
    hel_mentions: tuple[TargetRef, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.prev_actor is None and (
            self.prev_eld_action is not EldAction.NoAction or self.prev_eld_da is not DialogueAct.NoUtterance
        ):
            raise InvalidContext("a trial-start context has no previous ELD move")

    def hel_move(self) -> Move:
        return Move.hel(self.hel_da, self.hel_action, self.hel_pointing, self.hel_ho, self.hel_mentions)

    @property
    def uttered(self) -> tuple[bool, bool]:
        return (self.uttered_ot, self.uttered_l)


@dataclass(frozen=True)
class TargetLabels:
    eld_action: int
    eld_da: int
    next_belief: int

    def __post_init__(self):
        if not 0 <= self.eld_action < 7 or not 0 <= self.eld_da < 14 or not 0 <= self.next_belief < 13:
            raise ValueError(f"label out of range: {self}")

    @property
    def coherent(self) -> bool:
        """NoAction and NoUtterance occur together (ELD either moves or passes)."""
        return (self.eld_action == 0) == (self.eld_da == 0)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.eld_action, self.eld_da, self.next_belief)


@dataclass(frozen=True)
class EventSummary:
    kind: TargetKind
    status: MatchStatus
    ho_type: HoType | None = None


@dataclass(frozen=True)
class ContextSummary:
    """The categorical content that survives encoding."""

    prev_actor: Actor | None
    uttered_ot: bool
    uttered_l: bool
    prev_belief: BeliefState
    pointing: EventSummary | None
    ho: EventSummary | None
    hel_action: HelAction
    hel_da: DialogueAct
    prev_eld_action: EldAction
    prev_eld_da: DialogueAct


def _one_hot(i: int, n: int) -> list[float]:
    v = [0.0] * n
    v[i] = 1.0
    return v


def encode_prev_actor(prev_actor: Actor | None) -> list[float]:
    if prev_actor is None:
        return [0.0, 0.0]
    return [1.0, 0.0] if prev_actor is Actor.ELD else [0.0, 1.0]


def _target_columns(target: TargetRef, goal: WorldGoal) -> list[float]:
    status = match_target(target, goal)
    v = [0.0] * 5
    v[0 if target.kind is TargetKind.Location else 1] = 1.0
    v[2 + int(status)] = 1.0
    return v


def encode_pointing(event: PointingEvent | None, goal: WorldGoal) -> list[float]:
    if event is None:
        return [0.0] * 5
    return _target_columns(event.target, goal)


def encode_ho(event: HapticOstensiveEvent | None, goal: WorldGoal) -> list[float]:
    if event is None:
        return [0.0] * 10
    return _target_columns(event.target, goal) + _one_hot(int(event.ho_type), len(HoType))


def encode_input(ctx: InteractionContext) -> np.ndarray:
    v: list[float] = []
    v += encode_prev_actor(ctx.prev_actor)
    v.append(float(ctx.uttered_ot))
    v.append(float(ctx.uttered_l))
    v += _one_hot(ctx.prev_belief.index, 13)
    v += encode_pointing(ctx.hel_pointing, ctx.goal)
    v += encode_ho(ctx.hel_ho, ctx.goal)
    v += _one_hot(int(ctx.hel_action), len(HelAction))
    v += _one_hot(int(ctx.hel_da), len(DialogueAct))
    v += _one_hot(int(ctx.prev_eld_action), len(EldAction))
    v += _one_hot(int(ctx.prev_eld_da), len(DialogueAct))
    return np.asarray(v, dtype=np.float64)


def encode_batch(contexts) -> np.ndarray:
    rows = [encode_input(c) for c in contexts]
    if not rows:
        return np.zeros((0, INPUT_DIM))
    return np.stack(rows)


def summarize(ctx: InteractionContext) -> ContextSummary:
    def event(ev, with_type):
        if ev is None:
            return None
        return EventSummary(ev.target.kind, match_target(ev.target, ctx.goal), ev.ho_type if with_type else None)

    return ContextSummary(
        prev_actor=ctx.prev_actor,
        uttered_ot=ctx.uttered_ot,
        uttered_l=ctx.uttered_l,
        prev_belief=ctx.prev_belief,
        pointing=event(ctx.hel_pointing, False),
        ho=event(ctx.hel_ho, True),
        hel_action=ctx.hel_action,
        hel_da=ctx.hel_da,
        prev_eld_action=ctx.prev_eld_action,
        prev_eld_da=ctx.prev_eld_da,
    )


def _one_hot_index(block: str, values: np.ndarray) -> int:
    if values.sum() != 1:
        raise MalformedVector(block, f"one-hot block sums to {values.sum():g}")
    return int(np.flatnonzero(values)[0])


def _decode_target(block: str, cols: np.ndarray) -> EventSummary | None:
    present = cols[:2].sum()
    if present > 1:
        raise MalformedVector(block, "both location and object columns are set")
    if cols[2:5].sum() != present:
        raise MalformedVector(block, "match columns disagree with the presence columns")
    if present == 0:
        return None
    kind = TargetKind.Location if cols[0] == 1 else TargetKind.Object
    status = MatchStatus(int(np.flatnonzero(cols[2:5])[0]))
    if kind is TargetKind.Location and status is MatchStatus.RightTypeWrongInstance:
        raise MalformedVector(block, "right-type-wrong-instance is only defined for objects")
    return EventSummary(kind, status)


def decode_input(v) -> ContextSummary:
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != INPUT_DIM:
        raise MalformedVector("length", f"expected {INPUT_DIM} values, got shape {x.shape}")
    if not np.all((x == 0.0) | (x == 1.0)):
        for name, sl in BLOCK_SLICES.items():
            if not np.all((x[sl] == 0.0) | (x[sl] == 1.0)):
                raise MalformedVector(name, "entries must be 0 or 1")
    b = {name: x[sl] for name, sl in BLOCK_SLICES.items()}

    pa = b["prev_actor"]
    if pa.sum() > 1:
        raise MalformedVector("prev_actor", "both actor columns are set")
    prev_actor = None if pa.sum() == 0 else (Actor.ELD if pa[0] == 1 else Actor.HEL)

    pointing = _decode_target("pointing", b["pointing"])
    ho_cols = b["ho"]
    ho = _decode_target("ho", ho_cols[:5])
    if ho_cols[5:].sum() != (0 if ho is None else 1):
        raise MalformedVector("ho", "H-O type columns disagree with the presence columns")
    if ho is not None:
        ho_type = HoType(int(np.flatnonzero(ho_cols[5:])[0]))
        if (ho_type in (HoType.OpenLocation, HoType.CloseLocation) and ho.kind is not TargetKind.Location) or (
            ho_type in (HoType.TakeOutObject, HoType.HoldObject) and ho.kind is not TargetKind.Object
        ):
            raise MalformedVector("ho", f"{ho_type.name} does not apply to a {ho.kind.value}")
        ho = EventSummary(ho.kind, ho.status, ho_type)

    prev_eld_action = EldAction(_one_hot_index("prev_eld_action", b["prev_eld_action"]))
    prev_eld_da = DialogueAct(_one_hot_index("prev_eld_da", b["prev_eld_da"]))
    if prev_actor is None and (prev_eld_action or prev_eld_da):
        raise MalformedVector("prev_actor", "trial start with a previous ELD move")

    return ContextSummary(
        prev_actor=prev_actor,
        uttered_ot=bool(b["uttered_ot"][0]),
        uttered_l=bool(b["uttered_l"][0]),
        prev_belief=belief_from_index(_one_hot_index("prev_belief", b["prev_belief"])),
        pointing=pointing,
        ho=ho,
        hel_action=HelAction(_one_hot_index("hel_action", b["hel_action"])),
        hel_da=DialogueAct(_one_hot_index("hel_da", b["hel_da"])),
        prev_eld_action=prev_eld_action,
        prev_eld_da=prev_eld_da,
    )


def encode_targets(eld_move: Move | None, next_belief: BeliefState) -> TargetLabels:
    if eld_move is None:
        return TargetLabels(0, 0, next_belief.index)
    if eld_move.actor is not Actor.ELD:
        raise ValueError("targets are ELD moves")
    return TargetLabels(int(eld_move.eld_action), int(eld_move.da), next_belief.index)
