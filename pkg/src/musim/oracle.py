"""Rule-based ELD policy built from the HBATN primitive-subtask tables.

The oracle plays three roles: it generates synthetic dialogues, it is the
reference the trained model is compared against, and its exhaustive input
enumerator is the brute-force test bed for both.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable

from .domain import (
    ALL_BELIEFS,
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
    belief_update,
    give_action,
    gives,
    ho_allows,
)
from .features import InteractionContext

DA = DialogueAct


class UnclassifiableContext(ValueError):
    pass


class GroundRuleViolation(ValueError):
    pass


class PrimitiveSubtask(str, Enum):
    EstablishOT = "Establish(O_T)"
    VerifyOT = "Verify(O_T)"
    SpecifyOT = "Specify(O_T)"
    EstablishL = "Establish(L)"
    VerifyL = "Verify(L)"
    SpecifyL = "Specify(L)"
    VerifyO = "Verify(O)"
    FinishL = "Finish(L)"


# -- tuple notation ----------------------------------------------------------

DA_ABBREV = {
    DA.NoUtterance: "-",
    DA.Instruct: "Inst",
    DA.Acknowledge: "Ack",
    DA.QueryW: "Qw",
    DA.QueryYn: "Qyn",
    DA.ReplyW: "Rw",
    DA.ReplyY: "Ry",
    DA.ReplyN: "Rn",
    DA.Check: "Chk",
    DA.Explain: "Exp",
    DA.Align: "Algn",
    DA.StateY: "Sty",
    DA.StateN: "Stn",
    DA.State: "St",
}
_ABBREV_DA = {v: k for k, v in DA_ABBREV.items()}


@dataclass(frozen=True)
class OracleTuple:
    """(a, b, c): whether O_T and L are uttered, and the dialogue act.

    ``da = NoUtterance`` stands for the table's "-" (no move).
    """

    ot: int
    loc: int
    da: DialogueAct

    def __str__(self) -> str:
        return f"({self.ot},{self.loc},{DA_ABBREV[self.da]})"


@dataclass(frozen=True)
class TuplePattern:
    ot: int | None  # None is the table's "*"
    loc: int | None
    da: DialogueAct

    def matches(self, t: OracleTuple) -> bool:
        return (
            (self.ot is None or self.ot == t.ot)
            and (self.loc is None or self.loc == t.loc)
            and self.da == t.da
        )

    def expand(self) -> list[OracleTuple]:
        ots = (0, 1) if self.ot is None else (self.ot,)
        locs = (0, 1) if self.loc is None else (self.loc,)
        return [OracleTuple(a, b, self.da) for a in ots for b in locs]

    def __str__(self) -> str:
        def flag(v):
            return "*" if v is None else str(v)

        return f"({flag(self.ot)},{flag(self.loc)},{DA_ABBREV[self.da]})"


def parse_patterns(text: str) -> tuple[TuplePattern, ...]:
    out = []
    for part in text.split("/"):
        a, b, c = part.strip().strip("()").split(",")
        out.append(
            TuplePattern(
                None if a == "*" else int(a),
                None if b == "*" else int(b),
                _ABBREV_DA[c.strip()],
            )
        )
    return tuple(out)


def move_tuple(move: Move) -> OracleTuple:
    """Tuple of an ELD move; utterance flags follow the action."""
    ot, loc = gives(move.eld_action)
    return OracleTuple(int(ot), int(loc), move.da)


@dataclass(frozen=True)
class TableRow:
    subtask: PrimitiveSubtask
    inputs: str
    hbatn: tuple[TuplePattern, ...]
    gus_reported: str


# Rows as printed in the comparison tables; Specify(O_T) appears in two
# tables with the same HBATN column and is kept once.
TRANSITION_TABLE: tuple[TableRow, ...] = (
    TableRow(
        PrimitiveSubtask.EstablishOT,
        "(0,0,Inst)/(0,0,Qw)",
        parse_patterns("(1,*,Inst)/(1,*,Rw)"),
        "(1,0,Rw)",
    ),
    TableRow(
        PrimitiveSubtask.VerifyOT,
        "(1,0,Chk)/(1,0,Qyn)",
        parse_patterns("(*,0,Ry)/(*,0,Rn)/(1,0,Inst)/(1,0,Rw)"),
        "(1,0,Ry)/(1,1,Rn)/(1,0,Inst)/(1,*,Rw)",
    ),
    TableRow(
        PrimitiveSubtask.SpecifyOT,
        "(*,0,Qw)",
        parse_patterns("(*,0,Inst)/(*,0,Rw)"),
        "(*,0,Rw)",
    ),
    TableRow(
        PrimitiveSubtask.EstablishL,
        "(*,0,Inst)/(*,0,Qw)",
        parse_patterns("(*,*,Inst)/(*,*,Rw)"),
        "(*,*,Inst)/(*,*,Rw)/(*,*,Ry)/(*,*,Rn)",
    ),
    TableRow(
        PrimitiveSubtask.VerifyL,
        "(0,0,-)/(0,*,Chk)/(0,*,Qyn)",
        parse_patterns("(0,*,Ry)/(0,*,Rn)/(*,*,-)/(*,*,Rw)/(*,*,Inst)"),
        "(0,*,Sty)/(0,*,Ry)/(0,*,Rn)",
    ),
    TableRow(
        PrimitiveSubtask.SpecifyL,
        "(*,1,Qw)",
        parse_patterns("(*,*,Inst)/(*,*,Rw)"),
        "(0,*,Inst)/(0,*,Rn)/(*,*,-)",
    ),
    TableRow(
        PrimitiveSubtask.VerifyO,
        "(*,0,-)/(*,0,Chk)/(*,0,Qyn)/(*,*,St)",
        parse_patterns("(*,0,Ry)/(*,0,Rn)/(*,0,Rw)/(*,0,Inst)"),
        "(*,0,Ry)/(*,0,Rn)/(*,*,Inst)",
    ),
    TableRow(
        PrimitiveSubtask.FinishL,
        "(*,*,Sty)/(*,*,St)/(*,*,Stn)",
        parse_patterns("(0,0,Ack)"),
        "(0,0,Ry)/(0,0,Sty)",
    ),
)
_ROWS = {row.subtask: row for row in TRANSITION_TABLE}


def permitted_outputs(subtask: PrimitiveSubtask) -> tuple[TuplePattern, ...]:
    return _ROWS[subtask].hbatn


def is_permitted(subtask: PrimitiveSubtask, t: OracleTuple) -> bool:
    return any(p.matches(t) for p in permitted_outputs(subtask))


# -- subtask classification --------------------------------------------------

_FINISH_DAS = (DA.StateY, DA.StateN, DA.State)


@dataclass(frozen=True)
class Rule:
    condition: str
    test: Callable[[InteractionContext], bool]
    subtask: PrimitiveSubtask


def _trial_start(c: InteractionContext) -> bool:
    return c.prev_actor is None and c.hel_action is HelAction.NoAction and c.hel_da is DA.NoUtterance


# Evaluated top to bottom; the first rule that fires wins.
DECISION_TABLE: tuple[Rule, ...] = (
    Rule("trial start, HEL has not moved", _trial_start, PrimitiveSubtask.EstablishOT),
    Rule(
        "HEL RequestOT, ELD has not named O_T",
        lambda c: c.hel_action is HelAction.RequestOT and not c.uttered_ot,
        PrimitiveSubtask.EstablishOT,
    ),
    Rule(
        "HEL RequestOT, ELD already named O_T",
        lambda c: c.hel_action is HelAction.RequestOT,
        PrimitiveSubtask.SpecifyOT,
    ),
    Rule("HEL VerifyOT", lambda c: c.hel_action is HelAction.VerifyOT, PrimitiveSubtask.VerifyOT),
    Rule(
        "HEL RequestL, ELD has not named L",
        lambda c: c.hel_action is HelAction.RequestL and not c.uttered_l,
        PrimitiveSubtask.EstablishL,
    ),
    Rule(
        "HEL RequestL, ELD already named L",
        lambda c: c.hel_action is HelAction.RequestL,
        PrimitiveSubtask.SpecifyL,
    ),
    Rule("HEL VerifyL", lambda c: c.hel_action is HelAction.VerifyL, PrimitiveSubtask.VerifyL),
    Rule("HEL VerifyO", lambda c: c.hel_action is HelAction.VerifyO, PrimitiveSubtask.VerifyO),
    Rule(
        "HEL StateY/StateN/State, object already resolved (obj=1)",
        lambda c: c.hel_da in _FINISH_DAS
        and c.hel_action in (HelAction.NoAction, HelAction.Yes, HelAction.No)
        and c.prev_belief.obj == 1,
        PrimitiveSubtask.FinishL,
    ),
    Rule(
        "HEL State about an object not yet resolved",
        lambda c: c.hel_da is DA.State and c.hel_action is HelAction.NoAction,
        PrimitiveSubtask.VerifyO,
    ),
)


def classify_subtask(ctx: InteractionContext) -> PrimitiveSubtask:
    for rule in DECISION_TABLE:
        if rule.test(ctx):
            return rule.subtask
    raise UnclassifiableContext(
        f"no subtask for HEL ({ctx.hel_da.name}, {ctx.hel_action.name}) at belief {ctx.prev_belief}"
    )


# -- responses ---------------------------------------------------------------


def _inform_da(ctx: InteractionContext, rng: random.Random | None) -> DialogueAct:
    if rng is not None:
        return rng.choice((DA.Instruct, DA.ReplyW))
    return DA.ReplyW if ctx.hel_da is DA.QueryW else DA.Instruct


def _respond(subtask: PrimitiveSubtask, ctx: InteractionContext, nb: BeliefState, rng) -> Move:
    pb = ctx.prev_belief
    if subtask is PrimitiveSubtask.EstablishOT:
        return Move.eld(_inform_da(ctx, rng), give_action(True, nb.loc == 2))
    if subtask is PrimitiveSubtask.SpecifyOT:
        da = DA.Instruct if rng is None else rng.choice((DA.Instruct, DA.ReplyW))
        return Move.eld(da, EldAction.GiveOT)
    if subtask is PrimitiveSubtask.VerifyOT:
        if nb.ot == 1:
            return Move.eld(DA.ReplyY, EldAction.Yes)
        return Move.eld(DA.Instruct, EldAction.GiveOT)
    if subtask in (PrimitiveSubtask.EstablishL, PrimitiveSubtask.SpecifyL):
        return Move.eld(_inform_da(ctx, rng), give_action(nb.ot == 2, True))
    if subtask is PrimitiveSubtask.VerifyL:
        if nb.loc == 1:
            if pb.loc == 1 and ctx.hel_da is DA.NoUtterance:
                return Move.eld(DA.NoUtterance, EldAction.NoAction)
            return Move.eld(DA.ReplyY, EldAction.Yes)
        return Move.eld(DA.Instruct, give_action(nb.ot == 2, True))
    if subtask is PrimitiveSubtask.VerifyO:
        if nb.obj == 1:
            return Move.eld(DA.ReplyY, EldAction.Yes)
        if nb.ot != 1 or nb.obj == 2:
            return Move.eld(DA.Instruct, EldAction.GiveOT)
        return Move.eld(DA.ReplyN, EldAction.No)
    return Move.eld(DA.Acknowledge, EldAction.Acknowledge)


PASS_MOVE = Move.eld(DA.NoUtterance, EldAction.NoAction)


def oracle_respond(
    ctx: InteractionContext,
    goal: WorldGoal | None = None,
    rng: random.Random | None = None,
) -> tuple[Move, BeliefState]:
    """ELD's move and next belief for ``ctx``.

    Contexts outside every primitive subtask get a pass. ``rng`` switches on
    random choice between equivalent Instruct/Reply-w answers.
    """
    goal = goal or ctx.goal
    violation = ground_rule_violation(ctx)
    if violation:
        raise GroundRuleViolation(violation)
    nb = belief_update(ctx.prev_belief, ctx.hel_move(), goal, ctx.uttered)
    try:
        subtask = classify_subtask(ctx)
    except UnclassifiableContext:
        return PASS_MOVE, nb
    return _respond(subtask, ctx, nb, rng), nb


class OraclePolicy:
    """Policy wrapper exposing the oracle through the common ``respond`` call."""

    name = "oracle"

    def __init__(self, seed: int | None = None):
        self._rng = random.Random(seed) if seed is not None else None

    def respond(self, ctx: InteractionContext) -> tuple[Move, BeliefState]:
        return oracle_respond(ctx, rng=self._rng)


# -- ground rules and enumeration --------------------------------------------

_VERIFY_KIND = {
    HelAction.VerifyOT: TargetKind.Object,
    HelAction.VerifyL: TargetKind.Location,
    HelAction.VerifyO: TargetKind.Object,
}


def ground_rule_violation(ctx: InteractionContext) -> str | None:
    b = ctx.prev_belief
    if b.ot != 0 and not ctx.uttered_ot:
        return "belief about O_T left 0 before ELD uttered O_T"
    if b.loc != 0 and not ctx.uttered_l:
        return "belief about L left 0 before ELD uttered L"
    if ctx.hel_action in (HelAction.VerifyOT, HelAction.VerifyO) and not ctx.uttered_ot:
        return "HEL verifies O_T before ELD announced it"
    if ctx.hel_action is HelAction.VerifyL and not ctx.uttered_l:
        return "HEL verifies L before ELD announced it"
    kind = _VERIFY_KIND.get(ctx.hel_action)
    for event in (ctx.hel_pointing, ctx.hel_ho):
        if event is None:
            continue
        if kind is None:
            return "HEL points or acts physically outside a verification"
        if event.target.kind is not kind:
            return f"{ctx.hel_action.name} acts on a {event.target.kind.value}"
    if ctx.prev_actor is None and (ctx.uttered_ot or ctx.uttered_l or b != ALL_BELIEFS[0]):
        return "trial start with history"
    ot, loc = gives(ctx.prev_eld_action)
    if (ot and not ctx.uttered_ot) or (loc and not ctx.uttered_l):
        return "previous ELD move named an entity that was never uttered"
    return None


CANONICAL_GOAL = WorldGoal.make("bowl", "cabinet", "small_bowl")


def status_target(kind: TargetKind, status: MatchStatus, goal: WorldGoal = CANONICAL_GOAL) -> TargetRef:
    """A concrete target standing in a given relation to ``goal``."""
    if kind is TargetKind.Location:
        if status is MatchStatus.Correct:
            return TargetRef.location(goal.target_location)
        return TargetRef.location(_distinct("drawer", goal.target_location))
    if status is MatchStatus.Correct:
        return goal.target_object
    if status is MatchStatus.RightTypeWrongInstance:
        identity = _distinct("large_" + goal.target_object_type, goal.target_object.identity)
        return TargetRef.obj(identity, goal.target_object_type)
    wrong_type = _distinct("cup", goal.target_object_type)
    return TargetRef.obj("some_" + wrong_type, wrong_type)


def _distinct(candidate: str, avoid: str) -> str:
    return candidate if candidate != avoid else candidate + "_2"


# HEL (action, dialogue act) pairs that appear as inputs of the comparison
# tables. A silent verification must come with a physical event.
TABLE_HEL_MOVES: tuple[tuple[HelAction, DialogueAct], ...] = (
    (HelAction.NoAction, DA.NoUtterance),
    (HelAction.RequestOT, DA.QueryW),
    (HelAction.RequestOT, DA.Instruct),
    (HelAction.RequestL, DA.QueryW),
    (HelAction.RequestL, DA.Instruct),
    (HelAction.VerifyOT, DA.Check),
    (HelAction.VerifyOT, DA.QueryYn),
    (HelAction.VerifyL, DA.Check),
    (HelAction.VerifyL, DA.QueryYn),
    (HelAction.VerifyL, DA.NoUtterance),
    (HelAction.VerifyO, DA.Check),
    (HelAction.VerifyO, DA.QueryYn),
    (HelAction.VerifyO, DA.NoUtterance),
    (HelAction.NoAction, DA.State),
    (HelAction.Yes, DA.StateY),
    (HelAction.No, DA.StateN),
)

# ELD moves the oracle can produce, used as the "previous ELD move" dimension.
ELD_MOVES: tuple[tuple[EldAction, DialogueAct], ...] = (
    (EldAction.GiveOT, DA.Instruct),
    (EldAction.GiveL, DA.Instruct),
    (EldAction.GiveOTL, DA.Instruct),
    (EldAction.GiveOT, DA.ReplyW),
    (EldAction.GiveL, DA.ReplyW),
    (EldAction.GiveOTL, DA.ReplyW),
    (EldAction.Yes, DA.ReplyY),
    (EldAction.No, DA.ReplyN),
    (EldAction.Acknowledge, DA.Acknowledge),
)


def _physical_events(action: HelAction, goal: WorldGoal):
    yield None, None
    kind = _VERIFY_KIND.get(action)
    if kind is None:
        return
    statuses = [MatchStatus.Correct, MatchStatus.Wrong]
    if kind is TargetKind.Object:
        statuses.append(MatchStatus.RightTypeWrongInstance)
    for status in statuses:
        yield PointingEvent(status_target(kind, status, goal)), None
    for ho_type in HoType:
        if not ho_allows(ho_type, kind):
            continue
        for status in statuses:
            yield None, HapticOstensiveEvent(status_target(kind, status, goal), ho_type)


@lru_cache(maxsize=4)
def _enumerate(goal: WorldGoal) -> tuple[InteractionContext, ...]:
    out = []
    prev_options = [(None, EldAction.NoAction, DA.NoUtterance), (Actor.HEL, EldAction.NoAction, DA.NoUtterance)]
    prev_options += [(Actor.ELD, a, d) for a, d in ELD_MOVES]
    for belief, u_ot, u_l, (prev_actor, p_act, p_da), (h_act, h_da) in itertools.product(
        ALL_BELIEFS, (False, True), (False, True), prev_options, TABLE_HEL_MOVES
    ):
        for pointing, ho in _physical_events(h_act, goal):
            if h_da is DA.NoUtterance and h_act is not HelAction.NoAction and pointing is None and ho is None:
                continue
            if (h_act, h_da) == (HelAction.NoAction, DA.NoUtterance) and prev_actor is not None:
                continue
            ctx = InteractionContext(
                prev_actor=prev_actor,
                uttered_ot=u_ot,
                uttered_l=u_l,
                prev_belief=belief,
                hel_action=h_act,
                hel_da=h_da,
                prev_eld_action=p_act,
                prev_eld_da=p_da,
                goal=goal,
                hel_pointing=pointing,
                hel_ho=ho,
            )
            if ground_rule_violation(ctx):
                continue
            try:
                classify_subtask(ctx)
            except UnclassifiableContext:
                continue
            out.append(ctx)
    return tuple(out)


def enumerate_valid_inputs(goal: WorldGoal = CANONICAL_GOAL) -> list[InteractionContext]:
    """Every meaningful context under the ground rules, in a fixed order.

    Product of belief x uttered flags x previous actor/ELD move x tabled HEL
    move x at most one physical event, keeping contexts that satisfy the
    ground rules and fall into a primitive subtask.
    """
    return list(_enumerate(goal))


# -- intent equivalence ------------------------------------------------------


@dataclass(frozen=True)
class Intent:
    name: str
    da: DialogueAct | None = None

    def __str__(self) -> str:
        return self.name if self.da is None else f"{self.name}({self.da.name})"


INFORM = Intent("Inform")
CORRECT = Intent("Correct")
CONFIRM = Intent("Confirm")
DENY = Intent("Deny")
PASS = Intent("Pass")

_GIVES = (EldAction.GiveOT, EldAction.GiveL, EldAction.GiveOTL)


def intent_class(da: DialogueAct, action: EldAction) -> Intent:
    if da is DA.NoUtterance and action is EldAction.NoAction:
        return PASS
    if action in _GIVES and da in (DA.Instruct, DA.ReplyW):
        return INFORM
    if action in _GIVES and da is DA.ReplyN:
        return CORRECT
    if da in (DA.ReplyY, DA.StateY, DA.Acknowledge) and action in (EldAction.Yes, EldAction.Acknowledge):
        return CONFIRM
    if da in (DA.StateN, DA.ReplyN) and action is EldAction.No:
        return DENY
    return Intent("Other", da)


def tuple_actions(t: OracleTuple) -> list[EldAction]:
    give = give_action(bool(t.ot), bool(t.loc))
    if t.da is DA.NoUtterance:
        return [EldAction.NoAction]
    if t.da in (DA.Instruct, DA.ReplyW):
        return [give] if give is not EldAction.NoAction else []
    if t.da is DA.ReplyN:
        return [give] if give is not EldAction.NoAction else [EldAction.No]
    if t.da in (DA.ReplyY, DA.StateY):
        return [EldAction.Yes]
    if t.da is DA.Acknowledge:
        return [EldAction.Acknowledge]
    if t.da is DA.StateN:
        return [EldAction.No]
    return []


@lru_cache(maxsize=None)
def permitted_intents(subtask: PrimitiveSubtask) -> frozenset[Intent]:
    out = set()
    for pattern in permitted_outputs(subtask):
        for t in pattern.expand():
            for action in tuple_actions(t):
                out.add(intent_class(t.da, action))
    return frozenset(out)


# -- documentation -----------------------------------------------------------


def render_oracle_tables() -> str:
    lines = [
        "# Oracle tables",
        "",
        "Generated by `musim.oracle.render_oracle_tables()`; do not edit by hand.",
        "",
        "Tuples are `(a,b,c)`: `a`/`b` say whether O_T/L are uttered, `c` is the dialogue act,",
        "`*` matches 0 or 1 and `-` is no move. For outputs, `a`/`b` follow the ELD action",
        "(Give O_T sets `a`, Give L sets `b`). Input tuples are kept as published; the",
        "classifier below decides the subtask.",
        "",
        "## Transition table",
        "",
        "| Subtask | Input (published) | Permitted ELD outputs | Permitted intents |",
        "|---|---|---|---|",
    ]
    for row in TRANSITION_TABLE:
        outs = "/".join(str(p) for p in row.hbatn)
        intents = ", ".join(sorted(str(i) for i in permitted_intents(row.subtask)))
        lines.append(f"| {row.subtask.value} | {row.inputs} | {outs} | {intents} |")
    lines += [
        "",
        "## Subtask decision table",
        "",
        "First matching rule wins; contexts matching none get a pass.",
        "",
        "| # | Condition | Subtask |",
        "|---|---|---|",
    ]
    for i, rule in enumerate(DECISION_TABLE, 1):
        lines.append(f"| {i} | {rule.condition} | {rule.subtask.value} |")
    lines += [
        "",
        "## Canonical responses",
        "",
        "`nb` is ELD's belief after the HEL move; `pb` the belief before it.",
        "",
        "| Subtask | Condition | ELD move |",
        "|---|---|---|",
        "| Establish(O_T) | HEL Query-w | Reply-w + Give O_T (+L if nb.loc=2) |",
        "| Establish(O_T) | otherwise | Instruct + Give O_T (+L if nb.loc=2) |",
        "| Specify(O_T) | always | Instruct + Give O_T |",
        "| Verify(O_T) | nb.ot=1 | Reply-y + Yes |",
        "| Verify(O_T) | otherwise | Instruct + Give O_T |",
        "| Establish(L), Specify(L) | HEL Query-w | Reply-w + Give L (+O_T if nb.ot=2) |",
        "| Establish(L), Specify(L) | otherwise | Instruct + Give L (+O_T if nb.ot=2) |",
        "| Verify(L) | nb.loc=1, pb.loc=1, silent HEL | no move |",
        "| Verify(L) | nb.loc=1 | Reply-y + Yes |",
        "| Verify(L) | otherwise | Instruct + Give L (+O_T if nb.ot=2) |",
        "| Verify(O) | nb.obj=1 | Reply-y + Yes |",
        "| Verify(O) | nb.ot!=1 or nb.obj=2 | Instruct + Give O_T |",
        "| Verify(O) | otherwise | Reply-n + No |",
        "| Finish(L) | always | Acknowledge + Acknowledge |",
        "",
    ]
    return "\n".join(lines)
