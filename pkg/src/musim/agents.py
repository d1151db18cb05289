"""Scripted HEL agents and the small household world they act in."""

from __future__ import annotations

import random
from dataclasses import dataclass

from .domain import (
    DialogueAct,
    EldAction,
    HapticOstensiveEvent,
    HelAction,
    HoType,
    Move,
    TargetRef,
    WorldGoal,
    gives,
)

DA = DialogueAct

OBJECT_TYPES = {
    "bowl": ("small_bowl", "large_bowl", "blue_bowl"),
    "cup": ("red_cup", "tall_cup"),
    "pot": ("steel_pot", "clay_pot"),
    "plate": ("white_plate", "dinner_plate"),
    "spoon": ("soup_spoon", "tea_spoon"),
}
LOCATIONS = ("cabinet", "drawer", "fridge", "shelf", "counter")


def random_goal(rng: random.Random) -> WorldGoal:
    object_type = rng.choice(sorted(OBJECT_TYPES))
    return WorldGoal.make(object_type, rng.choice(LOCATIONS), rng.choice(OBJECT_TYPES[object_type]))


def wrong_type(goal: WorldGoal, rng: random.Random) -> TargetRef:
    t = rng.choice([t for t in sorted(OBJECT_TYPES) if t != goal.target_object_type])
    return TargetRef.obj(rng.choice(OBJECT_TYPES[t]), t)


def wrong_instance(goal: WorldGoal, rng: random.Random) -> TargetRef:
    others = [o for o in OBJECT_TYPES.get(goal.target_object_type, ()) if o != goal.target_object.identity]
    if not others:
        others = ["other_" + goal.target_object_type]
    return TargetRef.obj(rng.choice(others), goal.target_object_type)


def wrong_location(goal: WorldGoal, rng: random.Random) -> TargetRef:
    return TargetRef.location(rng.choice([loc for loc in LOCATIONS if loc != goal.target_location]))


@dataclass
class _Progress:
    knows_ot: bool = False
    ot_confirmed: bool = False
    knows_l: bool = False
    l_confirmed: bool = False
    opened: bool = False
    obj_confirmed: bool = False


class ScriptedHel:
    """Cooperative helper: request O_T, verify it, request and verify L, open L,
    verify the object, then announce it.

    With probability ``noise`` per turn it makes one mistake instead: a wrong
    mention, a wrong physical target, or a redundant request. ``ack_prob``
    makes it sometimes acknowledge new information before acting, which gives
    consecutive HEL moves.
    """

    def __init__(self, goal: WorldGoal, noise: float = 0.0, rng: random.Random | None = None, ack_prob: float = 0.0):
        if not 0.0 <= noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")
        self.goal = goal
        self.noise = noise
        self.ack_prob = ack_prob
        self.rng = rng or random.Random(0)
        self.p = _Progress()
        self._last: Move | None = None
        self._unacked = False

    def observe(self, eld_move: Move | None) -> None:
        if eld_move is None or eld_move.is_pass:
            return
        p = self.p
        ot, loc = gives(eld_move.eld_action)
        if ot:
            p.knows_ot, p.ot_confirmed, p.obj_confirmed = True, False, False
        if loc:
            p.knows_l, p.l_confirmed, p.opened, p.obj_confirmed = True, False, False, False
        self._unacked = ot or loc
        last = self._last.hel_action if self._last is not None else None
        if eld_move.eld_action in (EldAction.Yes, EldAction.No):
            ok = eld_move.eld_action is EldAction.Yes
            if last is HelAction.VerifyOT:
                p.ot_confirmed = ok
            elif last is HelAction.VerifyL and self._last.da is not DA.NoUtterance:
                p.l_confirmed = ok
            elif last is HelAction.VerifyO:
                p.obj_confirmed = ok

    def act(self) -> Move:
        move = self._choose()
        self._last = move
        if move.hel_action is HelAction.VerifyL and move.ho is not None:
            self.p.opened = True
        return move

    def _choose(self) -> Move:
        if self._unacked and self.ack_prob and self.rng.random() < self.ack_prob:
            self._unacked = False
            return Move.hel(DA.Acknowledge, HelAction.Acknowledge)
        self._unacked = False
        if self.noise and self.rng.random() < self.noise:
            return self._mistake()
        return self._planned(correct=True)

    def _planned(self, correct: bool, mistake: str | None = None) -> Move:
        p, g, rng = self.p, self.goal, self.rng
        if not p.knows_ot:
            return Move.hel(DA.QueryW, HelAction.RequestOT)
        if not p.ot_confirmed:
            ref = TargetRef.obj(None, g.target_object_type) if correct else wrong_type(g, rng)
            return Move.hel(DA.Check, HelAction.VerifyOT, mentioned=(ref,))
        if not p.knows_l:
            return Move.hel(DA.QueryW, HelAction.RequestL)
        if not p.l_confirmed:
            ref = TargetRef.location(g.target_location) if correct else wrong_location(g, rng)
            return Move.hel(DA.Check, HelAction.VerifyL, mentioned=(ref,))
        if not p.opened:
            ref = TargetRef.location(g.target_location) if correct else wrong_location(g, rng)
            return Move.hel(DA.NoUtterance, HelAction.VerifyL, ho=HapticOstensiveEvent(ref, HoType.OpenLocation))
        if not p.obj_confirmed:
            if correct:
                ref = g.target_object
            else:
                ref = wrong_instance(g, rng) if mistake == "instance" else wrong_type(g, rng)
            return Move.hel(DA.QueryYn, HelAction.VerifyO, ho=HapticOstensiveEvent(ref, HoType.TakeOutObject))
        return Move.hel(DA.StateY, HelAction.Yes)

    def _mistake(self) -> Move:
        p = self.p
        options = []
        planned = self._planned(correct=True)
        if planned.hel_action in (HelAction.VerifyOT, HelAction.VerifyL, HelAction.VerifyO):
            options.append("target")
            if planned.hel_action is HelAction.VerifyO:
                options.append("instance")
        if p.knows_ot:
            options.append("request_ot")
        if p.knows_l:
            options.append("request_l")
        if not options:
            return planned
        kind = self.rng.choice(options)
        if kind == "request_ot":
            return Move.hel(DA.QueryW, HelAction.RequestOT)
        if kind == "request_l":
            return Move.hel(DA.QueryW, HelAction.RequestL)
        return self._planned(correct=False, mistake=kind)


class AdversarialHel:
    """Never makes progress: alternates wrong verifications and requests."""

    def __init__(self, goal: WorldGoal, rng: random.Random | None = None):
        self.goal = goal
        self.rng = rng or random.Random(0)

    def observe(self, eld_move: Move | None) -> None:
        pass

    def act(self) -> Move:
        g, rng = self.goal, self.rng
        choice = rng.randrange(4)
        if choice == 0:
            return Move.hel(DA.Check, HelAction.VerifyOT, mentioned=(wrong_type(g, rng),))
        if choice == 1:
            return Move.hel(DA.QueryW, HelAction.RequestOT)
        if choice == 2:
            return Move.hel(DA.QueryYn, HelAction.VerifyO, ho=HapticOstensiveEvent(wrong_instance(g, rng), HoType.HoldObject))
        return Move.hel(DA.StateY, HelAction.Yes)
