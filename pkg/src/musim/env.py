"""Episode environment: the simulated ELD answering an external HEL agent.

A session is a small state machine. ``reset`` picks a goal and lets ELD open
the trial; every ``step`` takes one HEL move, updates ELD's belief and asks the
policy for ELD's reply. Rewards are shaped for RL use and are configurable.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .agents import random_goal
from .domain import (
    FOUND_BELIEF,
    INITIAL_BELIEF,
    Actor,
    BeliefState,
    DialogueAct,
    EldAction,
    HelAction,
    MatchUndecidable,
    Move,
    WorldGoal,
    gives,
)
from .features import InteractionContext, encode_input
from .oracle import CONFIRM, OraclePolicy, intent_class


class SessionDone(RuntimeError):
    pass


class MalformedMove(ValueError):
    pass


class BadGoalSpec(ValueError):
    pass


class Outcome(str, Enum):
    Success = "Success"
    Timeout = "Timeout"
    Aborted = "Aborted"


_FINISH_DAS = (DialogueAct.StateY, DialogueAct.StateN, DialogueAct.State)


@dataclass
class EnvConfig:
    max_turns: int = 40
    reward_success: float = 1.0
    reward_per_turn: float = -0.01
    reward_failure: float = -1.0
    seed: int = 0

    def __post_init__(self):
        if self.max_turns < 1:
            raise ValueError("max_turns must be at least 1")


@dataclass(frozen=True)
class StepResult:
    eld_move: Move
    belief: BeliefState
    reward: float
    done: bool
    outcome: Outcome | None = None

    @property
    def is_pass(self) -> bool:
        return self.eld_move.is_pass


@dataclass(frozen=True)
class Turn:
    """One recorded exchange: the context ELD saw, its reply and new belief."""

    context: InteractionContext
    eld_move: Move
    next_belief: BeliefState


@dataclass
class Session:
    """One episode. ``turn`` counts HEL steps taken; ELD's opening is turn 0."""

    policy: object
    cfg: EnvConfig = field(default_factory=EnvConfig)
    goal: WorldGoal | None = None
    belief: BeliefState = INITIAL_BELIEF
    uttered_ot: bool = False
    uttered_l: bool = False
    turn: int = 0
    prev_actor: Actor | None = None
    prev_eld_move: Move | None = None
    done: bool = True
    outcome: Outcome | None = None
    previous_outcome: Outcome | None = None
    transcript: list[Turn] = field(default_factory=list)

    @property
    def uttered(self) -> tuple[bool, bool]:
        return (self.uttered_ot, self.uttered_l)

    @property
    def total_reward(self) -> float:
        # Per-turn cost times turns plus the terminal bonus, not a running sum,
        # so the total is exact in floating point.
        bonus = {Outcome.Success: self.cfg.reward_success, Outcome.Timeout: self.cfg.reward_failure}
        return self.cfg.reward_per_turn * self.turn + bonus.get(self.outcome, 0.0)

    def reset(self, goal: WorldGoal | None = None, seed: int | None = None) -> Move:
        """Start a fresh episode and return ELD's opening move.

        A session that is still running is marked Aborted first; the
        outcome of the replaced episode is kept in ``previous_outcome``.
        """
        if not self.done:
            self.outcome = Outcome.Aborted
        self.previous_outcome = self.outcome
        if goal is None:
            goal = random_goal(random.Random(self.cfg.seed if seed is None else seed))
        elif not isinstance(goal, WorldGoal):
            raise BadGoalSpec(f"not a goal: {goal!r}")
        self.goal = goal
        self.belief = INITIAL_BELIEF
        self.uttered_ot = self.uttered_l = False
        self.turn = 0
        self.prev_actor = None
        self.prev_eld_move = None
        self.done = False
        self.outcome = None
        self.transcript = []
        opening = self._context(Move.hel(DialogueAct.NoUtterance, HelAction.NoAction))
        move, nb = self.policy.respond(opening)
        self._record(opening, move, nb)
        return move

    def abort(self) -> None:
        if not self.done:
            self.done = True
            self.outcome = Outcome.Aborted

    def step(self, hel_move: Move) -> StepResult:
        if self.done:
            raise SessionDone("episode is over; send reset")
        if hel_move.actor is not Actor.HEL:
            raise MalformedMove("the HEL agent must send HEL moves")
        ctx = self._context(hel_move)
        try:
            encode_input(ctx)
        except MatchUndecidable as e:
            raise MalformedMove(str(e)) from e
        move, nb = self.policy.respond(ctx)
        self.turn += 1
        self._record(ctx, move, nb)

        reward = self.cfg.reward_per_turn
        outcome = None
        if self._finished(hel_move, move, nb):
            reward += self.cfg.reward_success
            outcome = Outcome.Success
        elif self.turn >= self.cfg.max_turns:
            reward += self.cfg.reward_failure
            outcome = Outcome.Timeout
        if outcome is not None:
            self.done = True
            self.outcome = outcome
        return StepResult(move, nb, reward, self.done, outcome)

    @staticmethod
    def _finished(hel_move: Move, eld_move: Move, nb: BeliefState) -> bool:
        # HEL announces the object, ELD believes it is the right one and confirms.
        return (
            hel_move.da in _FINISH_DAS
            and nb == FOUND_BELIEF
            and intent_class(eld_move.da, eld_move.eld_action) == CONFIRM
        )

    def _context(self, hel_move: Move) -> InteractionContext:
        prev = self.prev_eld_move if self.prev_actor is Actor.ELD else None
        return InteractionContext(
            prev_actor=self.prev_actor,
            uttered_ot=self.uttered_ot,
            uttered_l=self.uttered_l,
            prev_belief=self.belief,
            hel_action=hel_move.hel_action,
            hel_da=hel_move.da,
            prev_eld_action=prev.eld_action if prev else EldAction.NoAction,
            prev_eld_da=prev.da if prev else DialogueAct.NoUtterance,
            goal=self.goal,
            hel_pointing=hel_move.pointing,
            hel_ho=hel_move.ho,
            hel_mentions=hel_move.mentioned,
        )

    def _record(self, ctx: InteractionContext, move: Move, nb: BeliefState) -> None:
        self.transcript.append(Turn(ctx, move, nb))
        self.belief = nb
        if move.is_pass:
            self.prev_actor = Actor.HEL
            return
        ot, loc = gives(move.eld_action)
        self.uttered_ot |= ot
        self.uttered_l |= loc
        self.prev_actor = Actor.ELD
        self.prev_eld_move = move


def run_episode(session: Session, hel, goal: WorldGoal | None = None, seed: int | None = None):
    """Drive ``session`` with a scripted HEL agent until the episode ends."""
    opening = session.reset(goal, seed)
    hel.observe(opening)
    result = None
    while not session.done:
        result = session.step(hel.act())
        hel.observe(result.eld_move)
    return result


def make_policy(model_path=None, seed: int | None = None):
    if model_path is None:
        return OraclePolicy(seed)
    from .model import ModelPolicy, load_model

    return ModelPolicy(load_model(model_path))
