"""Corpus records, the JSON-lines file format, augmentation, splitting and
oracle-driven synthesis.

File layout: a header line followed by one record per line. Every line is a
compact JSON object with sorted keys, so identical corpora give identical
bytes. Beliefs are written as ``[ot, loc, obj]`` triples and enums as their
canonical indexes.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .agents import ScriptedHel, random_goal, wrong_instance, wrong_location, wrong_type
from .domain import (
    Actor,
    BeliefState,
    DialogueAct,
    EldAction,
    HapticOstensiveEvent,
    HelAction,
    HoType,
    InvalidBelief,
    MatchUndecidable,
    PointingEvent,
    TargetKind,
    TargetRef,
    WorldGoal,
    belief_from_index,
    gives,
    validate_belief,
)
from .env import EnvConfig, Session, run_episode
from .features import FEATURE_SCHEMA_HASH, InteractionContext, InvalidContext, TargetLabels, encode_input
from .io import SchemaMismatch, atomic_write_text

SCHEMA_VERSION = "1"
FORMAT_NAME = "musim-corpus"
DA = DialogueAct


class ParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class InvalidRecord(ValueError):
    def __init__(self, dialogue_id: str, turn_index: int, reason: str):
        super().__init__(f"{dialogue_id}#{turn_index}: {reason}")
        self.dialogue_id = dialogue_id
        self.turn_index = turn_index
        self.reason = reason


class InsufficientSource(ValueError):
    def __init__(self, rule: str):
        super().__init__(f"no source record matches the sampling predicate of {rule}")
        self.rule = rule


class Provenance(str, Enum):
    Original = "Original"
    AugOut_EstabOT = "AugOut_EstabOT"
    AugOut_WrongOT = "AugOut_WrongOT"
    AugOut_WrongLO = "AugOut_WrongLO"
    AugIn_112 = "AugIn_112"
    AugIn_120 = "AugIn_120"
    AugIn_210 = "AugIn_210"
    AugIn_220 = "AugIn_220"
    AugIn_200 = "AugIn_200"
    Synthetic = "Synthetic"


OUTPUT_RULES = (Provenance.AugOut_EstabOT, Provenance.AugOut_WrongOT, Provenance.AugOut_WrongLO)
INPUT_RULES = (
    Provenance.AugIn_112,
    Provenance.AugIn_120,
    Provenance.AugIn_210,
    Provenance.AugIn_220,
    Provenance.AugIn_200,
)
AUGMENT_RULES = OUTPUT_RULES + INPUT_RULES


@dataclass(frozen=True)
class Record:
    input: InteractionContext
    targets: TargetLabels
    provenance: Provenance
    dialogue_id: str
    turn_index: int


@dataclass
class Corpus:
    records: list[Record] = field(default_factory=list)
    schema_version: str = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Encoded inputs (n, 76) and integer targets (n, 3)."""
        if not self.records:
            return np.zeros((0, 76)), np.zeros((0, 3), dtype=np.int64)
        x = np.stack([encode_input(r.input) for r in self.records])
        y = np.array([r.targets.as_tuple() for r in self.records], dtype=np.int64)
        return x, y


# -- validation --------------------------------------------------------------


def validate_record(r: Record) -> None:
    def bad(reason):
        raise InvalidRecord(r.dialogue_id, r.turn_index, reason)

    if r.turn_index < 0:
        bad("negative turn index")
    if not r.targets.coherent:
        bad("NoAction and NoUtterance must occur together in the targets")
    try:
        encode_input(r.input)
    except (MatchUndecidable, ValueError) as e:
        bad(f"input does not encode: {e}")


def check_corpus(c: Corpus) -> None:
    """Unique (dialogue, turn) keys; each dialogue contiguous and turn-ordered."""
    seen: set[str] = set()
    prev_id, prev_turn = None, -1
    for r in c.records:
        if r.dialogue_id != prev_id:
            if r.dialogue_id in seen:
                raise InvalidRecord(r.dialogue_id, r.turn_index, "records of a dialogue are not contiguous")
            seen.add(r.dialogue_id)
            prev_id, prev_turn = r.dialogue_id, -1
        if r.turn_index <= prev_turn:
            raise InvalidRecord(r.dialogue_id, r.turn_index, "turns out of order or duplicated")
        prev_turn = r.turn_index


# -- (de)serialization -------------------------------------------------------


def _target_json(t: TargetRef) -> dict:
    return {"kind": t.kind.value, "identity": t.identity, "object_type": t.object_type}


def _target_from(d: dict) -> TargetRef:
    return TargetRef(TargetKind(d["kind"]), d["identity"], d.get("object_type"))


def record_to_json(r: Record) -> dict:
    c = r.input
    return {
        "dialogue_id": r.dialogue_id,
        "turn_index": r.turn_index,
        "provenance": r.provenance.value,
        "input": {
            "prev_actor": c.prev_actor.value if c.prev_actor else None,
            "uttered_ot": c.uttered_ot,
            "uttered_l": c.uttered_l,
            "prev_belief": list(c.prev_belief.as_tuple()),
            "hel_action": int(c.hel_action),
            "hel_da": int(c.hel_da),
            "prev_eld_action": int(c.prev_eld_action),
            "prev_eld_da": int(c.prev_eld_da),
            "goal": {
                "object_type": c.goal.target_object_type,
                "location": c.goal.target_location,
                "object": c.goal.target_object.identity,
            },
            "pointing": _target_json(c.hel_pointing.target) if c.hel_pointing else None,
            "ho": {"target": _target_json(c.hel_ho.target), "ho_type": int(c.hel_ho.ho_type)} if c.hel_ho else None,
            "mentions": [_target_json(t) for t in c.hel_mentions],
        },
        "targets": {
            "eld_action": r.targets.eld_action,
            "eld_da": r.targets.eld_da,
            "next_belief": list(belief_from_index(r.targets.next_belief).as_tuple()),
        },
    }


def record_from_json(d: dict) -> Record:
    did, turn = str(d.get("dialogue_id", "?")), d.get("turn_index", -1)
    try:
        i = d["input"]
        g = i["goal"]
        ctx = InteractionContext(
            prev_actor=Actor(i["prev_actor"]) if i["prev_actor"] is not None else None,
            uttered_ot=bool(i["uttered_ot"]),
            uttered_l=bool(i["uttered_l"]),
            prev_belief=validate_belief(*i["prev_belief"]),
            hel_action=HelAction(i["hel_action"]),
            hel_da=DialogueAct(i["hel_da"]),
            prev_eld_action=EldAction(i["prev_eld_action"]),
            prev_eld_da=DialogueAct(i["prev_eld_da"]),
            goal=WorldGoal.make(g["object_type"], g["location"], g["object"]),
            hel_pointing=PointingEvent(_target_from(i["pointing"])) if i["pointing"] else None,
            hel_ho=HapticOstensiveEvent(_target_from(i["ho"]["target"]), HoType(i["ho"]["ho_type"])) if i["ho"] else None,
            hel_mentions=tuple(_target_from(t) for t in i["mentions"]),
        )
        t = d["targets"]
        targets = TargetLabels(t["eld_action"], t["eld_da"], validate_belief(*t["next_belief"]).index)
        r = Record(ctx, targets, Provenance(d["provenance"]), did, int(turn))
    except InvalidBelief as e:
        raise InvalidRecord(did, turn, f"invalid belief: {e}") from e
    except (KeyError, TypeError, ValueError, InvalidContext) as e:
        raise InvalidRecord(did, turn, f"{type(e).__name__}: {e}") from e
    validate_record(r)
    return r


def header() -> dict:
    return {
        "format": FORMAT_NAME,
        "schema_version": SCHEMA_VERSION,
        "feature_schema": FEATURE_SCHEMA_HASH,
    }


def _line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def dumps_corpus(c: Corpus) -> str:
    lines = [_line({**header(), "schema_version": c.schema_version, "records": len(c)})]
    lines += [_line(record_to_json(r)) for r in c.records]
    return "\n".join(lines) + "\n"


def save_corpus(c: Corpus, path) -> None:
    atomic_write_text(path, dumps_corpus(c))


def loads_corpus(text: str) -> Corpus:
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        return Corpus()
    try:
        head = json.loads(lines[0])
    except ValueError as e:
        raise ParseError(1, f"header is not JSON: {e}") from e
    if not isinstance(head, dict) or head.get("format") != FORMAT_NAME:
        raise ParseError(1, "missing corpus header")
    if head.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(f"corpus schema {head.get('schema_version')!r}, expected {SCHEMA_VERSION!r}")
    if head.get("feature_schema") != FEATURE_SCHEMA_HASH:
        raise SchemaMismatch(f"feature schema {head.get('feature_schema')!r}, expected {FEATURE_SCHEMA_HASH!r}")
    records = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except ValueError as e:
            raise ParseError(n, str(e)) from e
        if not isinstance(d, dict):
            raise ParseError(n, "a record must be a JSON object")
        records.append(record_from_json(d))
    if "records" in head and head["records"] != len(records):
        raise ParseError(1, f"header announces {head['records']} records, file has {len(records)}")
    c = Corpus(records, head["schema_version"])
    check_corpus(c)
    return c


def load_corpus(path) -> Corpus:
    return loads_corpus(Path(path).read_text(encoding="utf-8"))


# -- augmentation ------------------------------------------------------------


@dataclass
class AugmentConfig:
    per_rule_counts: dict[str, int] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        for rule, n in self.per_rule_counts.items():
            if rule not in Provenance.__members__ or Provenance(rule) not in AUGMENT_RULES:
                raise ValueError(f"unknown augmentation rule {rule!r}")
            if n < 0:
                raise ValueError(f"negative count for {rule}")

    def count(self, rule: Provenance) -> int:
        return self.per_rule_counts.get(rule.value, 0)

    @property
    def total(self) -> int:
        return sum(self.per_rule_counts.values())


def load_preset(name: str = "paper-profile") -> dict:
    path = resources.files("musim").joinpath("presets", f"{name}.json")
    if not path.is_file():
        raise ValueError(f"unknown preset {name!r}")
    return json.loads(path.read_text(encoding="utf-8"))


def preset_config(name: str = "paper-profile", seed: int = 0) -> AugmentConfig:
    return AugmentConfig(dict(load_preset(name)["per_rule_counts"]), seed)


def largest_remainder(weights: dict[str, int], total: int) -> dict[str, int]:
    """Integer counts proportional to ``weights`` that sum exactly to ``total``."""
    wsum = sum(weights.values())
    if wsum == 0:
        raise ValueError("all weights are zero")
    quotas = {k: total * w / wsum for k, w in weights.items()}
    counts = {k: math.floor(q) for k, q in quotas.items()}
    rest = total - sum(counts.values())
    order = sorted(weights, key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in order[:rest]:
        counts[k] += 1
    return counts


# Sampling predicates. Each takes a record and says whether the rule can use it.

_INFORMED = (Provenance.Original, Provenance.Synthetic)


def _object_refs(c: InteractionContext) -> list[TargetRef]:
    refs = [t for t in c.hel_mentions if t.kind is TargetKind.Object]
    refs += [e.target for e in (c.hel_pointing, c.hel_ho) if e is not None and e.target.kind is TargetKind.Object]
    return refs


def _location_refs(c: InteractionContext) -> list[TargetRef]:
    refs = [t for t in c.hel_mentions if t.kind is TargetKind.Location]
    refs += [e.target for e in (c.hel_pointing, c.hel_ho) if e is not None and e.target.kind is TargetKind.Location]
    return refs


def _p_estab_ot(r: Record) -> bool:
    b = r.input.prev_belief
    return b.ot == 1 and b.loc != 2 and r.input.uttered_ot


def _mentions_target_ot(r: Record) -> bool:
    c = r.input
    if not c.uttered_ot or c.prev_belief.loc == 2 or c.hel_da is DA.NoUtterance:
        return False
    refs = _object_refs(c)
    if any(t.object_type == c.goal.target_object_type for t in refs):
        return True
    # A spoken check of O_T without a named object refers to what ELD said.
    return c.hel_action is HelAction.VerifyOT and not refs


def _names_correct_l(r: Record) -> bool:
    c = r.input
    return (
        c.prev_belief.ot == 1
        and c.uttered_l
        and any(t.identity == c.goal.target_location for t in _location_refs(c))
    )


def _names_correct_o(r: Record) -> bool:
    c = r.input
    return (
        c.prev_belief.ot == 1
        and c.prev_belief.loc == 1
        and any(t.identity == c.goal.target_object.identity for t in _object_refs(c))
    )


def _p_wrong_lo(r: Record) -> bool:
    return _names_correct_l(r) or _names_correct_o(r)


def _p_111(r: Record) -> bool:
    return r.input.prev_belief.as_tuple() == (1, 1, 1)


def _p_ot_l_known(r: Record) -> bool:
    b = r.input.prev_belief
    return b.ot == 1 and b.loc == 1


def _p_ot_known(r: Record) -> bool:
    return r.input.prev_belief.ot == 1


PREDICATES = {
    Provenance.AugOut_EstabOT: _p_estab_ot,
    Provenance.AugOut_WrongOT: _mentions_target_ot,
    Provenance.AugOut_WrongLO: _p_wrong_lo,
    Provenance.AugIn_112: _p_111,
    Provenance.AugIn_120: _p_ot_l_known,
    Provenance.AugIn_210: _p_ot_l_known,
    Provenance.AugIn_220: _p_ot_l_known,
    Provenance.AugIn_200: _p_ot_known,
}

# Input rules: (new previous belief, previous ELD action); the DA is Instruct.
_INPUT_EDITS = {
    Provenance.AugIn_112: ((1, 1, 2), EldAction.GiveOT),
    Provenance.AugIn_120: ((1, 2, 0), EldAction.GiveL),
    Provenance.AugIn_210: ((2, 1, 0), EldAction.GiveOT),
    Provenance.AugIn_220: ((2, 2, 0), EldAction.GiveOTL),
    Provenance.AugIn_200: ((2, 0, 0), EldAction.GiveOT),
}


def source_pools(c: Corpus) -> dict[Provenance, list[Record]]:
    """Records each rule may sample from; only original or synthetic records."""
    base = [r for r in c.records if r.provenance in _INFORMED]
    return {rule: [r for r in base if pred(r)] for rule, pred in PREDICATES.items()}


def _estab_ot(r: Record, rng: random.Random) -> tuple[InteractionContext, TargetLabels]:
    c = r.input
    ctx = replace(
        c,
        hel_action=HelAction.RequestOT,
        hel_da=DA.QueryW,
        hel_pointing=None,
        hel_ho=None,
        hel_mentions=(),
    )
    nb = validate_belief(0, 1 if c.prev_belief.loc == 1 else 0, 0)
    return ctx, TargetLabels(int(EldAction.GiveOT), int(DA.Instruct), nb.index)


def _swap(ref: TargetRef, goal: WorldGoal, rng: random.Random, kind: str) -> TargetRef:
    if kind == "ot" and ref.kind is TargetKind.Object and ref.object_type == goal.target_object_type:
        wrong = wrong_type(goal, rng)
        return wrong if ref.identity is not None else TargetRef.obj(None, wrong.object_type)
    if kind == "l" and ref.kind is TargetKind.Location and ref.identity == goal.target_location:
        return wrong_location(goal, rng)
    if kind == "o" and ref.kind is TargetKind.Object and ref.identity == goal.target_object.identity:
        return wrong_instance(goal, rng)
    return ref


def _swap_refs(c: InteractionContext, rng: random.Random, kind: str) -> InteractionContext:
    g = c.goal
    mentions = tuple(_swap(t, g, rng, kind) for t in c.hel_mentions)
    pointing = PointingEvent(_swap(c.hel_pointing.target, g, rng, kind)) if c.hel_pointing else None
    ho = HapticOstensiveEvent(_swap(c.hel_ho.target, g, rng, kind), c.hel_ho.ho_type) if c.hel_ho else None
    return replace(c, hel_mentions=mentions, hel_pointing=pointing, hel_ho=ho)


def _wrong_ot(r: Record, rng: random.Random) -> tuple[InteractionContext, TargetLabels]:
    c = r.input
    ctx = _swap_refs(c, rng, "ot")
    if not _object_refs(c):
        ctx = replace(ctx, hel_mentions=ctx.hel_mentions + (TargetRef.obj(None, wrong_type(c.goal, rng).object_type),))
    nb = validate_belief(2, 1 if c.prev_belief.loc == 1 else 0, 0)
    return ctx, TargetLabels(int(EldAction.GiveOT), int(DA.Instruct), nb.index)


def _wrong_lo(r: Record, rng: random.Random) -> tuple[InteractionContext, TargetLabels]:
    options = []
    if _names_correct_l(r):
        options.append("l")
    if _names_correct_o(r):
        options.append("o")
    kind = rng.choice(options)
    ctx = _swap_refs(r.input, rng, kind)
    if kind == "l":
        return ctx, TargetLabels(int(EldAction.GiveL), int(DA.Instruct), validate_belief(1, 2, 0).index)
    return ctx, TargetLabels(int(EldAction.GiveOT), int(DA.Instruct), validate_belief(1, 1, 2).index)


def _input_edit(rule: Provenance):
    triple, action = _INPUT_EDITS[rule]

    def edit(r: Record, rng: random.Random) -> tuple[InteractionContext, TargetLabels]:
        c = r.input
        ot, loc = gives(action)
        ctx = replace(
            c,
            prev_actor=Actor.ELD,
            prev_belief=validate_belief(*triple),
            prev_eld_action=action,
            prev_eld_da=DA.Instruct,
            uttered_ot=c.uttered_ot or ot,
            uttered_l=c.uttered_l or loc,
        )
        return ctx, r.targets

    return edit


_BUILDERS = {
    Provenance.AugOut_EstabOT: _estab_ot,
    Provenance.AugOut_WrongOT: _wrong_ot,
    Provenance.AugOut_WrongLO: _wrong_lo,
    **{rule: _input_edit(rule) for rule in INPUT_RULES},
}


def _augment(c: Corpus, cfg: AugmentConfig, rules) -> Corpus:
    if not c.records:
        raise ValueError("cannot augment an empty corpus")
    pools = source_pools(c)
    out = list(c.records)
    for rule in rules:
        n = cfg.count(rule)
        if n == 0:
            continue
        pool = pools[rule]
        if not pool:
            raise InsufficientSource(rule.value)
        # One stream per rule so changing one count leaves the others alone.
        rng = random.Random(f"{cfg.seed}:{rule.value}")
        for k in range(n):
            src = pool[rng.randrange(len(pool))]
            ctx, targets = _BUILDERS[rule](src, rng)
            rec = Record(ctx, targets, rule, f"aug:{rule.value}:{k:05d}", 0)
            validate_record(rec)
            out.append(rec)
    return Corpus(out, c.schema_version)


def augment_output_states(c: Corpus, cfg: AugmentConfig) -> Corpus:
    return _augment(c, cfg, OUTPUT_RULES)


def augment_input_states(c: Corpus, cfg: AugmentConfig) -> Corpus:
    return _augment(c, cfg, INPUT_RULES)


def augment(c: Corpus, cfg: AugmentConfig) -> Corpus:
    """Output-state rules, then input-state rules; sources are the originals."""
    return augment_input_states(augment_output_states(c, cfg), cfg)


# -- splitting ---------------------------------------------------------------


def split_sizes(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """train = floor(r0 * n), val = floor(r1 * n), test takes the remainder."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three positive numbers summing to 1")
    train = math.floor(ratios[0] * n + 1e-9)
    val = math.floor(ratios[1] * n + 1e-9)
    return train, val, n - train - val


def split(
    c: Corpus,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    by_dialogue: bool = False,
    sizes: tuple[int, int, int] | None = None,
) -> tuple[Corpus, Corpus, Corpus]:
    """Deterministic shuffled partition into train/validation/test.

    ``sizes`` overrides the ratio rule with explicit counts. With
    ``by_dialogue`` whole dialogues are assigned, so part sizes only
    approximate the ratios.
    """
    rng = random.Random(seed)
    if by_dialogue:
        groups: dict[str, list[Record]] = {}
        for r in c.records:
            groups.setdefault(r.dialogue_id, []).append(r)
        keys = list(groups)
        rng.shuffle(keys)
        n_train, n_val, _ = split_sizes(len(keys), ratios)
        parts = (keys[:n_train], keys[n_train : n_train + n_val], keys[n_train + n_val :])
        return tuple(Corpus([r for k in part for r in groups[k]], c.schema_version) for part in parts)

    n = len(c.records)
    if sizes is None:
        sizes = split_sizes(n, ratios)
    elif sum(sizes) != n or min(sizes) < 0:
        raise ValueError(f"sizes {sizes} do not partition {n} records")
    order = list(range(n))
    rng.shuffle(order)
    a, b = sizes[0], sizes[0] + sizes[1]
    chunks = (sorted(order[:a]), sorted(order[a:b]), sorted(order[b:]))
    return tuple(Corpus([c.records[i] for i in chunk], c.schema_version) for chunk in chunks)


# -- synthesis ---------------------------------------------------------------


def synthesize_corpus(
    oracle,
    noise: float,
    n_dialogues: int,
    seed: int,
    max_records: int | None = None,
    max_turns: int = 40,
    ack_prob: float = 0.1,
) -> Corpus:
    """Scripted HEL against ``oracle`` as ELD; one record per ELD turn.

    ``max_records`` truncates the result to that many records (whole
    dialogues first, the last one cut short).
    """
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must lie in [0, 1]")
    rng = random.Random(seed)
    session = Session(oracle, EnvConfig(max_turns=max_turns, seed=seed))
    records: list[Record] = []
    for i in range(n_dialogues):
        goal = random_goal(rng)
        hel = ScriptedHel(goal, noise=noise, rng=random.Random(rng.getrandbits(64)), ack_prob=ack_prob)
        run_episode(session, hel, goal)
        did = f"syn-{seed}-{i:05d}"
        for k, turn in enumerate(session.transcript):
            targets = TargetLabels(int(turn.eld_move.eld_action), int(turn.eld_move.da), turn.next_belief.index)
            records.append(Record(turn.context, targets, Provenance.Synthetic, did, k))
        if max_records is not None and len(records) >= max_records:
            break
    if max_records is not None:
        records = records[:max_records]
    return Corpus(records)


def synthesize_records(oracle, noise: float, n_records: int, seed: int, max_turns: int = 40) -> Corpus:
    """Keep generating dialogues until exactly ``n_records`` records exist."""
    return synthesize_corpus(oracle, noise, 10**9, seed, max_records=n_records, max_turns=max_turns)


def belief_counts(c: Corpus, which: str = "input") -> dict[BeliefState, int]:
    if which == "input":
        cnt = Counter(r.input.prev_belief for r in c.records)
    else:
        cnt = Counter(belief_from_index(r.targets.next_belief) for r in c.records)
    return dict(cnt)
