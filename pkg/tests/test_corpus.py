from __future__ import annotations

import json

import pytest

from musim.corpus import (
    AUGMENT_RULES,
    AugmentConfig,
    Corpus,
    InsufficientSource,
    InvalidRecord,
    ParseError,
    Provenance,
    Record,
    augment,
    augment_input_states,
    augment_output_states,
    belief_counts,
    check_corpus,
    dumps_corpus,
    largest_remainder,
    load_corpus,
    load_preset,
    loads_corpus,
    preset_config,
    save_corpus,
    source_pools,
    split,
    split_sizes,
    synthesize_corpus,
    synthesize_records,
)
from musim.domain import ALL_BELIEFS, Actor, BeliefState, DialogueAct, EldAction, HelAction, TargetRef, WorldGoal
from musim.features import InteractionContext, TargetLabels, encode_input
from musim.io import SchemaMismatch
from musim.oracle import OraclePolicy

GOAL = WorldGoal.make("bowl", "cabinet", "small_bowl")
DA, A, E = DialogueAct, HelAction, EldAction


def verify_ot_record(did="d0", turn=0, obj_type="bowl") -> Record:
    ctx = InteractionContext(
        prev_actor=None if turn == 0 else Actor.ELD,
        uttered_ot=True,
        uttered_l=False,
        prev_belief=BeliefState(1, 0, 0),
        hel_action=A.VerifyOT,
        hel_da=DA.Check,
        prev_eld_action=E.NoAction,
        prev_eld_da=DA.NoUtterance,
        goal=GOAL,
        hel_mentions=(TargetRef.obj(None, obj_type),),
    )
    return Record(ctx, TargetLabels(5, 6, 3), Provenance.Original, did, turn)


@pytest.fixture(scope="module")
def small():
    return synthesize_corpus(OraclePolicy(), 0.3, 30, seed=5)


@pytest.fixture(scope="module")
def rich():
    """Noisy enough that every belief state appears among the inputs."""
    return synthesize_corpus(OraclePolicy(), 0.5, 200, seed=0)


# -- file format ---------------------------------------------------------------


def test_round_trip(tmp_path, small):
    c = Corpus(small.records[:3])
    path = tmp_path / "c.jsonl"
    save_corpus(c, path)
    assert load_corpus(path) == c
    assert dumps_corpus(load_corpus(path)) == path.read_text()


def test_full_round_trip(small):
    assert loads_corpus(dumps_corpus(small)) == small


def test_empty_file_is_empty_corpus(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert len(load_corpus(tmp_path / "e.jsonl")) == 0


def _mutated(small, fn) -> str:
    lines = dumps_corpus(Corpus(small.records[:2])).splitlines()
    rec = json.loads(lines[1])
    fn(rec)
    lines[1] = json.dumps(rec)
    return "\n".join(lines) + "\n"


def test_invalid_belief_rejected(small):
    def set_001(rec):
        rec["input"]["prev_belief"] = [0, 0, 1]

    with pytest.raises(InvalidRecord) as e:
        loads_corpus(_mutated(small, set_001))
    assert "belief" in e.value.reason


def test_incoherent_targets_rejected(small):
    def incoherent(rec):
        rec["targets"]["eld_action"], rec["targets"]["eld_da"] = 0, 1

    with pytest.raises(InvalidRecord):
        loads_corpus(_mutated(small, incoherent))


def test_parse_error_names_line(small):
    text = dumps_corpus(Corpus(small.records[:2])).splitlines()
    text[2] = "{not json"
    with pytest.raises(ParseError) as e:
        loads_corpus("\n".join(text))
    assert e.value.line == 3


def test_schema_mismatch(small):
    lines = dumps_corpus(Corpus(small.records[:1])).splitlines()
    head = json.loads(lines[0])
    head["schema_version"] = "99"
    with pytest.raises(SchemaMismatch):
        loads_corpus("\n".join([json.dumps(head)] + lines[1:]))
    head["schema_version"], head["feature_schema"] = "1", "deadbeef"
    with pytest.raises(SchemaMismatch):
        loads_corpus("\n".join([json.dumps(head)] + lines[1:]))


def test_dialogue_contiguity():
    a0, b0, a1 = verify_ot_record("a", 0), verify_ot_record("b", 0), verify_ot_record("a", 1)
    check_corpus(Corpus([a0, a1, b0]))
    with pytest.raises(InvalidRecord):
        check_corpus(Corpus([a0, b0, a1]))
    with pytest.raises(InvalidRecord):
        check_corpus(Corpus([a1, a0]))


# -- output-state augmentation -------------------------------------------------


def test_zero_counts_are_identity(small):
    cfg = AugmentConfig({}, seed=1)
    assert augment(small, cfg) == small
    assert augment_output_states(small, cfg) == small
    assert augment_input_states(small, cfg) == small


def test_estab_ot_rule():
    out = augment_output_states(Corpus([verify_ot_record()]), AugmentConfig({"AugOut_EstabOT": 1}))
    new = out.records[-1]
    assert new.provenance is Provenance.AugOut_EstabOT
    assert (new.input.hel_action, new.input.hel_da) == (A.RequestOT, DA.QueryW)
    assert ALL_BELIEFS[new.targets.next_belief].as_tuple() in {(0, 0, 0), (0, 1, 0)}
    assert (new.targets.eld_action, new.targets.eld_da) == (int(E.GiveOT), int(DA.Instruct))


def test_wrong_ot_rule():
    src = verify_ot_record()
    out = augment_output_states(Corpus([src]), AugmentConfig({"AugOut_WrongOT": 1}))
    new = out.records[-1]
    assert all(t.object_type != "bowl" for t in new.input.hel_mentions)
    assert ALL_BELIEFS[new.targets.next_belief].ot == 2
    assert out.records[0] is src


def test_wrong_lo_rule(small):
    out = augment_output_states(small, AugmentConfig({"AugOut_WrongLO": 20}, seed=3))
    for r in out.records[len(small):]:
        assert ALL_BELIEFS[r.targets.next_belief].as_tuple() in {(1, 2, 0), (1, 1, 2)}
        assert r.targets.eld_da == int(DA.Instruct)


def test_insufficient_source():
    with pytest.raises(InsufficientSource) as e:
        augment(Corpus([verify_ot_record()]), AugmentConfig({"AugIn_112": 1}))
    assert e.value.rule == "AugIn_112"


def test_unknown_rule_rejected():
    with pytest.raises(ValueError):
        AugmentConfig({"AugOut_Nope": 1})


# -- input-state augmentation --------------------------------------------------


@pytest.mark.parametrize(
    "rule, belief, action",
    [
        ("AugIn_112", (1, 1, 2), E.GiveOT),
        ("AugIn_120", (1, 2, 0), E.GiveL),
        ("AugIn_210", (2, 1, 0), E.GiveOT),
        ("AugIn_220", (2, 2, 0), E.GiveOTL),
        ("AugIn_200", (2, 0, 0), E.GiveOT),
    ],
)
def test_input_rules(small, rule, belief, action):
    out = augment_input_states(small, AugmentConfig({rule: 5}, seed=2))
    assert out.records[: len(small)] == small.records
    for r in out.records[len(small):]:
        assert r.input.prev_belief.as_tuple() == belief
        assert (r.input.prev_eld_da, r.input.prev_eld_action) == (DA.Instruct, action)
        encode_input(r.input)


def test_all_states_covered_after_augmentation(rich):
    first_nine = {b for b in ALL_BELIEFS[:9]}
    assert first_nine <= set(belief_counts(rich, "input"))
    # Drop the states the input rules are meant to fill in, then restore them.
    rare = {BeliefState(1, 1, 2), BeliefState(1, 2, 0), BeliefState(2, 0, 0), BeliefState(2, 1, 0), BeliefState(2, 2, 0)}
    source = Corpus([r for r in rich.records if r.input.prev_belief not in rare])
    out = augment(source, AugmentConfig({rule.value: 1 for rule in AUGMENT_RULES}, seed=0))
    assert set(belief_counts(out, "input")) == set(ALL_BELIEFS)


def test_augmentation_counts_and_determinism(small):
    counts = {"AugOut_EstabOT": 4, "AugOut_WrongOT": 3, "AugIn_200": 2, "AugIn_120": 1}
    a = augment(small, AugmentConfig(counts, seed=9))
    b = augment(small, AugmentConfig(counts, seed=9))
    assert len(a) == len(small) + 10
    assert a == b
    assert augment(small, AugmentConfig(counts, seed=10)) != a
    # changing one rule's count does not disturb the others
    c = augment(small, AugmentConfig({**counts, "AugIn_120": 2}, seed=9))
    assert [r for r in c.records if r.provenance.value != "AugIn_120"] == [
        r for r in a.records if r.provenance.value != "AugIn_120"
    ]


def test_profile_preset_total():
    p = load_preset("paper-profile")
    assert sum(p["per_rule_counts"].values()) == 1239
    assert preset_config(seed=4).total == 1239
    with pytest.raises(ValueError):
        load_preset("nope")


def test_profile_preset_is_derived_from_its_reference():
    p = load_preset("paper-profile")
    ref = p["reference_corpus"]
    source = synthesize_records(OraclePolicy(), ref["noise"], ref["records"], ref["seed"])
    pools = {rule.value: len(pool) for rule, pool in source_pools(source).items()}
    assert pools == p["source_pool_sizes"]
    assert largest_remainder(pools, p["total"]) == p["per_rule_counts"]


def test_largest_remainder():
    assert largest_remainder({"a": 1, "b": 1, "c": 1}, 10) == {"a": 4, "b": 3, "c": 3}
    assert sum(largest_remainder({"x": 486, "y": 197, "z": 7}, 1239).values()) == 1239


# -- split ---------------------------------------------------------------------


def test_split_sizes():
    assert split_sizes(10, (0.8, 0.1, 0.1)) == (8, 1, 1)
    assert split_sizes(1932, (0.8, 0.1, 0.1)) == (1545, 193, 194)
    with pytest.raises(ValueError):
        split_sizes(10, (0.5, 0.5, 0.1))


def test_split_is_deterministic_partition(small):
    parts = split(small, (0.8, 0.1, 0.1), seed=4)
    again = split(small, (0.8, 0.1, 0.1), seed=4)
    assert parts == again
    ids = [id(r) for p in parts for r in p.records]
    assert sorted(ids) == sorted(id(r) for r in small.records)
    assert [len(p) for p in parts] == list(split_sizes(len(small), (0.8, 0.1, 0.1)))


def test_split_explicit_sizes(small):
    n = len(small)
    parts = split(small, sizes=(n - 3, 2, 1))
    assert [len(p) for p in parts] == [n - 3, 2, 1]
    with pytest.raises(ValueError):
        split(small, sizes=(1, 1, 1))


def test_split_by_dialogue(small):
    train, val, test = split(small, by_dialogue=True, seed=1)
    ids = [{r.dialogue_id for r in p.records} for p in (train, val, test)]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
    assert len(train) + len(val) + len(test) == len(small)


# -- synthesis -----------------------------------------------------------------


def test_noise_free_dialogue():
    c = synthesize_corpus(OraclePolicy(), 0.0, 1, seed=0, ack_prob=0.0)
    beliefs = [ALL_BELIEFS[r.targets.next_belief] for r in c.records]
    known = [b.ot + b.loc + b.obj for b in beliefs]
    assert known == sorted(known)
    assert beliefs[-1] == BeliefState(1, 1, 1)
    assert c.records[-1].targets.eld_da == int(DA.Acknowledge)
    assert all(r.provenance is Provenance.Synthetic for r in c.records)


def test_noisy_corpus_covers_all_states(rich):
    assert set(belief_counts(rich, "input")) == set(ALL_BELIEFS)


def test_synthesis_deterministic():
    a = synthesize_records(OraclePolicy(), 0.2, 150, seed=7)
    assert len(a) == 150
    assert a == synthesize_records(OraclePolicy(), 0.2, 150, seed=7)
    with pytest.raises(ValueError):
        synthesize_corpus(OraclePolicy(), 1.5, 1, seed=0)
