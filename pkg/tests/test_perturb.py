# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

import pytest

from kbqa.dataset import NA, NK, Category
from kbqa.executor import check_validity, execute
from kbqa.kb import validate_kb
from kbqa.perturb import (
    Deletion, DeletionKind, PerturbationError, PerturbationPlan, load_plan, perturb_kb, sample_plan, save_plan,
)
from kbqa.sexpr import parse_sexpr
from tests.conftest import MANNING_WORKS_AT_STANFORD, TOY_DIR


def _by_qid(relabeled):
    return {e.qid: e for e in relabeled.examples}


def test_deleted_fact_leaves_valid_form_without_answer(toy_kb, toy_examples):
    plan = PerturbationPlan((Deletion(DeletionKind.FACT, MANNING_WORKS_AT_STANFORD),))
    reduced, relabeled = perturb_kb(toy_kb, toy_examples, plan)

    example = _by_qid(relabeled)["toy-1"]
    assert example.gold_lf == toy_examples[0].gold_lf
    assert example.gold_answer is NA
    assert example.category == Category.MISSING_FACT
    assert example.gold_answer_ideal == frozenset({"stanford"})
    assert MANNING_WORKS_AT_STANFORD not in reduced.facts
    assert MANNING_WORKS_AT_STANFORD in toy_kb.facts


def test_deleted_relation_gives_no_knowledge(toy_kb, toy_examples):
    plan = PerturbationPlan((Deletion(DeletionKind.RELATION, "works_at"),))
    reduced, relabeled = perturb_kb(toy_kb, toy_examples, plan)

    example = _by_qid(relabeled)["toy-1"]
    assert example.gold_lf is NK
    assert example.gold_answer is NA
    assert example.category == Category.MISSING_RELATION
    assert _by_qid(relabeled)["toy-2"].category == Category.ANSWERABLE
    assert "works_at" not in reduced.relations
    assert len(reduced.facts) == 1


def test_deleted_mentioned_entity(toy_kb, toy_examples):
    plan = PerturbationPlan((Deletion(DeletionKind.ENTITY, "c_manning"),))
    reduced, relabeled = perturb_kb(toy_kb, toy_examples, plan)

    assert _by_qid(relabeled)["toy-1"].category == Category.MISSING_MENTION_ENTITY
    assert "c_manning" not in reduced.entities
    assert validate_kb(reduced).ok


def test_deleted_answer_entity(toy_kb, toy_examples):
    plan = PerturbationPlan((Deletion(DeletionKind.ENTITY, "palo_alto"),))
    _, relabeled = perturb_kb(toy_kb, toy_examples, plan)

    example = _by_qid(relabeled)["toy-2"]
    assert example.category == Category.MISSING_OTHER_ENTITY
    assert example.gold_answer is NA
    assert example.gold_lf is not NK


def test_type_deletion_cascades(toy_kb, toy_examples):
    plan = PerturbationPlan((Deletion(DeletionKind.TYPE, "university"),))
    reduced, relabeled = perturb_kb(toy_kb, toy_examples, plan)

    assert set(reduced.relations) == set()
    assert set(reduced.entities) == {"c_manning", "palo_alto"}
    assert not reduced.facts
    assert validate_kb(reduced).ok
    assert {e.category for e in relabeled.examples} == {Category.MISSING_TYPE, Category.MISSING_RELATION}


def test_empty_plan_is_identity(toy_kb, toy_examples):
    reduced, relabeled = perturb_kb(toy_kb, toy_examples, PerturbationPlan())
    assert reduced == toy_kb
    for before, after in zip(toy_examples, relabeled.examples):
        assert after.category == Category.ANSWERABLE
        assert after.gold_answer == before.gold_answer


def test_unanswerable_source_example_is_rejected(toy_kb, toy_examples):
    reduced, relabeled = perturb_kb(toy_kb, toy_examples, PerturbationPlan(
        (Deletion(DeletionKind.FACT, MANNING_WORKS_AT_STANFORD),)))
    with pytest.raises(PerturbationError):
        perturb_kb(reduced, relabeled.examples, PerturbationPlan())


def test_unknown_target_is_rejected(toy_kb, toy_examples):
    with pytest.raises(PerturbationError, match="does not exist"):
        perturb_kb(toy_kb, toy_examples, PerturbationPlan((Deletion(DeletionKind.ENTITY, "mit"),)))


def test_sampled_plans_keep_integrity_and_sound_categories(synthetic_kb, synthetic_examples):
    counts = {"type": 1, "relation": 1, "entity": 2, "fact": 4}
    plan = sample_plan(synthetic_kb, synthetic_examples, counts, seed=3)
    reduced, relabeled = perturb_kb(synthetic_kb, synthetic_examples, plan)

    assert validate_kb(reduced).ok
    assert set(reduced.types) <= set(synthetic_kb.types)
    assert set(reduced.relations) <= set(synthetic_kb.relations)
    assert set(reduced.entities) <= set(synthetic_kb.entities)
    assert reduced.facts <= synthetic_kb.facts

    for original, example in zip(synthetic_examples, relabeled.examples):
        if example.category.schema_gap:
            assert not check_validity(original.gold_lf, reduced).valid
        elif example.category.data_gap:
            assert check_validity(example.gold_lf, reduced).valid
            assert execute(example.gold_lf, reduced) == frozenset()
        else:
            assert execute(example.gold_lf, reduced) == example.gold_answer
        assert example.gold_answer_ideal == original.gold_answer


def test_sampling_is_deterministic(synthetic_kb, synthetic_examples):
    counts = {DeletionKind.FACT: 5, DeletionKind.ENTITY: 1}
    first = sample_plan(synthetic_kb, synthetic_examples, counts, seed=9)
    second = sample_plan(synthetic_kb, synthetic_examples, counts, seed=9)
    assert first == second
    assert perturb_kb(synthetic_kb, synthetic_examples, first)[0] == \
        perturb_kb(synthetic_kb, synthetic_examples, second)[0]


def test_plan_file(tmp_path, synthetic_kb, synthetic_examples):
    plan = sample_plan(synthetic_kb, synthetic_examples, {"fact": 3, "relation": 1}, seed=1)
    save_plan(tmp_path / "plan.jsonl", plan)
    assert load_plan(tmp_path / "plan.jsonl") == plan


def test_demo_plan(toy_kb):
    plan = load_plan(TOY_DIR / "plan.jsonl")
    assert plan.targets(DeletionKind.FACT) == {MANNING_WORKS_AT_STANFORD}


def test_invalid_plan_line(tmp_path):
    path = tmp_path / "plan.jsonl"
    path.write_text('{"seed": 0}\n{"kind": "planet", "target": "x"}\n')
    with pytest.raises(PerturbationError, match=":2:"):
        load_plan(path)


@pytest.mark.parametrize("line", [
    '{"kind": "fact", "target": ["c_manning", "works_at", 7]}',
    '{"kind": "fact", "target": ["c_manning", "works_at"]}',
    '{"kind": "fact", "target": "c_manning"}',
    '{"seed": "many"}',
])
def test_malformed_plan_is_a_data_error(tmp_path, line):
    path = tmp_path / "plan.jsonl"
    path.write_text(line + "\n")
    with pytest.raises(PerturbationError, match=":1:"):
        load_plan(path)


def test_relabeled_gold_still_parses(toy_kb, toy_examples):
    plan = PerturbationPlan((Deletion(DeletionKind.FACT, MANNING_WORKS_AT_STANFORD),))
    reduced, relabeled = perturb_kb(toy_kb, toy_examples, plan)
    lf = _by_qid(relabeled)["toy-1"].gold_lf
    assert parse_sexpr("(AND university (JOIN (R works_at) c_manning))", reduced) == lf
