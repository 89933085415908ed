# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

from kbqa.executor import check_validity, execute
from kbqa.perturb import Deletion, DeletionKind, PerturbationPlan, perturb_kb
from kbqa.retriever import (
    Direction, KBPath, PathStep, Source, enumerate_paths, make_candidate, paths_to_logical_forms, rank_retrieved,
)
from kbqa.scorer import OracleScorer
from kbqa.sexpr import canonical_key, entities_of, parse_sexpr
from tests.conftest import GOLD, MANNING_WORKS_AT_STANFORD, QUESTION, linked


def _retrieve(kb, *entity_ids, max_hops=2):
    return paths_to_logical_forms(enumerate_paths(kb, linked(*entity_ids), max_hops), kb)


def test_paths_from_one_entity(toy_kb):
    paths = enumerate_paths(toy_kb, linked("c_manning"))
    assert {p.steps for p in paths} == {
        (PathStep("works_at", Direction.FORWARD),),
        (PathStep("works_at", Direction.FORWARD), PathStep("works_at", Direction.INVERSE)),
        (PathStep("works_at", Direction.FORWARD), PathStep("located_in", Direction.FORWARD)),
    }
    assert paths == sorted(paths, key=KBPath.sort_key)


def test_path_bindings_match_execution(toy_kb):
    for path in enumerate_paths(toy_kb, linked("c_manning", "palo_alto")):
        assert execute(path.to_sexpr(), toy_kb) == frozenset(path.bindings(toy_kb))


def test_hop_limit_and_truncation(toy_kb):
    assert len(enumerate_paths(toy_kb, linked("c_manning"), max_hops=1)) == 1
    assert len(enumerate_paths(toy_kb, linked("c_manning"), max_paths=2)) == 2


def test_constrained_path_for_two_entities(toy_kb):
    paths = enumerate_paths(toy_kb, linked("c_manning", "palo_alto"), max_hops=1)
    constrained = [p for p in paths if p.constraint is not None]
    assert len(constrained) == 1
    assert canonical_key(constrained[0].to_sexpr()) == \
        "(AND (JOIN (R works_at) c_manning) (JOIN located_in palo_alto))"


def test_gold_form_is_retrieved(toy_kb):
    candidates = _retrieve(toy_kb, "c_manning")
    keys = [c.key for c in candidates]
    assert canonical_key(parse_sexpr(GOLD, toy_kb)) in keys
    assert "(COUNT (JOIN (R works_at) c_manning))" in keys
    assert keys == sorted(keys)
    for candidate in candidates:
        assert candidate.source == Source.RETRIEVED
        assert check_validity(candidate.expr, toy_kb).valid


def test_generated_gold_forms_are_reachable(large_kb, large_examples):
    anchored = [e for e in large_examples if entities_of(e.gold_lf)]
    assert len(anchored) >= 50
    for example in anchored:
        keys = {c.key for c in _retrieve(large_kb, *sorted(entities_of(example.gold_lf)))}
        assert canonical_key(example.gold_lf) in keys, example.question


def test_missing_fact_breaks_retrieval(toy_kb, toy_examples):
    reduced, _ = perturb_kb(toy_kb, toy_examples, PerturbationPlan(
        (Deletion(DeletionKind.FACT, MANNING_WORKS_AT_STANFORD),)))
    assert _retrieve(reduced, "c_manning") == []


def test_unknown_anchor_is_skipped(toy_kb):
    assert enumerate_paths(toy_kb, linked("mit")) == []
    assert enumerate_paths(toy_kb, linked()) == []


def test_rank_with_oracle(toy_kb):
    candidates = _retrieve(toy_kb, "c_manning")
    gold = canonical_key(parse_sexpr(GOLD, toy_kb))
    oracle = OracleScorer({QUESTION: {gold}})
    ranked = rank_retrieved(QUESTION, candidates, oracle, k=3)
    assert len(ranked) == 3
    assert ranked[0].key == gold
    assert ranked[0].score == 1.0
    assert [c.score for c in ranked[1:]] == [0.0, 0.0]


def test_candidate_item(toy_kb):
    candidate = make_candidate(parse_sexpr(GOLD, toy_kb), toy_kb, Source.BOTH)
    item = candidate.item()
    assert item.key == "(AND (JOIN (R works_at) c_manning) university)"
    assert item.text == "(AND (JOIN (R work at) C. Manning) university)"
    assert item.flags.retrieved and item.flags.constructed
