# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

import operator
import random

import pytest

from kbqa.executor import COUNT_KIND, ExecutionError, check_validity, execute, execute_or_empty
from kbqa.kb import EntityDef, Fact, KnowledgeBase, Literal, LiteralKind, RelationDef, TypeDef
from kbqa.sexpr import (
    And, ArgMax, ArgMin, Class, Cmp, CmpOp, Count, Entity, Forward, Inverse, Join, parse_sexpr, walk,
)
from kbqa.synthetic import random_expr, random_kb


CITY_KB = KnowledgeBase(
    [TypeDef("city", "city"), TypeDef("country", "country")],
    [
        RelationDef("in_country", "in country", "city", "country"),
        RelationDef("population", "population", "city", LiteralKind.NUMBER),
    ],
    [
        EntityDef("paris", "Paris", frozenset({"city"})),
        EntityDef("lyon", "Lyon", frozenset({"city"})),
        EntityDef("nice", "Nice", frozenset({"city"})),
        EntityDef("france", "France", frozenset({"country"})),
    ],
    [
        Fact("paris", "in_country", "france"),
        Fact("lyon", "in_country", "france"),
        Fact("paris", "population", Literal.number(2100000)),
        Fact("lyon", "population", Literal.number(520000)),
        Fact("nice", "population", Literal.number(520000)),
    ],
)


def _oracle(expr, kb):
    """
    Brute-force denotation computed by scanning every fact.
    """
    facts = kb.fact_list
    match expr:
        case Class(type_id):
            return {e.id for e in kb.entity_defs if type_id in e.types}
        case Entity(entity_id):
            return {entity_id}
        case Literal():
            return {expr}
        case Join(Forward(relation), child):
            values = _oracle(child, kb)
            return {f.subject for f in facts if f.relation == relation and f.object in values}
        case Join(Inverse(relation), child):
            values = _oracle(child, kb)
            return {f.object for f in facts if f.relation == relation and f.subject in values}
        case And(left, right):
            return _oracle(left, kb) & _oracle(right, kb)
        case Count(child):
            return {Literal.number(len(_oracle(child, kb)))}
        case ArgMax(child, relation) | ArgMin(child, relation):
            pick = max if isinstance(expr, ArgMax) else min
            members = _oracle(child, kb)
            values = {}
            for f in facts:
                if f.relation == relation and f.subject in members:
                    values.setdefault(f.subject, []).append(f.object.fraction)
            if not values:
                return set()
            best = pick(pick(v) for v in values.values())
            return {s for s, v in values.items() if pick(v) == best}
        case Cmp(op, relation, value):
            compare = {CmpOp.LT: operator.lt, CmpOp.LE: operator.le,
                       CmpOp.GT: operator.gt, CmpOp.GE: operator.ge}[op]
            return {f.subject for f in facts if f.relation == relation and compare(f.object.fraction, value.fraction)}
    raise AssertionError(f"unexpected node {expr!r}")


def _answers(values):
    return frozenset(v.value if isinstance(v, Literal) else v for v in values)


class TestExecute:
    def test_running_example(self, toy_kb):
        assert execute(parse_sexpr("(AND university (JOIN (R works_at) c_manning))", toy_kb), toy_kb) == \
            frozenset({"stanford"})

    def test_count(self, toy_kb):
        assert execute(parse_sexpr("(COUNT (JOIN works_at stanford))", toy_kb), toy_kb) == frozenset({"1"})

    def test_count_of_empty_set(self, toy_kb):
        no_facts = KnowledgeBase(toy_kb.type_defs, toy_kb.relation_defs, toy_kb.entity_defs)
        assert execute(parse_sexpr("(COUNT (JOIN works_at stanford))", toy_kb), no_facts) == frozenset({"0"})

    def test_two_hops(self, toy_kb):
        lf = parse_sexpr("(JOIN (R located_in) (JOIN (R works_at) c_manning))", toy_kb)
        assert execute(lf, toy_kb) == frozenset({"palo_alto"})

    def test_superlatives_keep_ties(self):
        assert execute(ArgMax(Class("city"), "population"), CITY_KB) == frozenset({"paris"})
        assert execute(ArgMin(Class("city"), "population"), CITY_KB) == frozenset({"lyon", "nice"})

    def test_superlative_without_values_is_empty(self):
        assert execute(ArgMax(Class("city"), "population"), KnowledgeBase(
            CITY_KB.type_defs, CITY_KB.relation_defs, CITY_KB.entity_defs)) == frozenset()

    def test_comparative(self):
        assert execute(Cmp(CmpOp.GT, "population", Literal.number(520000)), CITY_KB) == frozenset({"paris"})
        assert execute(Cmp(CmpOp.GE, "population", Literal.number(520000)), CITY_KB) == \
            frozenset({"paris", "lyon", "nice"})

    def test_literal_answers(self):
        lf = Join(Inverse("population"), Entity("nice"))
        assert execute(lf, CITY_KB) == frozenset({"520000"})

    def test_invalid_form_raises(self, toy_kb):
        with pytest.raises(ExecutionError, match="unknown relation"):
            execute(parse_sexpr("(JOIN born_in stanford)", toy_kb), toy_kb)
        assert execute_or_empty(parse_sexpr("(JOIN born_in stanford)", toy_kb), toy_kb) == frozenset()

    def test_matches_brute_force(self):
        for seed in range(5):
            kb = random_kb(seed=seed, n_entities=20)
            rng = random.Random(seed)
            for _ in range(100):
                expr = random_expr(kb, rng)
                assert execute(expr, kb) == _answers(_oracle(expr, kb)), expr

    def test_deleting_facts_never_adds_answers(self):
        for seed in range(5):
            kb = random_kb(seed=seed, n_entities=20, density=0.5)
            rng = random.Random(seed)
            exprs = [e for e in (random_expr(kb, rng) for _ in range(300))
                     if not any(isinstance(node, (Count, ArgMin, ArgMax)) for node in walk(e))]
            assert len(exprs) > 20
            for keep in (0.8, 0.5, 0.0):
                reduced = KnowledgeBase(kb.type_defs, kb.relation_defs, kb.entity_defs,
                                        [f for f in kb.fact_list if rng.random() < keep])
                for expr in exprs:
                    assert execute(expr, reduced) <= execute(expr, kb), expr


class TestCheckValidity:
    def test_valid_kinds(self, toy_kb):
        assert check_validity(parse_sexpr("(AND university (JOIN (R works_at) c_manning))", toy_kb), toy_kb).kind == \
            frozenset({"university"})
        assert check_validity(parse_sexpr("(COUNT university)", toy_kb), toy_kb).kind == COUNT_KIND
        assert check_validity(Join(Inverse("population"), Entity("nice")), CITY_KB).kind == LiteralKind.NUMBER

    @pytest.mark.parametrize("text, reason", [
        ("(JOIN works_at palo_alto)", "range type 'university'"),
        ("(JOIN (R works_at) stanford)", "domain type 'researcher'"),
        ("(AND university city)", "empty type intersection"),
        ("(AND university (COUNT city))", "entity sets"),
        ("(JOIN works_at mit)", "unknown entity 'mit'"),
        ("(AND planet city)", "unknown type 'planet'"),
        ("(ge works_at 3)", "not number-valued"),
    ])
    def test_type_errors(self, toy_kb, text, reason):
        result = check_validity(parse_sexpr(text, toy_kb), toy_kb)
        assert not result.valid
        assert reason in result.failure_reason

    def test_ignores_facts(self, toy_kb):
        no_facts = KnowledgeBase(toy_kb.type_defs, toy_kb.relation_defs, toy_kb.entity_defs)
        lf = parse_sexpr("(AND university (JOIN (R works_at) c_manning))", toy_kb)
        assert check_validity(lf, no_facts).valid
        assert execute(lf, no_facts) == frozenset()

    def test_shared_cache(self, toy_kb):
        cache = {}
        lf = parse_sexpr("(AND university (JOIN (R works_at) c_manning))", toy_kb)
        first = check_validity(lf, toy_kb, cache)
        assert lf in cache
        assert check_validity(lf, toy_kb, cache) is first

    def test_random_expressions_are_valid(self, synthetic_kb):
        rng = random.Random(4)
        for _ in range(200):
            assert check_validity(random_expr(synthetic_kb, rng), synthetic_kb).valid
