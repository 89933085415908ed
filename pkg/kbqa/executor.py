# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

"""
Set-semantics execution of logical forms and schema-level type checking.
"""

import logging
import operator

from dataclasses import dataclass
from typing import Optional, Union

from kbqa.kb import KnowledgeBase, Literal, LiteralKind
from kbqa.sexpr import (
    And, ArgMax, ArgMin, Class, Cmp, CmpOp, Count, Entity, Forward, Inverse, Join,
    print_sexpr,
)


COUNT_KIND = "count"

_COMPARATORS = {
    CmpOp.LT: operator.lt,
    CmpOp.LE: operator.le,
    CmpOp.GT: operator.gt,
    CmpOp.GE: operator.ge,
}


class ExecutionError(Exception):
    pass


@dataclass(frozen=True)
class TypingResult:
    valid: bool
    # frozenset of type ids, a LiteralKind or COUNT_KIND
    kind: Union[frozenset, LiteralKind, str, None] = None
    failure_reason: Optional[str] = None

    @classmethod
    def ok(cls, kind):
        return cls(True, kind)

    @classmethod
    def fail(cls, rule, node):
        return cls(False, None, f"{rule} at {print_sexpr(node)}")

    @property
    def is_entity_kind(self):
        return self.valid and isinstance(self.kind, frozenset)


def _relation(kb, relation):
    return kb.relations.get(relation) if isinstance(relation, str) else None


def _check(expr, kb, cache):
    if expr in cache:
        return cache[expr]

    match expr:
        case Class(type_id):
            result = (TypingResult.ok(frozenset({type_id})) if type_id in kb.types
                      else TypingResult.fail(f"unknown type '{type_id}'", expr))
        case Entity(entity_id):
            result = (TypingResult.ok(kb.entities[entity_id].types) if entity_id in kb.entities
                      else TypingResult.fail(f"unknown entity '{entity_id}'", expr))
        case Literal(kind=kind):
            result = TypingResult.ok(kind)
        case Join(ref, child):
            result = _check_join(expr, ref, child, kb, cache)
        case And(left, right):
            lhs, rhs = _check(left, kb, cache), _check(right, kb, cache)
            if not lhs.valid:
                result = lhs
            elif not rhs.valid:
                result = rhs
            elif not (lhs.is_entity_kind and rhs.is_entity_kind):
                result = TypingResult.fail("AND operands must be entity sets", expr)
            elif not lhs.kind & rhs.kind:
                result = TypingResult.fail("empty type intersection", expr)
            else:
                result = TypingResult.ok(lhs.kind & rhs.kind)
        case Count(child):
            inner = _check(child, kb, cache)
            result = TypingResult.ok(COUNT_KIND) if inner.valid else inner
        case ArgMin(child, relation) | ArgMax(child, relation):
            inner = _check(child, kb, cache)
            definition = _relation(kb, relation)
            if not inner.valid:
                result = inner
            elif definition is None:
                result = TypingResult.fail(f"unknown relation '{relation}'", expr)
            elif not inner.is_entity_kind or definition.domain not in inner.kind:
                result = TypingResult.fail(f"operand lacks domain type '{definition.domain}'", expr)
            elif definition.literal_range != LiteralKind.NUMBER:
                result = TypingResult.fail(f"relation '{relation}' is not number-valued", expr)
            else:
                result = TypingResult.ok(frozenset({definition.domain}))
        case Cmp(_, relation, value):
            definition = _relation(kb, relation)
            if definition is None:
                result = TypingResult.fail(f"unknown relation '{relation}'", expr)
            elif definition.literal_range != LiteralKind.NUMBER:
                result = TypingResult.fail(f"relation '{relation}' is not number-valued", expr)
            elif not isinstance(value, Literal) or value.kind != LiteralKind.NUMBER:
                result = TypingResult.fail("comparison value must be a number", expr)
            else:
                result = TypingResult.ok(frozenset({definition.domain}))
        case _:
            result = TypingResult.fail("unfilled slot", expr)

    cache[expr] = result
    return result


def _check_join(expr, ref, child, kb, cache):
    definition = _relation(kb, ref.relation)
    if definition is None:
        return TypingResult.fail(f"unknown relation '{ref.relation}'", expr)

    inner = _check(child, kb, cache)
    if not inner.valid:
        return inner

    if isinstance(ref, Forward):
        if definition.literal_range is not None:
            if inner.kind != definition.literal_range:
                return TypingResult.fail(f"argument is not a {definition.literal_range} literal", expr)
        elif not inner.is_entity_kind or definition.range not in inner.kind:
            return TypingResult.fail(f"argument lacks range type '{definition.range}'", expr)
        return TypingResult.ok(frozenset({definition.domain}))

    if not inner.is_entity_kind or definition.domain not in inner.kind:
        return TypingResult.fail(f"argument lacks domain type '{definition.domain}'", expr)
    if definition.literal_range is not None:
        return TypingResult.ok(definition.literal_range)
    return TypingResult.ok(frozenset({definition.range}))


def check_validity(expr, kb: KnowledgeBase, cache=None) -> TypingResult:
    """
    Infer the result kind of a logical form bottom-up from the KB schema.

    Only schema definitions and entity type-sets are read, never facts.
    An optional cache dict (node -> TypingResult) can be shared between
    calls over the same KB.
    """
    return _check(expr, kb, {} if cache is None else cache)


def _number_values(kb, subject, relation):
    return [o.fraction for o in kb.objects(subject, relation)
            if isinstance(o, Literal) and o.kind == LiteralKind.NUMBER]


def _extreme(kb, items, relation, pick):
    best = {}
    for item in items:
        if values := _number_values(kb, item, relation):
            best[item] = pick(values)
    if not best:
        return frozenset()
    target = pick(best.values())
    return frozenset(item for item, value in best.items() if value == target)


def _denote(expr, kb):
    match expr:
        case Class(type_id):
            return kb.instances(type_id)
        case Entity(entity_id):
            return frozenset({entity_id})
        case Literal():
            return frozenset({expr})
        case Join(Forward(relation), child):
            return frozenset(s for y in _denote(child, kb) for s in kb.subjects(relation, y))
        case Join(Inverse(relation), child):
            return frozenset(o for x in _denote(child, kb) for o in kb.objects(x, relation))
        case And(left, right):
            return _denote(left, kb) & _denote(right, kb)
        case Count(child):
            return frozenset({Literal.number(len(_denote(child, kb)))})
        case ArgMax(child, relation):
            return _extreme(kb, _denote(child, kb), relation, max)
        case ArgMin(child, relation):
            return _extreme(kb, _denote(child, kb), relation, min)
        case Cmp(op, relation, value):
            compare = _COMPARATORS[op]
            bound = value.fraction
            return frozenset(
                fact.subject for fact in kb.facts_of_relation(relation)
                if isinstance(fact.object, Literal) and fact.object.kind == LiteralKind.NUMBER
                and compare(fact.object.fraction, bound)
            )
    raise ExecutionError(f"cannot execute {print_sexpr(expr)}")


def _answer_text(element):
    return element.value if isinstance(element, Literal) else element


def execute(expr, kb: KnowledgeBase) -> frozenset:
    """
    Evaluate a valid logical form to its answer set.

    Answers are entity ids and canonical literal values; COUNT yields a
    single number literal.
    """
    typing = check_validity(expr, kb)
    if not typing.valid:
        raise ExecutionError(f"invalid logical form: {typing.failure_reason}")
    return frozenset(_answer_text(e) for e in _denote(expr, kb))


def execute_or_empty(expr, kb: KnowledgeBase) -> frozenset:
    """
    Execute a logical form, treating an invalid one as having an empty answer.
    """
    try:
        return execute(expr, kb)
    except ExecutionError as e:
        logging.debug(f"Treating as empty: {e}")
        return frozenset()
