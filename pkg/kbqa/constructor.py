# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

"""
Sketch-filling candidate construction: rank sketches from the inventory,
retrieve candidate schema elements and ground every well-typed combination.
"""

import logging

from dataclasses import dataclass
from itertools import product

from kbqa.executor import check_validity
from kbqa.kb import KnowledgeBase, Literal
from kbqa.retriever import Source, make_candidate
from kbqa.scorer import ScoringItem
from kbqa.sexpr import (
    And, ArgMax, ArgMin, Class, Cmp, Count, Entity, EntitySlot, Join, LiteralSlot, RelationSlot, Sketch,
    TypeSlot, fill_literals, inventory_key,
)
from kbqa.utils import extract_numbers


DEFAULT_MAX_GROUNDINGS = 5000


@dataclass(frozen=True)
class SketchBeam:
    # (Sketch, score) in descending score order
    entries: tuple = ()

    @property
    def sketches(self):
        return [sketch for sketch, _ in self.entries]

    @property
    def keys(self):
        return [inventory_key(sketch.tree) for sketch, _ in self.entries]

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class SchemaCandidates:
    types: tuple = ()
    relations: tuple = ()

    @property
    def type_ids(self):
        return [type_id for type_id, _ in self.types]

    @property
    def relation_ids(self):
        return [relation_id for relation_id, _ in self.relations]


def generate_sketches(question: str, inventory, ranker, beam: int = 10) -> SketchBeam:
    """
    Rank every inventory entry, keep the top beam and fill their number slots
    from the question; sketches that cannot be filled are dropped.
    """
    scored = [(ranker.score(question, ScoringItem(entry.key, entry.key)), entry) for entry in inventory]
    scored.sort(key=lambda item: (-item[0], item[1].key))

    numbers = extract_numbers(question)
    entries = []
    for score, entry in scored[:beam]:
        sketch = fill_literals(entry.sketch, numbers)
        if sketch is None:
            logging.debug(f"Dropping sketch {entry.key}: not enough numbers in question")
            continue
        entries.append((sketch, score))
    return SketchBeam(tuple(entries))


def _rank_schema(question, elements, scorer, k):
    scored = [(element.id, scorer.score(question, ScoringItem(element.id, element.label))) for element in elements]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return tuple(scored[:k])


def retrieve_schema(question: str, kb: KnowledgeBase, type_scorer, relation_scorer, k: int = 10) -> SchemaCandidates:
    return SchemaCandidates(
        _rank_schema(question, kb.type_defs, type_scorer, k),
        _rank_schema(question, kb.relation_defs, relation_scorer, k),
    )


class _Grounder():
    """
    Bottom-up grounding with one memo entry per distinct sub-sketch.
    """
    def __init__(self, schema, linked, kb, cap, check):
        self.types = sorted(schema.type_ids)
        self.relations = sorted(schema.relation_ids)
        self.entities = sorted(linked.entity_ids)
        self.kb = kb
        self.cap = cap
        self.check = check
        self.memo = {}
        self.typing = {}
        self.truncated = False

    def keep(self, expr):
        return not self.check or check_validity(expr, self.kb, self.typing).valid

    def relations_for(self, relation):
        return self.relations if isinstance(relation, RelationSlot) else [relation]

    def collect(self, exprs):
        result = []
        for expr in exprs:
            if self.keep(expr):
                result.append(expr)
                if len(result) >= self.cap:
                    self.truncated = True
                    break
        return result

    def ground(self, node):
        if node in self.memo:
            return self.memo[node]

        match node:
            case TypeSlot():
                result = self.collect(Class(t) for t in self.types)
            case EntitySlot():
                result = self.collect(Entity(e) for e in self.entities)
            case LiteralSlot():
                result = []
            case Join(ref, child):
                result = self.collect(
                    Join(type(ref)(r), c) for r in self.relations_for(ref.relation) for c in self.ground(child))
            case And(left, right):
                result = self.collect(And(l, r) for l, r in product(self.ground(left), self.ground(right)))
            case Count(child):
                result = self.collect(Count(c) for c in self.ground(child))
            case ArgMin(child, relation):
                result = self.collect(ArgMin(c, r) for c in self.ground(child) for r in self.relations_for(relation))
            case ArgMax(child, relation):
                result = self.collect(ArgMax(c, r) for c in self.ground(child) for r in self.relations_for(relation))
            case Cmp(op, relation, value):
                result = self.collect(Cmp(op, r, value) for r in self.relations_for(relation))
            case Class() | Entity() | Literal():
                result = self.collect([node])
            case _:
                raise TypeError(f"Not a sketch node: {node!r}")

        self.memo[node] = result
        return result


def ground_sketch(sketch: Sketch, schema: SchemaCandidates, linked, kb: KnowledgeBase,
                  max_groundings: int = DEFAULT_MAX_GROUNDINGS, check: bool = True):
    """
    Groundings of a single sketch in assignment order, not canonicalized.
    """
    return _Grounder(schema, linked, kb, max_groundings, check).ground(sketch.tree)


def integrate(sketches: SketchBeam, schema: SchemaCandidates, linked, kb: KnowledgeBase,
              max_groundings: int = DEFAULT_MAX_GROUNDINGS, check: bool = True):
    """
    Fill the slots of every sketch with candidate types, relations and linked
    entities and keep the well-typed results.

    Candidate ids are tried in lexicographic order, sketches in beam order.
    With check=False groundings are emitted without type checking.
    """
    grounder = _Grounder(schema, linked, kb, max_groundings, check)
    candidates = {}
    for sketch in sketches.sketches:
        for expr in grounder.ground(sketch.tree):
            candidate = make_candidate(expr, kb, Source.CONSTRUCTED)
            candidates.setdefault(candidate.key, candidate)
            if len(candidates) >= max_groundings:
                break
        if len(candidates) >= max_groundings:
            grounder.truncated = True
            break

    if grounder.truncated:
        logging.warning(f"Groundings truncated at {max_groundings}")
    logging.debug(f"Integrated {len(candidates)} logical forms from {len(sketches)} sketches")
    return list(candidates.values())
