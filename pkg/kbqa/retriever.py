# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

"""
Path-based candidate retrieval: realized 1- and 2-hop paths from linked
entities turned into logical forms and ranked.
"""

import logging

from dataclasses import dataclass, replace
from enum import StrEnum
from typing import Optional

from kbqa.executor import check_validity, execute
from kbqa.kb import KnowledgeBase
from kbqa.scorer import ItemFlags, ScoringItem
from kbqa.sexpr import And, Class, Count, Entity, Forward, Inverse, Join, canonicalize, print_sexpr, surface_text


DEFAULT_MAX_PATHS = 2000


class Direction(StrEnum):
    # subject to object
    FORWARD = "forward"
    # object to subject
    INVERSE = "inverse"


@dataclass(frozen=True)
class PathStep:
    relation: str
    direction: Direction

    def relation_ref(self):
        # Walking subject->object reads the relation backwards in JOIN terms
        return Inverse(self.relation) if self.direction == Direction.FORWARD else Forward(self.relation)

    def follow(self, kb, nodes):
        if self.direction == Direction.FORWARD:
            return {o for n in nodes for o in kb.objects(n, self.relation)}
        return {s for n in nodes for s in kb.subjects(self.relation, n)}


@dataclass(frozen=True)
class KBPath:
    anchor: str
    steps: tuple
    # (entity id, PathStep) constraining the terminal variable
    constraint: Optional[tuple] = None

    def sort_key(self):
        constraint = () if self.constraint is None else (self.constraint[0], self.constraint[1].relation,
                                                         self.constraint[1].direction)
        return (self.anchor, tuple((s.relation, s.direction) for s in self.steps), constraint)

    def bindings(self, kb):
        nodes = {self.anchor}
        for step in self.steps:
            nodes = step.follow(kb, nodes)
        if self.constraint is not None:
            entity, step = self.constraint
            nodes &= step.follow(kb, {entity})
        return nodes

    def to_sexpr(self):
        expr = Entity(self.anchor)
        for step in self.steps:
            expr = Join(step.relation_ref(), expr)
        if self.constraint is not None:
            entity, step = self.constraint
            expr = And(expr, Join(step.relation_ref(), Entity(entity)))
        return expr


class Source(StrEnum):
    RETRIEVED = "retrieved"
    CONSTRUCTED = "constructed"
    BOTH = "both"


@dataclass(frozen=True)
class CandidateLogicalForm:
    expr: object
    key: str
    text: str
    source: Source
    score: Optional[float] = None

    def item(self):
        return ScoringItem(self.key, self.text, ItemFlags(
            retrieved=self.source in (Source.RETRIEVED, Source.BOTH),
            constructed=self.source in (Source.CONSTRUCTED, Source.BOTH),
        ))

    def with_score(self, score):
        return replace(self, score=score)


def make_candidate(expr, kb: KnowledgeBase, source: Source) -> CandidateLogicalForm:
    expr = canonicalize(expr)
    return CandidateLogicalForm(expr, print_sexpr(expr), surface_text(expr, kb), Source(source))


def _steps_from(kb, node):
    steps = {PathStep(f.relation, Direction.FORWARD) for f in kb.by_subject.get(node, ())}
    steps |= {PathStep(f.relation, Direction.INVERSE) for f in kb.by_object.get(node, ())}
    return steps


def enumerate_paths(kb: KnowledgeBase, linked, max_hops: int = 2, max_paths: int = DEFAULT_MAX_PATHS):
    """
    All realized paths of up to max_hops steps from each linked entity.

    With exactly two linked entities, one-hop paths of both that reach a
    shared node are also emitted as constrained paths. Paths are sorted and
    truncated to max_paths.
    """
    anchors = list(linked.entity_ids)
    paths = set()
    for anchor in anchors:
        if anchor not in kb.entities:
            continue
        frontier = [KBPath(anchor, ())]
        for _ in range(max_hops):
            extended = []
            for path in frontier:
                for node in sorted(path.bindings(kb), key=str):
                    for step in _steps_from(kb, node):
                        extended.append(KBPath(anchor, path.steps + (step,)))
            frontier = list(dict.fromkeys(extended))
            paths.update(frontier)

    if len(anchors) == 2 and all(a in kb.entities for a in anchors):
        first, second = anchors
        for step in _steps_from(kb, first):
            reached = step.follow(kb, {first})
            for other in _steps_from(kb, second):
                if reached & other.follow(kb, {second}):
                    paths.add(KBPath(first, (step,), (second, other)))

    ordered = sorted(paths, key=KBPath.sort_key)
    if len(ordered) > max_paths:
        logging.warning(f"Truncating {len(ordered)} paths to {max_paths}")
        ordered = ordered[:max_paths]
    logging.debug(f"Enumerated {len(ordered)} paths from {anchors}")
    return ordered


def paths_to_logical_forms(paths, kb: KnowledgeBase):
    """
    Per path: the bare JOIN chain, (AND t chain) for every type of its terminal
    nodes, and COUNT over each of those. Only well-typed forms are kept.
    """
    candidates = {}
    cache = {}

    def add(expr):
        if check_validity(expr, kb, cache).valid:
            candidate = make_candidate(expr, kb, Source.RETRIEVED)
            candidates.setdefault(candidate.key, candidate)
            return True
        return False

    for path in paths:
        chain = path.to_sexpr()
        if not add(chain):
            continue
        add(Count(chain))
        terminal_types = set()
        for node in execute(chain, kb):
            if node in kb.entities:
                terminal_types |= kb.entities[node].types
        for type_id in sorted(terminal_types):
            typed = And(Class(type_id), chain)
            if add(typed):
                add(Count(typed))

    return [candidates[key] for key in sorted(candidates)]


def rank_retrieved(question: str, candidates, scorer, k: int = 10):
    scored = [c.with_score(scorer.score(question, c.item())) for c in candidates]
    scored.sort(key=lambda c: (-c.score, c.key))
    return scored[:k]
