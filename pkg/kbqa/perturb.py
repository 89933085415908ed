# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

"""
Deletion-based KB perturbation and relabeling of a dataset into answerable
and unanswerable questions.
"""

import logging
import random

from collections import Counter
from dataclasses import dataclass, replace
from enum import StrEnum
from pathlib import Path
from typing import Union

from kbqa.dataset import NA, NK, Category
from kbqa.executor import check_validity, execute
from kbqa.kb import Fact, KnowledgeBase, parse_object
from kbqa.sexpr import entities_of, relations_of, types_of
from kbqa.utils import JSONLinesError, read_jsonl, write_jsonl


class PerturbationError(Exception):
    pass


class DeletionKind(StrEnum):
    TYPE = "type"
    RELATION = "relation"
    ENTITY = "entity"
    FACT = "fact"


@dataclass(frozen=True)
class Deletion:
    kind: DeletionKind
    target: Union[str, Fact]

    def __str__(self):
        return f"{self.kind} {self.target}"


@dataclass(frozen=True)
class PerturbationPlan:
    deletions: tuple = ()
    seed: int = 0

    def targets(self, kind):
        return {d.target for d in self.deletions if d.kind == kind}


@dataclass(frozen=True)
class RelabeledDataset:
    examples: tuple

    def counts(self):
        return Counter(example.category for example in self.examples)


@dataclass(frozen=True)
class _Removed:
    types: frozenset
    relations: frozenset
    entities: frozenset
    facts: frozenset


def _check_targets(kb, plan):
    tables = {
        DeletionKind.TYPE: kb.types,
        DeletionKind.RELATION: kb.relations,
        DeletionKind.ENTITY: kb.entities,
        DeletionKind.FACT: kb.facts,
    }
    for deletion in plan.deletions:
        if deletion.target not in tables[deletion.kind]:
            raise PerturbationError(f"Deletion target does not exist: {deletion}")


def _cascade(kb, plan):
    types = frozenset(plan.targets(DeletionKind.TYPE))
    relations = frozenset(plan.targets(DeletionKind.RELATION)) | {
        r.id for r in kb.relation_defs if r.domain in types or r.range in types
    }
    entities = frozenset(plan.targets(DeletionKind.ENTITY)) | {
        e.id for e in kb.entity_defs if e.types <= types
    }
    return _Removed(types, relations, entities, frozenset(plan.targets(DeletionKind.FACT)))


def _fact_kept(fact, removed):
    return not (fact in removed.facts or
                fact.relation in removed.relations or
                fact.subject in removed.entities or
                (isinstance(fact.object, str) and fact.object in removed.entities))


def _reduce(kb, removed):
    return KnowledgeBase(
        [t for t in kb.type_defs if t.id not in removed.types],
        [r for r in kb.relation_defs if r.id not in removed.relations],
        [replace(e, types=e.types - removed.types) for e in kb.entity_defs if e.id not in removed.entities],
        [f for f in kb.fact_list if _fact_kept(f, removed)],
    )


def _relabel(example, reduced, entities_only, removed):
    lf = example.gold_lf
    ideal = example.gold_answer

    category = None
    if types_of(lf) & removed.types:
        category = Category.MISSING_TYPE
    elif relations_of(lf) & removed.relations:
        category = Category.MISSING_RELATION
    elif entities_of(lf) & removed.entities:
        category = Category.MISSING_MENTION_ENTITY
    elif not check_validity(lf, reduced).valid:
        # An entity in the logical form lost a type it was used as
        category = Category.MISSING_TYPE
    if category is not None:
        return example.relabel(gold_lf=NK, gold_answer=NA, category=category, gold_answer_ideal=ideal)

    answer = execute(lf, reduced)
    if answer:
        return example.relabel(gold_answer=answer, category=Category.ANSWERABLE, gold_answer_ideal=ideal)
    if not execute(lf, entities_only):
        category = Category.MISSING_OTHER_ENTITY
    else:
        category = Category.MISSING_FACT
    return example.relabel(gold_answer=NA, category=category, gold_answer_ideal=ideal)


def perturb_kb(kb: KnowledgeBase, dataset, plan: PerturbationPlan):
    """
    Apply the deletions of a plan with cascading and relabel every example.

    Returns tuple:
        - the reduced KnowledgeBase (a new value, the source is untouched)
        - RelabeledDataset with categories and recomputed gold answers
    """
    for example in dataset:
        if example.gold_lf is NK or not execute(example.gold_lf, kb):
            raise PerturbationError(f"Example {example.qid} is not answerable on the source KB")
    _check_targets(kb, plan)

    removed = _cascade(kb, plan)
    reduced = _reduce(kb, removed)
    entities_only = _reduce(kb, _Removed(frozenset(), frozenset(), removed.entities, frozenset()))

    relabeled = RelabeledDataset(tuple(_relabel(e, reduced, entities_only, removed) for e in dataset))

    logging.info(f"Perturbed KB: {kb!r} -> {reduced!r}")
    for category, count in sorted(relabeled.counts().items()):
        logging.info(f"  {category}: {count}")
    return reduced, relabeled


def _answer_path_facts(kb, example):
    anchors = entities_of(example.gold_lf) | set(example.gold_answer)
    relations = relations_of(example.gold_lf)
    for relation in sorted(relations):
        for fact in kb.facts_of_relation(relation):
            if fact.subject in anchors or fact.object in anchors:
                yield fact


def sample_plan(kb: KnowledgeBase, dataset, counts, seed=0) -> PerturbationPlan:
    """
    Draw a deletion plan from the schema and data elements the dataset's gold logical forms use.

    counts maps a DeletionKind (or its name) to the number of elements to delete.
    """
    pools = {kind: set() for kind in DeletionKind}
    for example in dataset:
        if example.gold_lf is NK:
            continue
        pools[DeletionKind.TYPE] |= types_of(example.gold_lf)
        pools[DeletionKind.RELATION] |= relations_of(example.gold_lf)
        pools[DeletionKind.ENTITY] |= entities_of(example.gold_lf)
        if example.gold_answer is not NA:
            pools[DeletionKind.ENTITY] |= {a for a in example.gold_answer if a in kb.entities}
        pools[DeletionKind.FACT] |= set(_answer_path_facts(kb, example))

    rng = random.Random(seed)
    deletions = []
    for kind in DeletionKind:
        wanted = int(counts.get(kind, counts.get(kind.value, 0)))
        key = Fact.sort_key if kind == DeletionKind.FACT else None
        pool = sorted(pools[kind], key=key)
        if wanted > len(pool):
            logging.warning(f"Requested {wanted} {kind} deletions, only {len(pool)} candidates")
        chosen = rng.sample(pool, min(wanted, len(pool)))
        deletions.extend(Deletion(kind, target) for target in sorted(chosen, key=key))
    return PerturbationPlan(tuple(deletions), seed)


def _encode_target(deletion):
    if deletion.kind == DeletionKind.FACT:
        fact = deletion.target
        return [fact.subject, fact.relation, fact.encode_object()]
    return deletion.target


def save_plan(path: Path, plan: PerturbationPlan):
    write_jsonl(path, [
        {"seed": plan.seed},
        *({"kind": d.kind.value, "target": _encode_target(d)} for d in plan.deletions),
    ])


def load_plan(path: Path) -> PerturbationPlan:
    deletions, seed = [], 0
    try:
        for lineno, obj in read_jsonl(path):
            if "kind" not in obj:
                try:
                    seed = int(obj.get("seed", seed))
                except (TypeError, ValueError):
                    raise PerturbationError(f"{path}:{lineno}: seed must be an integer")
                continue
            try:
                kind = DeletionKind(obj["kind"])
                target = obj["target"]
                if kind == DeletionKind.FACT:
                    subject, relation, value = target
                    if not all(isinstance(v, str) for v in target):
                        raise ValueError("fact target must be three strings")
                    target = Fact(subject, relation, parse_object(value))
                elif not isinstance(target, str):
                    raise ValueError(f"{kind} target must be a string")
            except (KeyError, TypeError, ValueError) as e:
                raise PerturbationError(f"{path}:{lineno}: invalid deletion ({e})")
            deletions.append(Deletion(kind, target))
    except JSONLinesError as e:
        raise PerturbationError(str(e))
    return PerturbationPlan(tuple(deletions), seed)
