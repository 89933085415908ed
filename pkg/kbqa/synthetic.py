# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

"""
Seeded synthetic KBs, random well-typed logical forms, templated questions and
deletion plans that break answer paths or remove schema elements.
"""

import logging
import random

from kbqa.dataset import QAExample
from kbqa.executor import check_validity, execute
from kbqa.kb import EntityDef, Fact, KnowledgeBase, Literal, LiteralKind, RelationDef, TypeDef
from kbqa.perturb import Deletion, DeletionKind, PerturbationPlan
from kbqa.sexpr import (
    And, ArgMax, ArgMin, Class, Cmp, CmpOp, Count, Entity, Forward, Inverse, Join, relations_of, walk,
)


TYPE_LABELS = ("person", "company", "city", "country", "university", "film", "team", "river")
RELATION_LABELS = (
    "works at", "located in", "founded by", "directed by", "plays for", "born in",
    "owned by", "flows through", "studied at", "partner of",
)
ATTRIBUTE_LABELS = ("population", "founding year", "height", "revenue", "length", "budget")
SYLLABLES = ("ba", "ke", "li", "mo", "nu", "ra", "si", "to", "vu", "ze", "qa", "xi")


def _identifier(label):
    return label.replace(" ", "_")


def _name(rng):
    def word():
        return rng.choice(SYLLABLES) + rng.choice(SYLLABLES)
    return f"{word().capitalize()} {word().capitalize()}"


def random_kb(seed=0, n_types=4, n_entities=24, n_relations=6, n_attributes=2, density=0.3) -> KnowledgeBase:
    """
    A valid KB with single-typed entities, entity-valued relations and number attributes.
    """
    rng = random.Random(seed)
    types = [TypeDef(_identifier(label), label) for label in TYPE_LABELS[:n_types]]

    relations = []
    for label in rng.sample(RELATION_LABELS, min(n_relations, len(RELATION_LABELS))):
        domain, range_ = rng.choice(types), rng.choice(types)
        relations.append(RelationDef(_identifier(label), label, domain.id, range_.id))
    for label in rng.sample(ATTRIBUTE_LABELS, min(n_attributes, len(ATTRIBUTE_LABELS))):
        relations.append(RelationDef(_identifier(label), label, rng.choice(types).id, LiteralKind.NUMBER))

    entities, names = [], set()
    while len(entities) < n_entities:
        name = _name(rng)
        if name in names:
            continue
        names.add(name)
        type_id = types[len(entities) % len(types)].id
        entities.append(EntityDef(_identifier(name.lower()), name, frozenset({type_id})))

    instances = {t.id: [e.id for e in entities if t.id in e.types] for t in types}
    facts = []
    for relation in relations:
        for subject in instances[relation.domain]:
            if relation.literal_range is not None:
                if rng.random() < 0.9:
                    facts.append(Fact(subject, relation.id, Literal.number(rng.randint(1, 2000))))
                continue
            if rng.random() >= density:
                continue
            objects = instances[relation.range]
            for obj in rng.sample(objects, min(len(objects), rng.randint(1, 2))):
                facts.append(Fact(subject, relation.id, obj))

    return KnowledgeBase(types, relations, entities, facts)


def _entity_relations(kb):
    return [r for r in kb.relation_defs if r.literal_range is None and kb.facts_of_relation(r.id)]


def _attributes(kb):
    return [r for r in kb.relation_defs if r.literal_range == LiteralKind.NUMBER and kb.facts_of_relation(r.id)]


def _entity_expr(kb, rng, type_id, depth):
    """
    Random well-typed expression whose result kind contains type_id.
    """
    instances = sorted(kb.instances(type_id))
    options = ["class"] + (["entity"] if instances else [])
    if depth > 0:
        inverse = [r for r in kb.relation_defs if r.literal_range is None and r.range == type_id]
        forward = [r for r in kb.relation_defs if r.domain == type_id]
        numeric = [r for r in kb.relation_defs if r.domain == type_id and r.literal_range == LiteralKind.NUMBER]
        options += ["and"]
        options += ["inverse"] * bool(inverse) + ["forward"] * bool(forward)
        options += ["argmax", "argmin", "cmp"] * bool(numeric)

    match rng.choice(options):
        case "class":
            return Class(type_id)
        case "entity":
            return Entity(rng.choice(instances))
        case "and":
            return And(_entity_expr(kb, rng, type_id, depth - 1), _entity_expr(kb, rng, type_id, depth - 1))
        case "inverse":
            relation = rng.choice(inverse)
            return Join(Inverse(relation.id), _entity_expr(kb, rng, relation.domain, depth - 1))
        case "forward":
            relation = rng.choice(forward)
            if relation.literal_range == LiteralKind.NUMBER:
                return Join(Forward(relation.id), Literal.number(rng.randint(1, 2000)))
            if relation.literal_range == LiteralKind.STRING:
                return Join(Forward(relation.id), Literal(LiteralKind.STRING, "x"))
            return Join(Forward(relation.id), _entity_expr(kb, rng, relation.range, depth - 1))
        case "argmax":
            return ArgMax(_entity_expr(kb, rng, type_id, depth - 1), rng.choice(numeric).id)
        case "argmin":
            return ArgMin(_entity_expr(kb, rng, type_id, depth - 1), rng.choice(numeric).id)
        case "cmp":
            return Cmp(rng.choice(list(CmpOp)), rng.choice(numeric).id, Literal.number(rng.randint(1, 2000)))


def random_expr(kb: KnowledgeBase, rng: random.Random, depth: int = 4):
    """
    Random logical form that passes check_validity on kb, nested at most depth levels.
    """
    type_id = rng.choice(kb.type_defs).id
    if depth > 0 and rng.random() < 0.15:
        return Count(_entity_expr(kb, rng, type_id, depth - 1))
    return _entity_expr(kb, rng, type_id, depth)


def _lookup(kb, rng):
    relation = rng.choice(_entity_relations(kb))
    fact = rng.choice(kb.facts_of_relation(relation.id))
    question = f"which {kb.label(relation.range)} does {kb.label(fact.subject)} {relation.label}"
    return question, And(Class(relation.range), Join(Inverse(relation.id), Entity(fact.subject)))


def _inverse(kb, rng):
    relation = rng.choice(_entity_relations(kb))
    fact = rng.choice(kb.facts_of_relation(relation.id))
    question = f"which {kb.label(relation.domain)} {relation.label} {kb.label(fact.object)}"
    return question, And(Class(relation.domain), Join(Forward(relation.id), Entity(fact.object)))


def _count(kb, rng):
    question, lf = _lookup(kb, rng)
    return "how many" + question.removeprefix("which"), Count(lf)


def _two_hop(kb, rng):
    first = rng.choice(_entity_relations(kb))
    fact = rng.choice(kb.facts_of_relation(first.id))
    seconds = [r for r in _entity_relations(kb) if r.domain == first.range and kb.objects(fact.object, r.id)]
    if not seconds:
        return None
    second = rng.choice(seconds)
    question = (f"which {kb.label(second.range)} is {second.label} the {kb.label(first.range)} "
                f"that {kb.label(fact.subject)} {first.label}")
    inner = Join(Inverse(first.id), Entity(fact.subject))
    return question, And(Class(second.range), Join(Inverse(second.id), inner))


def _conjunction(kb, rng):
    relation = rng.choice(_entity_relations(kb))
    shared = [f for f in kb.facts_of_relation(relation.id)
              if len({s for s in kb.subjects(relation.id, f.object)}) > 1]
    if not shared:
        return None
    target = rng.choice(shared).object
    first, second = sorted(rng.sample(sorted(kb.subjects(relation.id, target)), 2))
    question = (f"which {kb.label(relation.range)} does {kb.label(first)} {relation.label} "
                f"and {kb.label(second)} {relation.label}")
    return question, And(Join(Inverse(relation.id), Entity(first)), Join(Inverse(relation.id), Entity(second)))


def _superlative(kb, rng):
    attribute = rng.choice(_attributes(kb))
    if rng.random() < 0.5:
        return (f"which {kb.label(attribute.domain)} has the largest {attribute.label}",
                ArgMax(Class(attribute.domain), attribute.id))
    return (f"which {kb.label(attribute.domain)} has the smallest {attribute.label}",
            ArgMin(Class(attribute.domain), attribute.id))


def _comparative(kb, rng):
    attribute = rng.choice(_attributes(kb))
    value = rng.choice(kb.facts_of_relation(attribute.id)).object.fraction - 1
    bound = Literal.number(value)
    question = f"which {kb.label(attribute.domain)} has {attribute.label} greater than {bound.value}"
    return question, And(Class(attribute.domain), Cmp(CmpOp.GT, attribute.id, bound))


TEMPLATES = {
    "lookup": _lookup,
    "inverse": _inverse,
    "count": _count,
    "two_hop": _two_hop,
    "conjunction": _conjunction,
    "superlative": _superlative,
    "comparative": _comparative,
}


def generate_questions(kb: KnowledgeBase, n: int = 50, seed: int = 0, templates=None, prefix="q"):
    """
    Up to n answerable examples with distinct question texts.
    """
    rng = random.Random(seed)
    names = sorted(templates or TEMPLATES)
    usable = [name for name in names
              if (name in ("superlative", "comparative") and _attributes(kb)) or
                 (name not in ("superlative", "comparative") and _entity_relations(kb))]
    if not usable:
        return []

    examples, seen = [], set()
    for _ in range(n * 50):
        if len(examples) >= n:
            break
        generated = TEMPLATES[rng.choice(usable)](kb, rng)
        if generated is None:
            continue
        question, lf = generated
        if question in seen or not check_validity(lf, kb).valid:
            continue
        answer = execute(lf, kb)
        if not answer:
            continue
        seen.add(question)
        examples.append(QAExample(f"{prefix}{len(examples):04d}", question, lf, answer))

    if len(examples) < n:
        logging.warning(f"Generated only {len(examples)} of {n} questions")
    return examples


def split_dataset(examples, seed=0, fractions=(0.6, 0.2)):
    """
    Returns tuple: train, dev and test lists (shuffled with the seed).
    """
    examples = list(examples)
    random.Random(seed).shuffle(examples)
    n_train = int(len(examples) * fractions[0])
    n_dev = int(len(examples) * fractions[1])
    return examples[:n_train], examples[n_train:n_train + n_dev], examples[n_train + n_dev:]


def _anchored_facts(kb, lf):
    for node in walk(lf):
        if isinstance(node, Join) and isinstance(node.child, Entity):
            entity = node.child.entity_id
            relation = node.relation.relation
            if isinstance(node.relation, Inverse):
                yield from (Fact(entity, relation, o) for o in kb.objects(entity, relation))
            else:
                yield from (Fact(s, relation, entity) for s in kb.subjects(relation, entity))


def breakable(example):
    """
    True when deleting the facts next to the question's entities empties its answer.
    """
    lf = example.gold_lf
    return not isinstance(lf, Count) and any(
        isinstance(node, Join) and isinstance(node.child, Entity) for node in walk(lf))


def broken_path_plan(kb: KnowledgeBase, examples, seed=0) -> PerturbationPlan:
    """
    Delete every fact that links the entities of each breakable example's gold logical form into its answer path.
    """
    facts = set()
    for example in examples:
        if breakable(example):
            facts.update(_anchored_facts(kb, example.gold_lf))
    return PerturbationPlan(tuple(Deletion(DeletionKind.FACT, f) for f in sorted(facts, key=Fact.sort_key)), seed)


def schema_gap_plan(kb: KnowledgeBase, examples, seed=0) -> PerturbationPlan:
    """
    Delete the first (by id) relation of every example's gold logical form.
    """
    relations = sorted({min(relations_of(e.gold_lf)) for e in examples if relations_of(e.gold_lf)})
    return PerturbationPlan(tuple(Deletion(DeletionKind.RELATION, r) for r in relations), seed)
