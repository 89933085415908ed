# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

"""
Training data for every trainable component and the dev points for threshold tuning.

Under the A+U regime questions without a logical form (NK) give no positive
candidate, so they are left out of ranking and classification data and only
take part in threshold tuning. The A regime keeps answerable questions only.
"""

import logging

from enum import StrEnum

import numpy as np

from kbqa.dataset import NK
from kbqa.discriminator import StageError, generate_candidates, rank_candidates
from kbqa.linker import link_entities
from kbqa.retriever import enumerate_paths, paths_to_logical_forms
from kbqa.scorer import (
    BinaryExample, ClassificationExample, DevPoint, ItemFlags, Objective, RankingExample, TrainConfig,
    featurize, train,
)
from kbqa.sexpr import canonical_key, inventory_key, relations_of, surface_text, types_of
from kbqa.utils import partition


class Component(StrEnum):
    RETRIEVER = "retriever"
    SKETCH = "sketch"
    TYPES = "types"
    RELATIONS = "relations"
    DISCRIMINATOR = "discriminator"


class Regime(StrEnum):
    ANSWERABLE_AND_UNANSWERABLE = "a+u"
    ANSWERABLE_ONLY = "a"


OBJECTIVES = {
    Component.RETRIEVER: Objective.CONTRASTIVE,
    Component.SKETCH: Objective.MULTICLASS,
    Component.TYPES: Objective.BINARY,
    Component.RELATIONS: Objective.BINARY,
    Component.DISCRIMINATOR: Objective.CONTRASTIVE,
}


def training_examples(examples, regime=Regime.ANSWERABLE_AND_UNANSWERABLE):
    """
    Returns tuple:
        - examples usable as positives for contrastive and classification data
        - examples left out
    """
    if Regime(regime) == Regime.ANSWERABLE_ONLY:
        return partition(examples, lambda e: e.answerable)
    return partition(examples, lambda e: e.gold_lf is not NK)


def _ranking_example(question, gold_text, gold_flags, negatives):
    if not negatives:
        return None
    return RankingExample(
        featurize(question, gold_text, gold_flags),
        np.array([featurize(question, item.text, item.flags) for item in negatives]),
    )


def retriever_data(examples, kb, lexicon, config):
    """
    Gold logical form against every enumerated non-gold candidate.
    """
    data = []
    for example in examples:
        linked = link_entities(example.question, kb, lexicon, config.top_k_per_mention)
        candidates = paths_to_logical_forms(enumerate_paths(kb, linked, config.max_hops, config.max_paths), kb)
        gold = canonical_key(example.gold_lf)
        negatives = [c.item() for c in candidates if c.key != gold]
        item = _ranking_example(example.question, surface_text(example.gold_lf, kb),
                                ItemFlags(retrieved=True), negatives)
        if item is None:
            logging.warning(f"Skipping {example.qid}: no retriever negatives")
            continue
        data.append(item)
    return data


def sketch_data(examples, inventory):
    classes_of = {}
    data = []
    for example in examples:
        key = inventory_key(example.gold_lf)
        if key not in inventory:
            logging.warning(f"Skipping {example.qid}: sketch {key} not in inventory")
            continue
        if example.question not in classes_of:
            classes_of[example.question] = np.array([featurize(example.question, e.key) for e in inventory])
        data.append(ClassificationExample(classes_of[example.question], inventory.index(key)))
    return data


def schema_data(examples, kb, component):
    """
    One binary example per (question, schema element); the gold logical form's elements are positive.
    """
    if Component(component) == Component.TYPES:
        elements, gold_of = kb.type_defs, types_of
    else:
        elements, gold_of = kb.relation_defs, relations_of

    data = []
    for example in examples:
        gold = gold_of(example.gold_lf)
        for element in elements:
            data.append(BinaryExample(featurize(example.question, element.label), int(element.id in gold)))
    return data


def discriminator_data(examples, kb, components, config):
    """
    Gold logical form against the pipeline's own candidates for each question.
    """
    data = []
    for example in examples:
        try:
            candidates, _ = generate_candidates(example.question, kb, components, config)
        except StageError as e:
            logging.warning(f"Skipping {example.qid}: {e}")
            continue
        gold = canonical_key(example.gold_lf)
        gold_flags = next((c.item().flags for c in candidates if c.key == gold), ItemFlags(constructed=True))
        negatives = [c.item() for c in candidates if c.key != gold]
        item = _ranking_example(example.question, surface_text(example.gold_lf, kb), gold_flags, negatives)
        if item is None:
            logging.warning(f"Skipping {example.qid}: no discriminator negatives")
            continue
        data.append(item)
    return data


def dev_points(examples, kb, components, config):
    """
    Top discriminator score and gold status of every dev question, NK ones included.
    """
    points = []
    for example in examples:
        try:
            candidates, _ = generate_candidates(example.question, kb, components, config)
        except StageError as e:
            logging.warning(f"{example.qid}: {e}")
            candidates = []
        ranked = rank_candidates(example.question, candidates, components.discriminator_scorer)
        gold_valid = example.gold_lf is not NK
        if not ranked:
            points.append(DevPoint(None, gold_valid, False))
            continue
        top_correct = gold_valid and ranked[0].key == canonical_key(example.gold_lf)
        points.append(DevPoint(ranked[0].score, gold_valid, top_correct))
    return points


def build_training_data(component, examples, kb, components, config):
    match Component(component):
        case Component.RETRIEVER:
            return retriever_data(examples, kb, components.lexicon, config)
        case Component.SKETCH:
            return sketch_data(examples, components.inventory)
        case Component.TYPES | Component.RELATIONS:
            return schema_data(examples, kb, component)
        case Component.DISCRIMINATOR:
            return discriminator_data(examples, kb, components, config)


def train_component(component, examples, kb, components, config, train_config: TrainConfig,
                    regime=Regime.ANSWERABLE_AND_UNANSWERABLE):
    component = Component(component)
    usable, left_out = training_examples(examples, regime)
    if left_out:
        logging.info(f"{len(left_out)} questions left out of {component} training ({Regime(regime)})")

    data = build_training_data(component, usable, kb, components, config)
    logging.info(f"Training {component} on {len(data)} examples")
    return train(OBJECTIVES[component], data, train_config)
