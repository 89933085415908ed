# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

import numpy as np

from kbqa.dataset import NK
from kbqa.discriminator import PipelineConfig, oracle_components
from kbqa.linker import build_lexicon
from kbqa.perturb import Deletion, DeletionKind, PerturbationPlan, perturb_kb
from kbqa.scorer import FEATURE_DIMENSION, Objective, TrainConfig
from kbqa.sexpr import build_sketch_inventory
from kbqa.training import (
    Component, Regime, dev_points, discriminator_data, retriever_data, schema_data, sketch_data, train_component,
    training_examples,
)


def _components(examples, lexicon):
    inventory = build_sketch_inventory([e.gold_lf for e in examples if e.gold_lf is not NK])
    return oracle_components(examples, lexicon, inventory)


class TestRegimes:
    def test_missing_fact_is_kept_under_a_plus_u(self, toy_kb, toy_examples):
        _, relabeled = perturb_kb(toy_kb, toy_examples, PerturbationPlan(
            (Deletion(DeletionKind.FACT, toy_kb.fact_list[0]),)))
        usable, left_out = training_examples(relabeled.examples)
        assert (len(usable), len(left_out)) == (3, 0)

        usable, left_out = training_examples(relabeled.examples, Regime.ANSWERABLE_ONLY)
        assert [e.qid for e in left_out] == ["toy-1"]

    def test_no_knowledge_is_left_out(self, toy_kb, toy_examples):
        _, relabeled = perturb_kb(toy_kb, toy_examples, PerturbationPlan(
            (Deletion(DeletionKind.RELATION, "works_at"),)))
        usable, left_out = training_examples(relabeled.examples, "a+u")
        assert [e.qid for e in usable] == ["toy-2"]
        assert len(left_out) == 2


class TestData:
    def test_retriever(self, toy_kb, toy_examples, toy_lexicon):
        data = retriever_data(toy_examples, toy_kb, toy_lexicon, PipelineConfig())
        assert len(data) == 3
        for example in data:
            assert example.gold.shape == (FEATURE_DIMENSION,)
            assert example.negatives.shape[1] == FEATURE_DIMENSION
            assert len(example.negatives) >= 1

    def test_sketch(self, toy_examples):
        inventory = build_sketch_inventory([e.gold_lf for e in toy_examples])
        data = sketch_data(toy_examples, inventory)
        assert [d.gold_index for d in data] == [0, 0, 1]
        assert data[0].classes.shape == (2, FEATURE_DIMENSION)

    def test_sketch_outside_inventory_is_skipped(self, toy_examples):
        inventory = build_sketch_inventory([toy_examples[2].gold_lf])
        assert len(sketch_data(toy_examples, inventory)) == 1

    def test_schema(self, toy_kb, toy_examples):
        types = schema_data(toy_examples, toy_kb, Component.TYPES)
        relations = schema_data(toy_examples, toy_kb, "relations")
        assert (len(types), sum(d.label for d in types)) == (9, 2)
        assert (len(relations), sum(d.label for d in relations)) == (6, 3)

    def test_discriminator(self, toy_kb, toy_examples, toy_lexicon):
        components = _components(toy_examples, toy_lexicon)
        data = discriminator_data(toy_examples, toy_kb, components, PipelineConfig())
        assert len(data) == 3
        # the gold form was both retrieved and constructed
        assert data[0].gold[8] == 1.0 and data[0].gold[9] == 1.0

    def test_dev_points(self, toy_kb, toy_examples, toy_lexicon):
        components = _components(toy_examples, toy_lexicon)
        points = dev_points(toy_examples, toy_kb, components, PipelineConfig())
        assert [(p.score, p.gold_valid, p.top_correct) for p in points] == [(1.0, True, True)] * 3

    def test_dev_points_for_no_knowledge(self, toy_kb, toy_examples, toy_lexicon):
        reduced, relabeled = perturb_kb(toy_kb, toy_examples, PerturbationPlan(
            (Deletion(DeletionKind.RELATION, "works_at"),)))
        components = _components(toy_examples, toy_lexicon)
        point = dev_points(relabeled.examples[:1], reduced, components, PipelineConfig())[0]
        assert (point.score, point.gold_valid, point.top_correct) == (None, False, False)


def test_train_components(synthetic_kb, synthetic_examples):
    lexicon = build_lexicon(synthetic_kb)
    components = _components(synthetic_examples, lexicon)
    config = PipelineConfig()
    train_config = TrainConfig(lr=0.1, epochs=3, batch=8)

    for component, objective in [(Component.RETRIEVER, Objective.CONTRASTIVE),
                                 (Component.SKETCH, Objective.MULTICLASS),
                                 (Component.TYPES, Objective.BINARY),
                                 (Component.DISCRIMINATOR, Objective.CONTRASTIVE)]:
        result = train_component(component, synthetic_examples, synthetic_kb, components, config, train_config)
        assert result.model.objective == objective
        assert result.model.dimension == FEATURE_DIMENSION
        assert len(result.losses) == 3
        assert np.all(np.isfinite(result.losses))
