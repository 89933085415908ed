# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

import math

from dataclasses import replace

import pytest

from kbqa.dataset import NA, NK
from kbqa.discriminator import (
    Ablation, Mode, PipelineConfig, PipelineMode, Stage, ablation_name, answer_question, assemble_candidates,
    decide, generate_candidates, oracle_components, parse_ablations, run_pipeline,
)
from kbqa.executor import check_validity, execute
from kbqa.kb import EntityDef, KnowledgeBase
from kbqa.linker import build_lexicon
from kbqa.perturb import Deletion, DeletionKind, PerturbationPlan, perturb_kb, sample_plan
from kbqa.retriever import Source, make_candidate
from kbqa.scorer import OracleScorer, Threshold, lexical_scorer
from kbqa.sexpr import build_sketch_inventory, canonical_key, parse_sexpr
from tests.conftest import GOLD, MANNING_WORKS_AT_STANFORD, QUESTION


OTHER = "(AND city (JOIN (R located_in) stanford))"


def _candidates(kb, *texts, source=Source.RETRIEVED):
    return [make_candidate(parse_sexpr(text, kb), kb, source) for text in texts]


def _oracle(kb, text):
    return OracleScorer({QUESTION: {canonical_key(parse_sexpr(text, kb))}})


def _missing_fact(toy_kb, toy_examples):
    return perturb_kb(toy_kb, toy_examples, PerturbationPlan(
        (Deletion(DeletionKind.FACT, MANNING_WORKS_AT_STANFORD),)))


def _components(examples, lexicon, threshold=None):
    inventory = build_sketch_inventory([e.gold_lf for e in examples if e.gold_lf is not NK])
    return oracle_components(examples, lexicon, inventory, threshold)


class TestDecide:
    def test_answer(self, toy_kb):
        pred = decide(QUESTION, _candidates(toy_kb, OTHER, GOLD), _oracle(toy_kb, GOLD), Threshold.fixed(0.5),
                      toy_kb, qid="toy-1")
        assert canonical_key(pred.logical_form) == canonical_key(parse_sexpr(GOLD, toy_kb))
        assert pred.answer == frozenset({"stanford"})
        assert pred.top_score == 1.0
        assert pred.n_candidates == 2

    def test_below_threshold_is_no_knowledge(self, toy_kb):
        pred = decide(QUESTION, _candidates(toy_kb, GOLD), _oracle(toy_kb, GOLD), Threshold.fixed(1.5), toy_kb)
        assert pred.logical_form is NK
        assert pred.answer is NA
        assert pred.top_score == 1.0

    def test_no_candidates(self, toy_kb):
        pred = decide(QUESTION, [], _oracle(toy_kb, GOLD), Threshold.never(), toy_kb)
        assert (pred.logical_form, pred.answer, pred.n_candidates) == (NK, NA, 0)

    def test_empty_execution_is_no_answer(self, toy_kb, toy_examples):
        reduced, _ = _missing_fact(toy_kb, toy_examples)
        pred = decide(QUESTION, _candidates(reduced, GOLD, OTHER), _oracle(reduced, GOLD), Threshold.never(), reduced)
        assert canonical_key(pred.logical_form) == canonical_key(parse_sexpr(GOLD, reduced))
        assert pred.answer is NA

    def test_execution_guided_check(self, toy_kb, toy_examples):
        reduced, _ = _missing_fact(toy_kb, toy_examples)
        pred = decide(QUESTION, _candidates(reduced, GOLD, OTHER), _oracle(reduced, GOLD), None, reduced, Mode.EGC)
        assert canonical_key(pred.logical_form) == canonical_key(parse_sexpr(OTHER, reduced))
        assert pred.answer == frozenset({"palo_alto"})
        assert pred.top_score == 0.0

    def test_execution_guided_check_without_answers(self, toy_kb):
        no_facts = KnowledgeBase(toy_kb.type_defs, toy_kb.relation_defs, toy_kb.entity_defs)
        pred = decide(QUESTION, _candidates(no_facts, GOLD, OTHER), _oracle(no_facts, GOLD), None, no_facts, Mode.EGC)
        assert canonical_key(pred.logical_form) == canonical_key(parse_sexpr(GOLD, no_facts))
        assert pred.answer is NA

    def test_threshold_required(self, toy_kb):
        with pytest.raises(ValueError):
            decide(QUESTION, _candidates(toy_kb, GOLD), _oracle(toy_kb, GOLD), None, toy_kb)


def test_assemble_marks_shared_candidates(toy_kb):
    retrieved = _candidates(toy_kb, GOLD, OTHER)
    constructed = _candidates(toy_kb, GOLD, "(COUNT (JOIN works_at stanford))", source=Source.CONSTRUCTED)
    merged = {c.key: c.source for c in assemble_candidates(retrieved, constructed)}
    assert merged == {
        canonical_key(parse_sexpr(GOLD, toy_kb)): Source.BOTH,
        canonical_key(parse_sexpr(OTHER, toy_kb)): Source.RETRIEVED,
        "(COUNT (JOIN works_at stanford))": Source.CONSTRUCTED,
    }


def test_ablation_names():
    assert parse_ablations(["lfr+sgsr", "-egc"]) == {Ablation.LFR, Ablation.SGSR, Ablation.EGC}
    assert ablation_name(frozenset()) == "full"
    assert ablation_name({Ablation.SGSR, Ablation.LFR}) == "-lfr-sgsr"
    assert PipelineConfig().without(Ablation.LFI).disabled == {Ablation.LFI}
    with pytest.raises(ValueError):
        parse_ablations(["nothing"])


class TestPipeline:
    def test_oracle_answers_toy_dataset(self, toy_kb, toy_examples, toy_lexicon):
        predictions = run_pipeline(toy_examples, toy_kb, _components(toy_examples, toy_lexicon))
        assert [p.qid for p in predictions] == [e.qid for e in toy_examples]
        for pred, example in zip(predictions, toy_examples):
            assert canonical_key(pred.logical_form) == canonical_key(example.gold_lf)
            assert pred.answer == example.gold_answer
            assert pred.error is None

    def test_trace(self, toy_kb, toy_examples, toy_lexicon):
        pred = run_pipeline(toy_examples[:1], toy_kb, _components(toy_examples, toy_lexicon))[0]
        gold = canonical_key(toy_examples[0].gold_lf)
        assert pred.trace.linked == ("c_manning",)
        assert gold in pred.trace.retrieved
        assert gold in pred.trace.constructed
        assert pred.trace.sketches[0] == "(AND TYPE (JOIN (R REL) ENT))"

    def test_links_per_mention(self, toy_kb, toy_examples):
        namesake = EntityDef("c_manning_2", "C. Manning", frozenset({"researcher"}))
        kb = KnowledgeBase(toy_kb.type_defs, toy_kb.relation_defs, (*toy_kb.entity_defs, namesake), toy_kb.fact_list)
        components = _components(toy_examples, build_lexicon(kb))

        for top_k, entity_ids in ((1, ("c_manning",)), (2, ("c_manning", "c_manning_2"))):
            pred = answer_question(toy_examples[0], kb, components, PipelineConfig(top_k_per_mention=top_k))
            assert pred.trace.linked == entity_ids
            assert canonical_key(pred.logical_form) == canonical_key(toy_examples[0].gold_lf)

    def test_missing_fact_keeps_form_without_answer(self, toy_kb, toy_examples, toy_lexicon):
        reduced, relabeled = _missing_fact(toy_kb, toy_examples)
        components = _components(toy_examples, toy_lexicon)
        pred = run_pipeline(relabeled.examples[:1], reduced, components)[0]
        assert canonical_key(pred.logical_form) == canonical_key(toy_examples[0].gold_lf)
        assert pred.answer is NA
        assert not pred.trace.retrieved

    def test_missing_relation_gives_no_knowledge(self, toy_kb, toy_examples, toy_lexicon):
        reduced, relabeled = perturb_kb(toy_kb, toy_examples, PerturbationPlan(
            (Deletion(DeletionKind.RELATION, "works_at"),)))
        components = _components(toy_examples, toy_lexicon)
        pred = run_pipeline(relabeled.examples[:1], reduced, components)[0]
        assert (pred.logical_form, pred.answer) == (NK, NA)
        assert pred.n_candidates == 0

    def test_disabling_both_generators(self, toy_kb, toy_examples, toy_lexicon):
        config = PipelineConfig().without(Ablation.LFR, Ablation.SGSR)
        predictions = run_pipeline(toy_examples, toy_kb, _components(toy_examples, toy_lexicon), config)
        assert all(p.logical_form is NK for p in predictions)

    def test_answerable_mode_uses_execution_check(self, toy_kb, toy_examples, toy_lexicon):
        components = _components(toy_examples, toy_lexicon, threshold=Threshold.fixed(2.0))
        config = PipelineConfig(mode=PipelineMode.ANSWERABLE)
        predictions = run_pipeline(toy_examples, toy_kb, components, config)
        assert all(p.answer is not NA for p in predictions)

    def test_failing_stage_is_reported(self, toy_kb, toy_examples, toy_lexicon):
        class Broken():
            def score(self, question, item):
                raise RuntimeError("model exploded")

        components = _components(toy_examples, toy_lexicon)
        components.sketch_ranker = Broken()
        pred = answer_question(toy_examples[0], toy_kb, components, PipelineConfig())
        assert (pred.logical_form, pred.answer) == (NK, NA)
        assert pred.error_component == Stage.SKETCH_GENERATION
        assert "model exploded" in pred.error
        assert pred.trace.retrieved

    def test_threshold_is_required(self, toy_kb, toy_examples, toy_lexicon):
        components = _components(toy_examples, toy_lexicon)
        components.threshold = None
        with pytest.raises(ValueError):
            run_pipeline(toy_examples, toy_kb, components)


def _lexical_components(examples, kb, threshold):
    components = _components(examples, build_lexicon(kb), threshold)
    return replace(components, discriminator_scorer=lexical_scorer())


def test_raising_the_threshold_only_adds_no_knowledge(synthetic_kb, synthetic_examples):
    components = _lexical_components(synthetic_examples, synthetic_kb, None)
    taus = [-math.inf, -2.0, 0.0, 0.5, 1.0, 2.0, 4.0, 8.0, math.inf]
    for example in synthetic_examples:
        candidates, _ = generate_candidates(example.question, synthetic_kb, components, PipelineConfig())
        verdicts = [decide(example.question, candidates, lexical_scorer(), Threshold.fixed(tau), synthetic_kb)
                    for tau in taus]
        no_knowledge = [v.logical_form is NK for v in verdicts]
        assert no_knowledge == sorted(no_knowledge), example.question
        assert all(v.logical_form == verdicts[0].logical_form for v in verdicts if v.logical_form is not NK)


@pytest.mark.parametrize("mode, tau", [
    (PipelineMode.UNANSWERABILITY, -math.inf),
    (PipelineMode.UNANSWERABILITY, 1.0),
    (PipelineMode.UNANSWERABILITY, 3.0),
    (PipelineMode.ANSWERABLE, None),
])
def test_predictions_are_consistent(synthetic_kb, synthetic_examples, mode, tau):
    plan = sample_plan(synthetic_kb, synthetic_examples, {"fact": 6, "entity": 1, "relation": 1}, seed=4)
    reduced, relabeled = perturb_kb(synthetic_kb, synthetic_examples, plan)
    components = _lexical_components(synthetic_examples, reduced, None if tau is None else Threshold.fixed(tau))

    for kb, examples in ((synthetic_kb, synthetic_examples), (reduced, relabeled.examples)):
        predictions = run_pipeline(examples, kb, components, PipelineConfig(mode=mode))
        assert [p.qid for p in predictions] == [e.qid for e in examples]
        for pred in predictions:
            if pred.logical_form is NK:
                assert pred.answer is NA
                continue
            assert check_validity(pred.logical_form, kb).valid
            assert pred.answer == (execute(pred.logical_form, kb) or NA)
