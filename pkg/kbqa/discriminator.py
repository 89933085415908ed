# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

"""
Final-stage discrimination and the end-to-end question answering pipeline.
"""

import logging

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from enum import StrEnum
from functools import partial
from typing import Optional

from kbqa.constructor import generate_sketches, integrate, retrieve_schema
from kbqa.dataset import NA, NK, PipelineTrace, Prediction
from kbqa.executor import execute_or_empty
from kbqa.linker import Link, LinkedEntities, Mention, link_entities
from kbqa.retriever import Source, enumerate_paths, paths_to_logical_forms, rank_retrieved
from kbqa.scorer import OracleScorer, Threshold
from kbqa.sexpr import canonical_key, entities_of, inventory_key, relations_of, types_of


class Mode(StrEnum):
    UNANSWERABILITY = "unanswerability"
    EGC = "egc"


class PipelineMode(StrEnum):
    UNANSWERABILITY = "unanswerability"
    ANSWERABLE = "answerable"


class Ablation(StrEnum):
    # logical form retriever
    LFR = "lfr"
    # type checking of groundings
    LFI = "lfi"
    # sketch generator and schema retriever
    SGSR = "sgsr"
    # execution guided check
    EGC = "egc"


class Stage(StrEnum):
    ENTITY_LINKING = "entity_linking"
    RETRIEVAL = "retrieval"
    SKETCH_GENERATION = "sketch_generation"
    SCHEMA_RETRIEVAL = "schema_retrieval"
    INTEGRATION = "integration"
    DISCRIMINATION = "discrimination"


def parse_ablations(values):
    """
    Parse toggles like ["lfr", "lfr+sgsr"] into a set of Ablation values.
    """
    result = set()
    for value in values:
        for part in str(value).split("+"):
            if part := part.strip().lower().lstrip("-"):
                result.add(Ablation(part))
    return frozenset(result)


def ablation_name(disabled):
    if not disabled:
        return "full"
    return "".join(f"-{a}" for a in sorted(disabled))


def assemble_candidates(retrieved, constructed):
    """
    Union of both candidate lists keyed by canonical form; shared ones become source=both.
    """
    merged = {c.key: c for c in retrieved}
    for candidate in constructed:
        if candidate.key in merged and merged[candidate.key].source != Source.CONSTRUCTED:
            merged[candidate.key] = replace(merged[candidate.key], source=Source.BOTH)
        else:
            merged.setdefault(candidate.key, candidate)
    return [merged[key] for key in sorted(merged)]


def rank_candidates(question, candidates, scorer):
    scored = [c.with_score(float(scorer.score(question, c.item()))) for c in candidates]
    scored.sort(key=lambda c: (-c.score, c.key))
    return scored


def decide(question, candidates, scorer, threshold: Optional[Threshold], kb, mode=Mode.UNANSWERABILITY,
           qid="", trace=None) -> Prediction:
    """
    Rank the candidates and turn the top one into a verdict.

    unanswerability: no candidates or a top score below tau gives (NK, NA),
    otherwise the top logical form is executed and an empty result gives NA.
    egc: the first candidate in rank order with a non-empty answer wins,
    falling back to the top one with NA.
    """
    ranked = rank_candidates(question, candidates, scorer)
    n = len(ranked)
    if not ranked:
        return Prediction.no_knowledge(qid, n_candidates=0, trace=trace)

    top = ranked[0]
    if Mode(mode) == Mode.UNANSWERABILITY:
        if threshold is None:
            raise ValueError("unanswerability mode requires a threshold")
        if threshold.rejects(top.score):
            return Prediction.no_knowledge(qid, top_score=top.score, n_candidates=n, trace=trace)
        answer = execute_or_empty(top.expr, kb)
        return Prediction(qid, top.expr, answer or NA, top.score, n, trace)

    for candidate in ranked:
        if answer := execute_or_empty(candidate.expr, kb):
            return Prediction(qid, candidate.expr, answer, candidate.score, n, trace)
    return Prediction(qid, top.expr, NA, top.score, n, trace)


@dataclass(frozen=True)
class PipelineConfig:
    mode: PipelineMode = PipelineMode.UNANSWERABILITY
    disabled: frozenset = frozenset()
    top_k_per_mention: int = 1
    retriever_top_k: int = 10
    max_paths: int = 2000
    max_hops: int = 2
    beam: int = 10
    schema_top_k: int = 10
    max_groundings: int = 5000
    jobs: int = 1

    def without(self, *ablations):
        return PipelineConfig(**{**self.__dict__, "disabled": self.disabled | frozenset(ablations)})


@dataclass
class Components:
    lexicon: object
    inventory: object
    sketch_ranker: object
    type_scorer: object
    relation_scorer: object
    retriever_scorer: object
    discriminator_scorer: object
    threshold: Optional[Threshold] = None
    # question -> LinkedEntities used instead of entity linking
    entity_links: Optional[dict] = None


def oracle_components(examples, lexicon, inventory, threshold=None, link=False) -> Components:
    """
    Components whose scorers know the gold logical form of every answerable-LF example.

    With link=True the gold entities also replace entity linking.
    """
    entity_links = {} if link else None
    sketches, types, relations, forms = OracleScorer(), OracleScorer(), OracleScorer(), OracleScorer()
    for example in examples:
        if example.gold_lf is NK:
            continue
        sketches.register(example.question, [inventory_key(example.gold_lf)])
        types.register(example.question, types_of(example.gold_lf))
        relations.register(example.question, relations_of(example.gold_lf))
        forms.register(example.question, [canonical_key(example.gold_lf)])
        if link:
            entity_links[example.question] = LinkedEntities(tuple(
                Link(Mention((0, 0), e), e, 1.0) for e in sorted(entities_of(example.gold_lf))))
    return Components(lexicon, inventory, sketches, types, relations, forms, forms,
                      Threshold.fixed(0.5) if threshold is None else threshold, entity_links)


class StageError(Exception):
    def __init__(self, stage, error):
        super().__init__(f"{stage}: {error}")
        self.stage = stage
        self.error = error
        self.trace = None


def _stage(stage, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as e:
        raise StageError(stage, e) from e


def _decision(config, components):
    if config.mode == PipelineMode.ANSWERABLE:
        if Ablation.EGC in config.disabled:
            return Mode.UNANSWERABILITY, Threshold.never()
        return Mode.EGC, None
    return Mode.UNANSWERABILITY, components.threshold


def generate_candidates(question, kb, components: Components, config: PipelineConfig):
    """
    Link, retrieve and construct candidates for a question.

    Returns tuple:
        - assembled candidate list
        - PipelineTrace of the stages

    Raises StageError naming the failing stage; its trace covers the stages that finished.
    """
    trace = PipelineTrace()
    try:
        if components.entity_links is not None and question in components.entity_links:
            linked = components.entity_links[question]
        else:
            linked = _stage(Stage.ENTITY_LINKING, link_entities, question, kb, components.lexicon,
                            config.top_k_per_mention)
        trace = PipelineTrace(linked=linked.entity_ids)

        retrieved = []
        if Ablation.LFR not in config.disabled:
            def retrieve():
                paths = enumerate_paths(kb, linked, config.max_hops, config.max_paths)
                return rank_retrieved(question, paths_to_logical_forms(paths, kb),
                                      components.retriever_scorer, config.retriever_top_k)
            retrieved = _stage(Stage.RETRIEVAL, retrieve)
            trace = replace(trace, retrieved=frozenset(c.key for c in retrieved))

        constructed = []
        if Ablation.SGSR not in config.disabled:
            beam = _stage(Stage.SKETCH_GENERATION, generate_sketches, question, components.inventory,
                          components.sketch_ranker, config.beam)
            trace = replace(trace, sketches=tuple(beam.keys))
            schema = _stage(Stage.SCHEMA_RETRIEVAL, retrieve_schema, question, kb, components.type_scorer,
                            components.relation_scorer, config.schema_top_k)
            trace = replace(trace, types=tuple(schema.type_ids), relations=tuple(schema.relation_ids))
            constructed = _stage(Stage.INTEGRATION, integrate, beam, schema, linked, kb,
                                 config.max_groundings, Ablation.LFI not in config.disabled)
            trace = replace(trace, constructed=frozenset(c.key for c in constructed))
    except StageError as e:
        e.trace = trace
        raise

    return assemble_candidates(retrieved, constructed), trace


def answer_question(example, kb, components: Components, config: PipelineConfig) -> Prediction:
    """
    Run every pipeline stage for one example; a failing stage yields an (NK, NA)
    prediction naming the stage.
    """
    trace = PipelineTrace()
    try:
        candidates, trace = generate_candidates(example.question, kb, components, config)
        mode, threshold = _decision(config, components)
        return _stage(Stage.DISCRIMINATION, decide, example.question, candidates, components.discriminator_scorer,
                      threshold, kb, mode, example.qid, trace)
    except StageError as e:
        trace = e.trace or trace
        logging.warning(f"Question {example.qid} failed in {e.stage}: {e.error}")
        return Prediction.no_knowledge(example.qid, trace=trace, error=str(e.error), error_component=str(e.stage))


def run_pipeline(examples, kb, components: Components, config: PipelineConfig = PipelineConfig()):
    """
    Answer every example; results come back in input order.
    """
    if components.discriminator_scorer is None:
        raise ValueError("a discriminator scorer is required")
    if config.mode == PipelineMode.UNANSWERABILITY and components.threshold is None:
        raise ValueError("unanswerability mode requires a tuned threshold")
    if config.mode == PipelineMode.UNANSWERABILITY and Ablation.EGC in config.disabled:
        logging.warning("Disabling egc has no effect in unanswerability mode")

    examples = list(examples)
    logging.info(f"Running pipeline ({ablation_name(config.disabled)}, {config.mode}) on {len(examples)} questions")
    work = partial(answer_question, kb=kb, components=components, config=config)
    if config.jobs > 1 and len(examples) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            predictions = list(pool.map(work, examples, chunksize=max(1, len(examples) // (4 * config.jobs))))
    else:
        predictions = [work(example) for example in examples]

    failed = sum(1 for p in predictions if p.error is not None)
    if failed:
        logging.warning(f"{failed} questions failed")
    return predictions
