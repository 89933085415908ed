# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

"""
Question/answer examples and pipeline predictions with their JSON-lines formats.
"""

import logging

from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path
from typing import Optional

from kbqa.sexpr import SExprError, canonical_key, parse_sexpr, print_sexpr
from kbqa.utils import JSONLinesError, read_jsonl, write_jsonl


class Verdict(StrEnum):
    NK = "NK"
    NA = "NA"


NK = Verdict.NK
NA = Verdict.NA


class Category(StrEnum):
    ANSWERABLE = "answerable"
    MISSING_TYPE = "missing-type"
    MISSING_RELATION = "missing-relation"
    MISSING_MENTION_ENTITY = "missing-mention-entity"
    MISSING_OTHER_ENTITY = "missing-other-entity"
    MISSING_FACT = "missing-fact"

    @property
    def schema_gap(self):
        return self in (Category.MISSING_TYPE, Category.MISSING_RELATION, Category.MISSING_MENTION_ENTITY)

    @property
    def data_gap(self):
        return self in (Category.MISSING_OTHER_ENTITY, Category.MISSING_FACT)


class Generalization(StrEnum):
    IID = "iid"
    COMPOSITIONAL = "compositional"
    ZERO_SHOT = "zero-shot"


class DatasetError(Exception):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def as_lf(lf):
    if isinstance(lf, str):
        if lf != NK:
            raise ValueError(f"expected a logical form or NK, got '{lf}'")
        return NK
    return lf


def as_answer(values):
    """
    Normalize an answer: NA stays NA, an empty collection becomes NA.
    """
    if values is NA or values == NA:
        return NA
    values = frozenset(str(v) for v in values)
    return values if values else NA


def encode_answer(answer):
    return NA.value if answer is NA else sorted(answer)


def encode_lf(lf):
    return NK.value if lf is NK else print_sexpr(lf)


def lf_key(lf):
    return NK.value if lf is NK else canonical_key(lf)


@dataclass(frozen=True)
class QAExample:
    qid: str
    question: str
    gold_lf: object
    gold_answer: object
    category: Category = Category.ANSWERABLE
    gold_answer_ideal: object = None
    generalization: Optional[Generalization] = None

    def __post_init__(self):
        object.__setattr__(self, "gold_lf", as_lf(self.gold_lf))
        object.__setattr__(self, "gold_answer", as_answer(self.gold_answer))
        if self.gold_answer_ideal is not None:
            object.__setattr__(self, "gold_answer_ideal", as_answer(self.gold_answer_ideal))
        object.__setattr__(self, "category", Category(self.category))
        if self.generalization is not None:
            object.__setattr__(self, "generalization", Generalization(self.generalization))

        if self.gold_lf is NK and self.gold_answer is not NA:
            raise ValueError(f"{self.qid}: NK logical form requires an NA answer")
        if self.category == Category.ANSWERABLE and (self.gold_lf is NK or self.gold_answer is NA):
            raise ValueError(f"{self.qid}: answerable example needs a logical form and a non-empty answer")
        if self.category.schema_gap and self.gold_lf is not NK:
            raise ValueError(f"{self.qid}: category {self.category} requires an NK logical form")
        if self.category.data_gap and (self.gold_lf is NK or self.gold_answer is not NA):
            raise ValueError(f"{self.qid}: category {self.category} requires a logical form with an NA answer")

    @property
    def answerable(self):
        return self.category == Category.ANSWERABLE

    @property
    def ideal_answer(self):
        return self.gold_answer if self.gold_answer_ideal is None else self.gold_answer_ideal

    def relabel(self, **changes):
        return replace(self, **changes)


def example_to_json(example: QAExample):
    obj = {
        "qid": example.qid,
        "question": example.question,
        "gold_lf": encode_lf(example.gold_lf),
        "gold_answer": encode_answer(example.gold_answer),
        "category": example.category.value,
    }
    if example.gold_answer_ideal is not None:
        obj["gold_answer_ideal"] = encode_answer(example.gold_answer_ideal)
    if example.generalization is not None:
        obj["generalization"] = example.generalization.value
    return obj


def example_from_json(obj, kb=None) -> QAExample:
    gold_lf = obj["gold_lf"]
    ideal = obj.get("gold_answer_ideal")
    return QAExample(
        qid=str(obj["qid"]),
        question=obj["question"],
        gold_lf=NK if gold_lf == NK else parse_sexpr(gold_lf, kb),
        gold_answer=as_answer(obj["gold_answer"]),
        category=obj.get("category", Category.ANSWERABLE),
        gold_answer_ideal=None if ideal is None else as_answer(ideal),
        generalization=obj.get("generalization"),
    )


def load_dataset(path: Path, kb=None):
    """
    Read a JSON-lines dataset; with a KB, identifiers in logical forms resolve against it.
    """
    examples = []
    seen = set()
    try:
        for lineno, obj in read_jsonl(path):
            try:
                example = example_from_json(obj, kb)
            except KeyError as e:
                raise DatasetError(path, lineno, f"missing field {e}")
            except (SExprError, ValueError, TypeError) as e:
                raise DatasetError(path, lineno, str(e))
            if example.qid in seen:
                raise DatasetError(path, lineno, f"duplicate qid '{example.qid}'")
            seen.add(example.qid)
            examples.append(example)
    except JSONLinesError as e:
        raise DatasetError(e.path, e.line, e.reason)

    logging.info(f"Loaded {len(examples)} examples from {path}")
    return examples


def save_dataset(path: Path, examples):
    write_jsonl(path, (example_to_json(e) for e in examples))


@dataclass(frozen=True)
class PipelineTrace:
    """
    What each stage produced for one question.
    """
    linked: tuple = ()
    types: tuple = ()
    relations: tuple = ()
    sketches: tuple = ()
    retrieved: frozenset = field(default_factory=frozenset)
    constructed: frozenset = field(default_factory=frozenset)

    @property
    def candidates(self):
        return self.retrieved | self.constructed

    def to_json(self):
        return {
            "linked": list(self.linked),
            "types": list(self.types),
            "relations": list(self.relations),
            "sketches": list(self.sketches),
            "retrieved": sorted(self.retrieved),
            "constructed": sorted(self.constructed),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            tuple(obj.get("linked", ())),
            tuple(obj.get("types", ())),
            tuple(obj.get("relations", ())),
            tuple(obj.get("sketches", ())),
            frozenset(obj.get("retrieved", ())),
            frozenset(obj.get("constructed", ())),
        )


@dataclass(frozen=True)
class Prediction:
    qid: str
    logical_form: object
    answer: object
    top_score: Optional[float] = None
    n_candidates: int = 0
    trace: Optional[PipelineTrace] = None
    error: Optional[str] = None
    error_component: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "logical_form", as_lf(self.logical_form))
        object.__setattr__(self, "answer", as_answer(self.answer))
        if self.logical_form is NK and self.answer is not NA:
            raise ValueError(f"{self.qid}: NK prediction must have an NA answer")

    @classmethod
    def no_knowledge(cls, qid, **kwargs):
        return cls(qid, NK, NA, **kwargs)


def prediction_to_json(prediction: Prediction, with_trace=True):
    obj = {
        "qid": prediction.qid,
        "lf": encode_lf(prediction.logical_form),
        "answer": encode_answer(prediction.answer),
        "score": prediction.top_score,
        "n_candidates": prediction.n_candidates,
    }
    if with_trace and prediction.trace is not None:
        obj["trace"] = prediction.trace.to_json()
    if prediction.error is not None:
        obj["error"] = prediction.error
        obj["error_component"] = prediction.error_component
    return obj


def prediction_from_json(obj, kb=None) -> Prediction:
    trace = obj.get("trace")
    return Prediction(
        qid=str(obj["qid"]),
        logical_form=NK if obj["lf"] == NK else parse_sexpr(obj["lf"], kb),
        answer=as_answer(obj["answer"]),
        top_score=obj.get("score"),
        n_candidates=int(obj.get("n_candidates", 0)),
        trace=None if trace is None else PipelineTrace.from_json(trace),
        error=obj.get("error"),
        error_component=obj.get("error_component"),
    )


def save_predictions(path: Path, predictions, config=None):
    """
    Write predictions as JSON lines, preceded by a {"config": ...} header line when a config is given.
    """
    header = [] if config is None else [{"config": config}]
    write_jsonl(path, [*header, *(prediction_to_json(p) for p in predictions)])


def load_predictions(path: Path, kb=None):
    """
    Returns tuple:
        - list of predictions
        - config header (None when the file has none)
    """
    predictions, config = [], None
    try:
        for lineno, obj in read_jsonl(path):
            if "config" in obj and "qid" not in obj:
                config = obj["config"]
                continue
            try:
                predictions.append(prediction_from_json(obj, kb))
            except KeyError as e:
                raise DatasetError(path, lineno, f"missing field {e}")
            except (SExprError, ValueError, TypeError) as e:
                raise DatasetError(path, lineno, str(e))
    except JSONLinesError as e:
        raise DatasetError(e.path, e.line, e.reason)
    return predictions, config
