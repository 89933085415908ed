# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

"""
Metrics (EM, F1(R), F1(L)), breakdown reports, error classification and the ablation harness.
"""

import json
import logging

from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from enum import StrEnum
from pathlib import Path
from typing import Optional

from colorama import Fore, Style
from texttable import Texttable

from kbqa.dataset import NA, NK, Category, lf_key
from kbqa.discriminator import Stage, StageError, ablation_name, generate_candidates, oracle_components, run_pipeline
from kbqa.sexpr import build_sketch_inventory, count_relations


METRICS = ("em", "f1r", "f1l")
METRIC_NAMES = {"em": "EM", "f1r": "F1(R)", "f1l": "F1(L)"}
# oracle replay order for recall errors
RECALL_STAGES = (Stage.ENTITY_LINKING, Stage.SCHEMA_RETRIEVAL, Stage.SKETCH_GENERATION)


class EvaluationError(Exception):
    pass


class ErrorClass(StrEnum):
    THRESHOLDING = "thresholding"
    RERANKING = "reranking"
    RECALL = "recall"


def exact_match(pred, gold) -> int:
    return int(lf_key(pred.logical_form) == lf_key(gold.gold_lf))


def f1_regular(pred_answer, gold_answer) -> float:
    if pred_answer is NA or gold_answer is NA:
        return float(pred_answer is gold_answer)
    common = len(pred_answer & gold_answer)
    if not common:
        return 0.0
    precision = common / len(pred_answer)
    recall = common / len(gold_answer)
    return 2 * precision * recall / (precision + recall)


def f1_lenient(pred_answer, gold_answer, gold_answer_ideal=None) -> float:
    regular = f1_regular(pred_answer, gold_answer)
    if gold_answer_ideal is None:
        return regular
    return max(regular, f1_regular(pred_answer, gold_answer_ideal))


def classify_error(pred, gold) -> Optional[ErrorClass]:
    """
    None when the logical form is correct; recall when the gold form never
    reached the candidates, thresholding when the verdict is on the wrong side
    of No Knowledge, reranking otherwise.
    """
    if exact_match(pred, gold):
        return None
    if gold.gold_lf is NK:
        return ErrorClass.THRESHOLDING
    if pred.trace is not None and lf_key(gold.gold_lf) not in pred.trace.candidates:
        return ErrorClass.RECALL
    if pred.logical_form is NK:
        return ErrorClass.THRESHOLDING
    return ErrorClass.RERANKING


def _with_oracle(components, oracle, stage):
    match stage:
        case Stage.ENTITY_LINKING:
            return replace(components, entity_links=oracle.entity_links)
        case Stage.SCHEMA_RETRIEVAL:
            return replace(components, type_scorer=oracle.type_scorer, relation_scorer=oracle.relation_scorer)
        case Stage.SKETCH_GENERATION:
            return replace(components, inventory=oracle.inventory, sketch_ranker=oracle.sketch_ranker)


def replay_recall(example, kb, components, oracle, config) -> Optional[Stage]:
    """
    Swap the oracle in for each stage of RECALL_STAGES in turn, keeping the
    earlier swaps, and return the first stage whose swap brings the gold
    logical form into the candidates; None when no swap does.
    """
    gold = lf_key(example.gold_lf)
    for stage in RECALL_STAGES:
        components = _with_oracle(components, oracle, stage)
        try:
            candidates, _ = generate_candidates(example.question, kb, components, config)
        except StageError:
            continue
        if gold in {c.key for c in candidates}:
            return stage
    return None


def attribute_recall(preds, golds, kb, components, config) -> dict:
    """
    Recall stage (qid -> stage name) of every recall error, found by replaying it with oracles.
    """
    by_qid = {p.qid: p for p in preds}
    missed = [g for g in golds if classify_error(by_qid[g.qid], g) == ErrorClass.RECALL]
    if not missed:
        return {}

    inventory = build_sketch_inventory([g.gold_lf for g in golds if g.gold_lf is not NK])
    oracle = oracle_components(golds, components.lexicon, inventory, link=True)
    stages = {}
    for gold in missed:
        if stage := replay_recall(gold, kb, components, oracle, config):
            stages[gold.qid] = stage.value
    logging.info(f"Attributed {len(stages)} of {len(missed)} recall errors")
    return stages


@dataclass(frozen=True)
class QuestionRow:
    qid: str
    category: str
    generalization: str
    hops: str
    em: int
    f1r: float
    f1l: float
    error: Optional[str] = None
    recall_stage: Optional[str] = None


@dataclass(frozen=True)
class MetricCell:
    count: int
    em: Optional[float] = None
    f1r: Optional[float] = None
    f1l: Optional[float] = None

    @classmethod
    def of(cls, rows):
        rows = list(rows)
        if not rows:
            return cls(0)
        return cls(len(rows), *(sum(getattr(r, m) for r in rows) / len(rows) for m in METRICS))


@dataclass
class EvalReport:
    overall: MetricCell
    by_category: dict
    by_answerability: dict
    by_generalization: dict
    by_hops: dict
    errors: dict
    rows: list = field(default_factory=list)
    coverage: Optional[float] = None

    def tables(self):
        return {
            "overall": {"overall": self.overall},
            "answerability": self.by_answerability,
            "category": self.by_category,
            "generalization": self.by_generalization,
            "hops": self.by_hops,
        }

    def to_json(self):
        return {
            "overall": asdict(self.overall),
            "by_category": {k: asdict(v) for k, v in self.by_category.items()},
            "by_answerability": {k: asdict(v) for k, v in self.by_answerability.items()},
            "by_generalization": {k: asdict(v) for k, v in self.by_generalization.items()},
            "by_hops": {k: asdict(v) for k, v in self.by_hops.items()},
            "errors": self.errors,
            "coverage": self.coverage,
            "rows": [asdict(r) for r in self.rows],
        }

    @classmethod
    def from_json(cls, obj):
        def cells(table):
            return {k: MetricCell(**v) for k, v in table.items()}

        return cls(
            MetricCell(**obj["overall"]),
            cells(obj["by_category"]),
            cells(obj["by_answerability"]),
            cells(obj["by_generalization"]),
            cells(obj["by_hops"]),
            dict(obj["errors"]),
            [QuestionRow(**r) for r in obj.get("rows", [])],
            obj.get("coverage"),
        )


def _hops(example):
    return NK.value if example.gold_lf is NK else str(count_relations(example.gold_lf))


def _group(rows, key, keys=()):
    groups = {k: [] for k in keys}
    for row in rows:
        groups.setdefault(key(row), []).append(row)
    ordered = list(keys) + sorted(k for k in groups if k not in keys)
    return {k: MetricCell.of(groups[k]) for k in ordered}


def coverage(preds, golds) -> Optional[float]:
    """
    Fraction of questions with a gold logical form whose gold form was among the assembled candidates.
    """
    by_qid = {p.qid: p for p in preds}
    covered = [
        lf_key(g.gold_lf) in by_qid[g.qid].trace.candidates
        for g in golds if g.gold_lf is not NK and by_qid[g.qid].trace is not None
    ]
    return sum(covered) / len(covered) if covered else None


def evaluate_dataset(preds, golds, recall_stages=None) -> EvalReport:
    """
    Score predictions against gold examples; recall_stages (qid -> stage, see attribute_recall)
    fills in the stage of each recall error.
    """
    preds, golds = list(preds), list(golds)
    by_qid = {p.qid: p for p in preds}
    if len(by_qid) != len(preds) or set(by_qid) != {g.qid for g in golds} or len(preds) != len(golds):
        missing = sorted({g.qid for g in golds} ^ set(by_qid))
        raise EvaluationError(f"predictions and gold examples are not qid-aligned (mismatched: {missing[:5]})")

    rows = []
    for gold in golds:
        pred = by_qid[gold.qid]
        error = classify_error(pred, gold)
        rows.append(QuestionRow(
            qid=gold.qid,
            category=gold.category.value,
            generalization=gold.generalization.value if gold.generalization else "unlabeled",
            hops=_hops(gold),
            em=exact_match(pred, gold),
            f1r=f1_regular(pred.answer, gold.gold_answer),
            f1l=f1_lenient(pred.answer, gold.gold_answer, gold.gold_answer_ideal),
            error=error.value if error else None,
            recall_stage=(recall_stages or {}).get(gold.qid) if error == ErrorClass.RECALL else None,
        ))

    errors = Counter(r.error for r in rows if r.error)
    errors.update(f"recall/{r.recall_stage}" for r in rows if r.recall_stage)

    report = EvalReport(
        overall=MetricCell.of(rows),
        by_category=_group(rows, lambda r: r.category, [c.value for c in Category]),
        by_answerability=_group(rows, lambda r: "answerable" if r.category == Category.ANSWERABLE else "unanswerable",
                                ["answerable", "unanswerable"]),
        by_generalization=_group(rows, lambda r: r.generalization),
        by_hops=_group(rows, lambda r: r.hops),
        errors={e.value: errors.get(e.value, 0) for e in ErrorClass} | {
            k: v for k, v in sorted(errors.items()) if k.startswith("recall/")},
        rows=rows,
        coverage=coverage(preds, golds),
    )
    logging.info(f"Evaluated {len(rows)} questions: EM {report.overall.em:.4f}" if rows else "Evaluated 0 questions")
    return report


def run_ablation(examples, kb, components, config, toggles=()):
    """
    One pipeline run for the full system and one per requested set of disabled components.

    Returns dict of ablation name ("full", "-lfr", "-lfr-sgsr", ...) to EvalReport.
    """
    examples = list(examples)
    runs = [frozenset()] + [frozenset(t) for t in toggles]
    reports = {}
    for disabled in dict.fromkeys(runs):
        name = ablation_name(disabled)
        run = config.without(*disabled)
        predictions = run_pipeline(examples, kb, components, run)
        stages = attribute_recall(predictions, examples, kb, components, run)
        reports[name] = evaluate_dataset(predictions, examples, stages)
        logging.info(f"{name}: coverage {reports[name].coverage}")
    return reports


def _fmt(value):
    return "-" if value is None else f"{value * 100:.2f}"


def render_report(report: EvalReport, title="") -> str:
    sections = []
    if title:
        sections.append(title)

    table = Texttable(max_width=120)
    table.set_deco(Texttable.BORDER | Texttable.HEADER | Texttable.VLINES)
    table.header(["split", "N"] + [METRIC_NAMES[m] for m in METRICS])
    table.set_cols_align(["l", "r", "r", "r", "r"])
    table.set_cols_dtype(["t"] * 5)
    for name, cells in report.tables().items():
        for key, cell in cells.items():
            label = key if name in ("overall", "answerability", "category") else f"{name}: {key}"
            table.add_row([label, cell.count] + [_fmt(getattr(cell, m)) for m in METRICS])
    sections.append(table.draw())

    errors = Texttable()
    errors.set_deco(Texttable.BORDER | Texttable.HEADER | Texttable.VLINES)
    errors.header(["error class", "count"])
    errors.set_cols_align(["l", "r"])
    for key, count in report.errors.items():
        errors.add_row([key, count])
    if report.coverage is not None:
        errors.add_row(["coverage", _fmt(report.coverage)])
    sections.append(errors.draw())
    return "\n\n".join(sections)


def save_report(path: Path, report: EvalReport, config=None):
    obj = report.to_json()
    if config is not None:
        obj = {"config": config, **obj}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=4, sort_keys=True)
        f.write("\n")


def load_report(path: Path) -> EvalReport:
    with open(path, encoding="utf-8") as f:
        try:
            return EvalReport.from_json(json.load(f))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise EvaluationError(f"{path}: not an evaluation report ({e})")


def red(text):
    return Fore.RED + (text or '') + Style.RESET_ALL


def green(text):
    return Fore.GREEN + (text or '') + Style.RESET_ALL


@dataclass(frozen=True)
class MetricChange:
    table: str
    cell: str
    metric: str
    old: Optional[float]
    new: Optional[float]

    @property
    def regression(self):
        return self.old is not None and (self.new is None or self.new < self.old)

    def __str__(self):
        return f"{self.table}/{self.cell} {METRIC_NAMES[self.metric]}: {_fmt(self.old)} -> {_fmt(self.new)}"


def compare_reports(old: EvalReport, new: EvalReport):
    """
    Every cell metric that changed between two reports, in table order.
    """
    changes = []
    old_tables, new_tables = old.tables(), new.tables()
    for table in old_tables:
        cells = old_tables[table].keys() | new_tables[table].keys()
        for cell in sorted(cells):
            before = old_tables[table].get(cell, MetricCell(0))
            after = new_tables[table].get(cell, MetricCell(0))
            for metric in METRICS:
                a, b = getattr(before, metric), getattr(after, metric)
                if a != b:
                    changes.append(MetricChange(table, cell, metric, a, b))
    return changes


def render_changes(changes) -> str:
    lines = [f"--- Changed metrics ({len(changes)}) ---"]
    for change in changes:
        color = red if change.regression else green
        lines.append(" " + color(str(change)))
    return "\n".join(lines)
