# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

"""
Lexical featurizer, linear scorers, their training objectives and the NK threshold.
"""

import logging
import math
import re

from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Optional, Protocol

import numpy as np
import yaml

from kbqa.utils import extract_numbers, stem, words


FEATURE_DIMENSION = 12
FEATURIZER_ID = "lexical-v1"
MODEL_HEADER = "kbqa-linear-scorer 1"

STOPWORDS = frozenset("""
    a an the of in on at to for by with from and or is are was were be been
    which what who whom whose where when how does do did that this these those
    there it its as has have had than
""".split())

# Operator and slot words of printed logical forms and sketches
STRUCTURE_WORDS = frozenset({
    "and", "join", "r", "count", "argmin", "argmax", "lt", "le", "gt", "ge",
    "type", "rel", "ent", "num",
})

SUPERLATIVE_CUES = frozenset({
    "largest", "smallest", "most", "least", "highest", "lowest", "biggest",
    "oldest", "youngest", "earliest", "latest", "newest", "maximum", "minimum",
    "first", "last", "top",
})

COMPARATIVE_CUES = frozenset({
    "more", "less", "greater", "fewer", "larger", "smaller", "higher", "lower",
    "before", "after", "above", "below", "over", "under", "exceeding",
})

_COUNT_OP = re.compile(r"\(COUNT\b")
_SUPERLATIVE_OP = re.compile(r"\(ARG(?:MIN|MAX)\b")
_COMPARATIVE_OP = re.compile(r"\((?:lt|le|gt|ge)\s")


class ScorerError(Exception):
    pass


class DimensionMismatch(ScorerError):
    pass


class EmptyNegatives(ScorerError):
    pass


class NonFiniteLoss(ScorerError):
    pass


class Objective(StrEnum):
    CONTRASTIVE = "contrastive"
    BINARY = "binary"
    MULTICLASS = "multiclass"


@dataclass(frozen=True)
class ItemFlags:
    retrieved: bool = False
    constructed: bool = False


@dataclass(frozen=True)
class ScoringItem:
    """
    Something to score against a question: a logical form, a sketch or a schema element.
    """
    key: str
    text: str
    flags: ItemFlags = field(default_factory=ItemFlags)


def _content(tokens):
    return [stem(t) for t in tokens if t not in STOPWORDS and t not in STRUCTURE_WORDS]


def _fraction(part, whole):
    return len(part & whole) / len(part) if part else 0.0


def _has_count_cue(tokens):
    pairs = set(zip(tokens, tokens[1:]))
    return ("how", "many") in pairs or ("number", "of") in pairs


def featurize(question: str, item_text: str, flags: ItemFlags = ItemFlags()) -> np.ndarray:
    q_tokens = words(question)
    i_tokens = words(item_text)
    q_all, i_all = {stem(t) for t in q_tokens}, {stem(t) for t in i_tokens}
    q_content, i_content = _content(q_tokens), _content(i_tokens)
    q_set, i_set = set(q_content), set(i_content)
    i_bigrams = set(zip(i_content, i_content[1:]))
    q_bigrams = set(zip(q_content, q_content[1:]))

    union = q_all | i_all
    return np.array([
        len(q_all & i_all) / len(union) if union else 0.0,
        _fraction(i_set, q_set),
        _fraction(q_set, i_set),
        len(i_tokens) / (len(i_tokens) + 10.0),
        float(_has_count_cue(q_tokens) and bool(_COUNT_OP.search(item_text))),
        float(bool(SUPERLATIVE_CUES & set(q_tokens)) and bool(_SUPERLATIVE_OP.search(item_text))),
        float(bool(COMPARATIVE_CUES & set(q_tokens)) and bool(_COMPARATIVE_OP.search(item_text))),
        float(bool(extract_numbers(question)) and bool(extract_numbers(item_text))),
        float(flags.retrieved),
        float(flags.constructed),
        _fraction(i_bigrams, q_bigrams),
        1.0,
    ])


@dataclass(frozen=True, eq=False)
class LinearScorer:
    weights: np.ndarray
    bias: float = 0.0
    objective: Objective = Objective.CONTRASTIVE
    featurizer: str = FEATURIZER_ID

    @classmethod
    def zeros(cls, dimension=FEATURE_DIMENSION, **kwargs):
        return cls(np.zeros(dimension), 0.0, **kwargs)

    @classmethod
    def from_params(cls, params, **kwargs):
        params = np.asarray(params, dtype=float)
        return cls(params[:-1].copy(), float(params[-1]), **kwargs)

    @property
    def dimension(self):
        return len(self.weights)

    @property
    def params(self):
        return np.append(self.weights, self.bias)

    def same_as(self, other):
        return (self.objective == other.objective and self.featurizer == other.featurizer and
                self.bias == other.bias and np.array_equal(self.weights, other.weights))


def _features(model, features):
    features = np.asarray(features, dtype=float)
    if features.shape[-1] != model.dimension:
        raise DimensionMismatch(f"model has dimension {model.dimension}, features have {features.shape[-1]}")
    return features


def score(model: LinearScorer, features) -> float:
    features = _features(model, features)
    if features.ndim != 1:
        raise DimensionMismatch(f"expected a single feature vector, got shape {features.shape}")
    return float(model.weights @ features + model.bias)


def score_matrix(model: LinearScorer, features) -> np.ndarray:
    features = np.atleast_2d(_features(model, features))
    return features @ model.weights + model.bias


def _softmax_cross_entropy(model, rows, gold_index):
    """
    Negative log-softmax of row gold_index and its gradient over (weights, bias).
    """
    scores = rows @ model.weights + model.bias
    shift = scores.max()
    exp = np.exp(scores - shift)
    total = exp.sum()
    loss = shift + math.log(total) - scores[gold_index]
    probs = exp / total
    grad_w = rows.T @ probs - rows[gold_index]
    grad_b = probs.sum() - 1.0
    return float(loss), np.append(grad_w, grad_b)


def contrastive_loss(model: LinearScorer, gold_features, negative_features):
    negatives = np.asarray(negative_features, dtype=float)
    if negatives.size == 0:
        raise EmptyNegatives("contrastive loss needs at least one negative")
    rows = np.vstack([_features(model, gold_features), _features(model, negatives)])
    return _softmax_cross_entropy(model, rows, 0)


def multiclass_loss(model: LinearScorer, class_features, gold_index: int):
    rows = np.atleast_2d(_features(model, class_features))
    if not 0 <= gold_index < len(rows):
        raise ScorerError(f"gold index {gold_index} out of range for {len(rows)} classes")
    return _softmax_cross_entropy(model, rows, gold_index)


def binary_loss(model: LinearScorer, features, label: int):
    features = _features(model, features)
    s = float(model.weights @ features + model.bias)
    loss = float(np.logaddexp(0.0, s) - label * s)
    # logistic function via tanh stays finite for large |s|
    residual = 0.5 * (1.0 + math.tanh(0.5 * s)) - label
    return loss, residual * np.append(features, 1.0)


@dataclass(frozen=True)
class RankingExample:
    gold: np.ndarray
    negatives: np.ndarray


@dataclass(frozen=True)
class BinaryExample:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class ClassificationExample:
    classes: np.ndarray
    gold_index: int


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    epochs: int = 30
    batch: int = 8
    # None uses every negative
    negatives_per_example: Optional[int] = None
    seed: int = 0


@dataclass(frozen=True, eq=False)
class TrainResult:
    model: LinearScorer
    losses: tuple


def _example_loss(objective, model, example, rng=None, k=None):
    match objective:
        case Objective.CONTRASTIVE:
            negatives = example.negatives
            if rng is not None and k is not None and len(negatives) > k:
                negatives = negatives[rng.choice(len(negatives), size=k, replace=False)]
            return contrastive_loss(model, example.gold, negatives)
        case Objective.BINARY:
            return binary_loss(model, example.features, example.label)
        case Objective.MULTICLASS:
            return multiclass_loss(model, example.classes, example.gold_index)
    raise ScorerError(f"unknown objective '{objective}'")


def _dimension(objective, example):
    match objective:
        case Objective.CONTRASTIVE:
            return len(example.gold)
        case Objective.BINARY:
            return len(example.features)
    return np.atleast_2d(example.classes).shape[1]


def dataset_loss(objective, model, data):
    return float(np.mean([_example_loss(objective, model, example)[0] for example in data]))


def train(objective, data, config: TrainConfig = TrainConfig()) -> TrainResult:
    """
    Mini-batch gradient descent from the zero vector.

    The loss trace holds the mean full-data loss (all negatives) after each epoch.
    """
    objective = Objective(objective)
    data = list(data)
    if not data:
        raise ScorerError("cannot train on an empty dataset")

    rng = np.random.default_rng(config.seed)
    dimension = _dimension(objective, data[0])
    params = np.zeros(dimension + 1)
    model = LinearScorer.from_params(params, objective=objective)
    losses = []

    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), config.batch):
            batch = [data[i] for i in order[start:start + config.batch]]
            grad = np.zeros_like(params)
            for example in batch:
                loss, example_grad = _example_loss(objective, model, example, rng, config.negatives_per_example)
                if not math.isfinite(loss) or not np.all(np.isfinite(example_grad)):
                    raise NonFiniteLoss(f"non-finite loss {loss} at epoch {epoch}, batch {start // config.batch}"
                                        f" (lr={config.lr}, |params|={np.linalg.norm(params):.3g})")
                grad += example_grad
            params = params - config.lr * grad / len(batch)
            model = LinearScorer.from_params(params, objective=objective)

        losses.append(dataset_loss(objective, model, data))
        logging.debug(f"epoch {epoch}: loss {losses[-1]:.6f}")

    if losses:
        logging.info(f"Trained {objective} scorer on {len(data)} examples, final loss {losses[-1]:.6f}")
    return TrainResult(model, tuple(losses))


class ThresholdMetric(StrEnum):
    EM = "em"
    ACCURACY = "accuracy"


@dataclass(frozen=True)
class DevPoint:
    """
    One dev question: top candidate score (None without candidates), whether
    the gold logical form exists and whether the top candidate is it.
    """
    score: Optional[float]
    gold_valid: bool
    top_correct: bool = True


@dataclass(frozen=True)
class Threshold:
    """
    NK threshold; tuned_value is the dev metric reached at tau, None when tau was not tuned.
    """
    tau: float
    tuned_metric: str
    tuned_value: Optional[float] = None

    @classmethod
    def never(cls):
        return cls(-math.inf, "fixed")

    @classmethod
    def fixed(cls, tau):
        return cls(float(tau), "fixed")

    def rejects(self, score):
        """
        True when the top score means No Knowledge.
        """
        return score is None or score < self.tau


def _credit(points, metric):
    """
    Returns tuple of arrays: credit when predicting a logical form, credit when predicting NK.
    """
    valid = np.array([p.gold_valid for p in points], dtype=bool)
    correct = np.array([p.top_correct for p in points], dtype=bool)
    if metric == ThresholdMetric.EM:
        accept = valid & correct
    else:
        accept = valid
    return accept.astype(int), (~valid).astype(int)


def threshold_value(points, tau, metric=ThresholdMetric.EM):
    accept, reject = _credit(points, ThresholdMetric(metric))
    total = 0
    for point, a, r in zip(points, accept, reject):
        total += r if point.score is None or point.score < tau else a
    return total / len(points)


def tune_threshold(points, metric=ThresholdMetric.EM) -> Threshold:
    """
    Sweep tau over -inf, the midpoints of consecutive distinct top scores and
    +inf; keep the best value, the largest tau on ties.
    """
    metric = ThresholdMetric(metric)
    points = list(points)
    if not points:
        raise ScorerError("cannot tune a threshold on an empty dev set")

    accept, reject = _credit(points, metric)
    scored = np.array([p.score is not None for p in points], dtype=bool)
    base = int(reject[~scored].sum())

    scores = np.array([p.score for p in points if p.score is not None], dtype=float)
    order = np.argsort(scores, kind="stable")
    scores, accept, reject = scores[order], accept[scored][order], reject[scored][order]

    distinct = np.unique(scores)
    taus = np.concatenate([[-np.inf], (distinct[:-1] + distinct[1:]) / 2.0, [np.inf]])

    # k = number of scores strictly below tau, those predict NK
    k = np.searchsorted(scores, taus, side="left")
    reject_prefix = np.concatenate([[0], np.cumsum(reject)])
    accept_prefix = np.concatenate([[0], np.cumsum(accept)])
    values = base + reject_prefix[k] + (accept_prefix[-1] - accept_prefix[k])

    best = len(values) - 1 - int(np.argmax(values[::-1]))
    threshold = Threshold(float(taus[best]), metric.value, float(values[best]) / len(points))
    logging.info(f"Tuned threshold tau={threshold.tau} ({metric}={threshold.tuned_value:.4f})")
    return threshold


class Scorer(Protocol):
    def score(self, question: str, item: ScoringItem) -> float:
        ...


class LinearItemScorer():
    def __init__(self, model: LinearScorer):
        self.model = model

    def score(self, question, item):
        return score(self.model, featurize(question, item.text, item.flags))


class OracleScorer():
    """
    Scores 1.0 for items registered as gold for a question and 0.0 otherwise.
    """
    def __init__(self, gold=None):
        self.gold = {}
        for question, keys in (gold or {}).items():
            self.register(question, keys)

    def register(self, question, keys):
        self.gold.setdefault(question, set()).update(keys)

    def score(self, question, item):
        return 1.0 if item.key in self.gold.get(question, ()) else 0.0


BASELINE_WEIGHTS = (1.0, 1.0, 0.5, -0.1, 2.0, 2.0, 2.0, 0.5, 0.0, 0.0, 0.5, 0.0)


def lexical_scorer() -> LinearItemScorer:
    """
    Untrained scorer with hand-set weights favouring token overlap and operator cues.
    """
    return LinearItemScorer(LinearScorer(np.array(BASELINE_WEIGHTS), 0.0, featurizer=FEATURIZER_ID))


def save_model(path: Path, model: LinearScorer):
    lines = [
        MODEL_HEADER,
        f"objective {model.objective}",
        f"featurizer {model.featurizer}",
        f"dimension {model.dimension}",
        "weights",
        *(repr(float(w)) for w in model.weights),
        "bias",
        repr(float(model.bias)),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _header_value(path, lines, index, name):
    parts = lines[index].split(" ", 1) if index < len(lines) else []
    if len(parts) != 2 or parts[0] != name:
        raise ScorerError(f"{path}:{index + 1}: expected '{name} <value>'")
    return parts[1]


def load_model(path: Path) -> LinearScorer:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MODEL_HEADER:
        raise ScorerError(f"{path}:1: not a linear scorer model file")
    try:
        objective = Objective(_header_value(path, lines, 1, "objective"))
    except ValueError as e:
        raise ScorerError(f"{path}:2: {e}")
    featurizer = _header_value(path, lines, 2, "featurizer")
    dimension = int(_header_value(path, lines, 3, "dimension"))

    expected = 4 + 1 + dimension + 1 + 1
    if len(lines) != expected or lines[4] != "weights" or lines[5 + dimension] != "bias":
        raise ScorerError(f"{path}: malformed body for dimension {dimension}")
    try:
        weights = np.array([float(w) for w in lines[5:5 + dimension]])
        bias = float(lines[-1])
    except ValueError as e:
        raise ScorerError(f"{path}: {e}")
    if featurizer != FEATURIZER_ID:
        logging.warning(f"{path}: model was trained with featurizer '{featurizer}'")
    return LinearScorer(weights, bias, objective, featurizer)


def save_threshold(path: Path, threshold: Threshold):
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump({
            "tau": threshold.tau,
            "tuned_metric": threshold.tuned_metric,
            "tuned_value": threshold.tuned_value,
        }, f, sort_keys=False)


def load_threshold(path: Path) -> Threshold:
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f)
    try:
        value = data.get("tuned_value")
        return Threshold(float(data["tau"]), str(data["tuned_metric"]), None if value is None else float(value))
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise ScorerError(f"{path}: invalid threshold file ({e})")
