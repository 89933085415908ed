# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

import json
import logging
import sys
import typer

from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, List, Optional

from kbqa import env
from kbqa.dataset import NK, DatasetError, load_dataset, load_predictions, save_dataset, save_predictions
from kbqa.discriminator import Components, PipelineMode, oracle_components, parse_ablations, run_pipeline
from kbqa.env import ConfigError
from kbqa.evaluate import (
    EvaluationError, compare_reports, evaluate_dataset, load_report, render_changes, render_report, run_ablation,
    save_report,
)
from kbqa.kb import KBIntegrityError, KBParseError, load_kb, read_kb, save_kb, validate_kb
from kbqa.linker import build_lexicon
from kbqa.perturb import DeletionKind, PerturbationError, load_plan, perturb_kb, sample_plan, save_plan
from kbqa.scorer import (
    LinearItemScorer, ScorerError, Threshold, ThresholdMetric, lexical_scorer, load_model, load_threshold,
    save_model, save_threshold, tune_threshold,
)
from kbqa.sexpr import InventoryError, SExprError, build_sketch_inventory, load_inventory, save_inventory
from kbqa.synthetic import generate_questions, random_kb, split_dataset
from kbqa.training import Component, Regime, dev_points, train_component
from kbqa.utils import JSONLinesError


DATA_ERRORS = (
    KBParseError, KBIntegrityError, DatasetError, PerturbationError, SExprError, InventoryError, ScorerError,
    EvaluationError, JSONLinesError,
)

INVENTORY_FILE = "inventory.jsonl"
THRESHOLD_FILE = "threshold.yml"
SCORED_COMPONENTS = (Component.SKETCH, Component.TYPES, Component.RELATIONS, Component.RETRIEVER)


@contextmanager
def data_errors():
    """
    Turn library errors into an error message and exit code:
    1 for missing files, 2 for malformed or inconsistent data.
    """
    try:
        yield
    except FileNotFoundError as e:
        logging.error(str(e))
        sys.exit(1)
    except DATA_ERRORS as e:
        logging.error(str(e))
        sys.exit(2)


def _usage_error(message):
    logging.error(message)
    sys.exit(1)


def _effective_config(**values) -> env.RunConfig:
    """
    Apply command line options (config keys spelled with '__' for '.') on top of the loaded config.
    """
    try:
        config = env.get_config().updated({k.replace("__", "."): v for k, v in values.items()})
    except ConfigError as e:
        logging.error(f"Invalid configuration: {e}")
        sys.exit(e.exit_code)
    env.set_config(config)
    return config


def _require(config, key, option):
    path = config.path(key)
    if path is None:
        _usage_error(f"No {key} configured (use {option} or set {key} in the config file)")
    return path


def _load_kb(config):
    kb_dir = _require(config, "kb.dir", "--kb-dir")
    with data_errors():
        return load_kb(kb_dir)


def _load_dataset(config, key, kb):
    path = _require(config, key, "--dataset")
    with data_errors():
        return load_dataset(path, kb)


def _models_dir(config):
    return _require(config, "models.dir", "--models-dir")


def _model_scorer(models_dir, component, required=False):
    path = models_dir / f"{component}.model"
    if not path.exists():
        if required:
            _usage_error(f"Missing trained {component} model: {path} (run `kbqa train {component}` first)")
        logging.warning(f"No trained {component} model at {path}, using the lexical scorer")
        return lexical_scorer()
    with data_errors():
        return LinearItemScorer(load_model(path))


def _inventory(config, kb):
    path = _models_dir(config) / INVENTORY_FILE
    with data_errors():
        if path.exists():
            return load_inventory(path)
        train_path = config.path("dataset.train")
        if train_path is None:
            _usage_error(f"Missing sketch inventory: {path} (run `kbqa train sketch` or set dataset.train)")
        logging.warning(f"No sketch inventory at {path}, building it from {train_path}")
        examples = load_dataset(train_path, kb)
        return build_sketch_inventory([e.gold_lf for e in examples if e.gold_lf is not NK])


def _threshold(config, required):
    if config["threshold.tau"] is not None:
        return Threshold.fixed(config["threshold.tau"])
    path = _models_dir(config) / THRESHOLD_FILE
    if not path.exists():
        if required:
            _usage_error(f"Missing tuned threshold: {path} (run `kbqa tune-threshold` or set threshold.tau)")
        return None
    with data_errors():
        return load_threshold(path)


def load_components(config, kb, discriminator=True, threshold=True) -> Components:
    """
    Components from the trained artifacts in models.dir; untrained upstream
    components fall back to the lexical scorer.
    """
    models_dir = _models_dir(config)
    scorers = {c: _model_scorer(models_dir, c) for c in SCORED_COMPONENTS}
    needs_threshold = threshold and config["pipeline.mode"] == PipelineMode.UNANSWERABILITY
    return Components(
        lexicon=build_lexicon(kb),
        inventory=_inventory(config, kb),
        sketch_ranker=scorers[Component.SKETCH],
        type_scorer=scorers[Component.TYPES],
        relation_scorer=scorers[Component.RELATIONS],
        retriever_scorer=scorers[Component.RETRIEVER],
        discriminator_scorer=_model_scorer(models_dir, Component.DISCRIMINATOR, required=discriminator)
        if discriminator else lexical_scorer(),
        threshold=_threshold(config, required=needs_threshold),
    )


def _ablations(values):
    """
    One set of disabled components per --disable value.
    """
    try:
        return [parse_ablations([value]) for value in values or []]
    except ValueError as e:
        _usage_error(f"Invalid --disable value: {e}")


def _oracle_components(config, kb, examples):
    answerable = [e.gold_lf for e in examples if e.gold_lf is not NK]
    train_path = config.path("dataset.train")
    with data_errors():
        if train_path is not None:
            answerable += [e.gold_lf for e in load_dataset(train_path, kb) if e.gold_lf is not NK]
        if not answerable:
            _usage_error("Oracle components need at least one question with a logical form")
        inventory = build_sketch_inventory(answerable)
    tau = config["threshold.tau"]
    return oracle_components(examples, build_lexicon(kb), inventory, None if tau is None else Threshold.fixed(tau))


@env.setup_env
def kb_validate(kb_dir: Optional[Path] = None):
    """
    Check a KB directory against every integrity rule and list the violations.
    """
    config = _effective_config(kb__dir=kb_dir)
    path = _require(config, "kb.dir", "--kb-dir")
    with data_errors():
        kb = read_kb(path)
    report = validate_kb(kb)
    print(report)
    if not report.ok:
        sys.exit(2)


@env.setup_env
def perturb(output: Annotated[Path, typer.Argument()],
            kb_dir: Optional[Path] = None,
            dataset: Optional[Path] = None,
            plan: Optional[Path] = None,
            types: int = 0,
            relations: int = 0,
            entities: int = 0,
            facts: int = 0):
    """
    Delete KB elements and relabel the dataset: writes OUTPUT/kb/, OUTPUT/dataset.jsonl and OUTPUT/plan.jsonl.

    The plan is read from --plan or sampled with the configured seed from the --types/--relations/--entities/--facts counts.
    """
    config = _effective_config(kb__dir=kb_dir, dataset__train=dataset)
    kb = _load_kb(config)
    examples = _load_dataset(config, "dataset.train", kb)

    with data_errors():
        if plan is not None:
            deletion_plan = load_plan(plan)
        else:
            counts = {
                DeletionKind.TYPE: types,
                DeletionKind.RELATION: relations,
                DeletionKind.ENTITY: entities,
                DeletionKind.FACT: facts,
            }
            if not any(counts.values()):
                _usage_error("Nothing to delete: give --plan or one of --types/--relations/--entities/--facts")
            deletion_plan = sample_plan(kb, examples, counts, config["seed"])

        reduced, relabeled = perturb_kb(kb, examples, deletion_plan)

    output.mkdir(parents=True, exist_ok=True)
    save_kb(reduced, output / "kb")
    save_dataset(output / "dataset.jsonl", relabeled.examples)
    save_plan(output / "plan.jsonl", deletion_plan)

    print(f"Deleted {len(deletion_plan.deletions)} elements, wrote {output}")
    for category, count in sorted(relabeled.counts().items()):
        print(f"{category:<24}: {count}")


@env.setup_env
def generate(output: Annotated[Path, typer.Argument()],
             questions: int = 60,
             entities: int = 24,
             types: int = 4,
             relations: int = 6):
    """
    Write a seeded synthetic KB (OUTPUT/kb/) and train/dev/test datasets of answerable questions.
    """
    config = env.get_config()
    seed = config["seed"]
    kb = random_kb(seed, n_types=types, n_entities=entities, n_relations=relations)
    examples = generate_questions(kb, questions, seed)
    if not examples:
        logging.error("The generated KB supports no question template, try another seed")
        sys.exit(2)

    output.mkdir(parents=True, exist_ok=True)
    save_kb(kb, output / "kb")
    for name, split in zip(("train", "dev", "test"), split_dataset(examples, seed)):
        save_dataset(output / f"{name}.jsonl", split)
        logging.info(f"Wrote {len(split)} {name} questions")
    print(f"Generated {kb!r} and {len(examples)} questions in {output}")


@env.setup_env
def train(component: Annotated[Component, typer.Argument()],
          kb_dir: Optional[Path] = None,
          dataset: Optional[Path] = None,
          models_dir: Optional[Path] = None,
          regime: Regime = Regime.ANSWERABLE_AND_UNANSWERABLE):
    """
    Train one pipeline component on the training dataset and save it to MODELS_DIR/<component>.model.
    """
    config = _effective_config(kb__dir=kb_dir, dataset__train=dataset, models__dir=models_dir)
    kb = _load_kb(config)
    examples = _load_dataset(config, "dataset.train", kb)
    output = _models_dir(config)

    if component == Component.SKETCH:
        with data_errors():
            inventory = build_sketch_inventory([e.gold_lf for e in examples if e.gold_lf is not NK])
        save_inventory(inventory, output / INVENTORY_FILE)
        logging.info(f"Saved sketch inventory to {output / INVENTORY_FILE}")

    components = load_components(config, kb, discriminator=False, threshold=False)
    negatives = config["discriminator.negatives"] if component == Component.DISCRIMINATOR else None
    with data_errors():
        result = train_component(component, examples, kb, components, config.pipeline_config(),
                                 config.train_config(negatives), regime)

    path = output / f"{component}.model"
    save_model(path, result.model)
    final = f", final loss {result.losses[-1]:.6f}" if result.losses else ""
    print(f"Saved {component} model to {path}{final}")


@env.setup_env
def tune_threshold_command(kb_dir: Optional[Path] = None,
                           dataset: Optional[Path] = None,
                           models_dir: Optional[Path] = None,
                           metric: Optional[ThresholdMetric] = None):
    """
    Pick the NK threshold that maximizes the dev metric and save it to MODELS_DIR/threshold.yml.
    """
    config = _effective_config(kb__dir=kb_dir, dataset__dev=dataset, models__dir=models_dir,
                               threshold__metric=metric.value if metric else None)
    kb = _load_kb(config)
    examples = _load_dataset(config, "dataset.dev", kb)
    components = load_components(config, kb, threshold=False)

    points = dev_points(examples, kb, components, config.pipeline_config())
    with data_errors():
        threshold = tune_threshold(points, ThresholdMetric(config["threshold.metric"]))

    path = _models_dir(config) / THRESHOLD_FILE
    save_threshold(path, threshold)
    print(f"tau = {threshold.tau} ({threshold.tuned_metric} {threshold.tuned_value:.4f}), saved to {path}")


@env.setup_env
def predict(output: Annotated[Path, typer.Argument()],
            disable: Annotated[Optional[List[str]], typer.Option(help="lfr, lfi, sgsr or egc, composable with +")] = None,
            kb_dir: Optional[Path] = None,
            dataset: Optional[Path] = None,
            models_dir: Optional[Path] = None,
            oracle: bool = False):
    """
    Answer every question of the test dataset and write JSON-lines predictions to OUTPUT.

    Every --disable value is added to pipeline.disable.
    """
    disabled = _ablations(disable)
    config = _effective_config(kb__dir=kb_dir, dataset__test=dataset, models__dir=models_dir)
    if disabled:
        extra = {a.value for toggle in disabled for a in toggle}
        config = _effective_config(pipeline__disable=sorted(extra | set(config["pipeline.disable"])))
    kb = _load_kb(config)
    examples = _load_dataset(config, "dataset.test", kb)
    components = _oracle_components(config, kb, examples) if oracle else load_components(config, kb)

    predictions = run_pipeline(examples, kb, components, config.pipeline_config())
    save_predictions(output, predictions, config.as_dict())
    print(f"Wrote {len(predictions)} predictions to {output}")


@env.setup_env
def evaluate(predictions: Annotated[Path, typer.Argument()],
             kb_dir: Optional[Path] = None,
             dataset: Optional[Path] = None,
             output: Optional[Path] = None):
    """
    Score predictions against the gold dataset; prints the report and optionally saves it as JSON.
    """
    config = _effective_config(kb__dir=kb_dir, dataset__test=dataset)
    kb = _load_kb(config)
    examples = _load_dataset(config, "dataset.test", kb)
    if not predictions.exists():
        _usage_error(f"Predictions file not found: {predictions}")

    with data_errors():
        loaded, _ = load_predictions(predictions, kb)
        report = evaluate_dataset(loaded, examples)

    print(render_report(report, title=str(predictions)))
    if output:
        save_report(output, report, config.as_dict())


@env.setup_env
def ablate(output: Annotated[Optional[Path], typer.Argument()] = None,
           disable: Annotated[Optional[List[str]], typer.Option(help="lfr, lfi, sgsr or egc, composable with +")] = None,
           kb_dir: Optional[Path] = None,
           dataset: Optional[Path] = None,
           models_dir: Optional[Path] = None,
           oracle: bool = False):
    """
    Run the full pipeline and one run per --disable toggle (e.g. lfr, sgsr, lfr+sgsr) and report each.
    """
    config = _effective_config(kb__dir=kb_dir, dataset__test=dataset, models__dir=models_dir)
    kb = _load_kb(config)
    examples = _load_dataset(config, "dataset.test", kb)
    toggles = _ablations(disable)
    components = _oracle_components(config, kb, examples) if oracle else load_components(config, kb)

    reports = run_ablation(examples, kb, components, config.pipeline_config(), toggles)
    for name, report in reports.items():
        print(render_report(report, title=name))
        print()

    if output:
        with open(output, "w", encoding="utf-8") as f:
            json.dump({"config": config.as_dict(), **{k: v.to_json() for k, v in reports.items()}},
                      f, indent=4, sort_keys=True)
            f.write("\n")


def compare(old: Path, new: Path, fail_on_regression: bool = False):
    """
    List the metrics that changed between two saved evaluation reports.
    """
    with data_errors():
        changes = compare_reports(load_report(old), load_report(new))
    print(render_changes(changes))

    if fail_on_regression and any(c.regression for c in changes):
        logging.error(f"{sum(c.regression for c in changes)} metrics regressed")
        sys.exit(1)
