# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

import logging
import os
import sys
import yaml

from functools import wraps
from pathlib import Path

from kbqa.discriminator import PipelineConfig, PipelineMode, parse_ablations
from kbqa.scorer import ThresholdMetric, TrainConfig


DEFAULTS = {
    "kb.dir": None,
    "dataset.train": None,
    "dataset.dev": None,
    "dataset.test": None,
    "models.dir": None,
    "linker.top_k_per_mention": 1,
    "retriever.top_k": 10,
    "retriever.max_paths": 2000,
    "retriever.max_hops": 2,
    "constructor.beam": 10,
    "constructor.schema_top_k": 10,
    "constructor.max_groundings": 5000,
    "discriminator.negatives": 64,
    "train.lr": 0.1,
    "train.epochs": 30,
    "train.batch": 8,
    "threshold.tau": None,
    "threshold.metric": "em",
    "pipeline.mode": "unanswerability",
    "pipeline.disable": [],
    "jobs": 1,
    "seed": 0,
}

INPUT_PATHS = ("kb.dir", "dataset.train", "dataset.dev", "dataset.test")
OUTPUT_PATHS = ("models.dir",)

# key: (minimum, maximum), None for unbounded
INT_RANGES = {
    "linker.top_k_per_mention": (1, None),
    "retriever.top_k": (1, None),
    "retriever.max_paths": (1, None),
    "retriever.max_hops": (1, 2),
    "constructor.beam": (1, None),
    "constructor.schema_top_k": (1, None),
    "constructor.max_groundings": (1, None),
    "discriminator.negatives": (1, None),
    "train.epochs": (0, None),
    "train.batch": (1, None),
    "jobs": (1, None),
    "seed": (0, None),
}

# may both be set, only to the same value
SEED_VARIABLES = ("RETINA_SEED", "KBQA_SEED")


class ConfigError(Exception):
    def __init__(self, message, exit_code=2):
        super().__init__(message)
        self.exit_code = exit_code


def _check_int(key, value):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    low, high = INT_RANGES[key]
    if (low is not None and value < low) or (high is not None and value > high):
        raise ConfigError(f"{key}: {value} is outside [{low}, {'inf' if high is None else high}]")
    return value


def _check(key, value):
    if key in INT_RANGES:
        return _check_int(key, value)
    if key in INPUT_PATHS or key in OUTPUT_PATHS:
        return None if value is None else str(value)
    if key == "train.lr":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
            raise ConfigError(f"{key}: expected a positive number, got {value!r}")
        return float(value)
    if key == "threshold.tau":
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    try:
        if key == "threshold.metric":
            return ThresholdMetric(value).value
        if key == "pipeline.mode":
            return PipelineMode(value).value
        if key == "pipeline.disable":
            values = [value] if isinstance(value, str) else list(value or [])
            return sorted(a.value for a in parse_ablations(values))
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{key}: {e}")
    raise ConfigError(f"unknown configuration key '{key}'")


class RunConfig():
    """
    Effective run configuration: defaults merged with a config file and overrides.
    """
    def __init__(self, values=None, check_paths=True):
        values = dict(values or {})
        unknown = sorted(values.keys() - DEFAULTS.keys())
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")

        self.values = {key: _check(key, values.get(key, default)) for key, default in DEFAULTS.items()}
        if check_paths:
            self._check_paths()

    def _check_paths(self):
        for key in INPUT_PATHS:
            if self.values[key] is not None and not Path(self.values[key]).exists():
                raise ConfigError(f"{key}: path does not exist: {self.values[key]}", exit_code=1)
        for key in OUTPUT_PATHS:
            if self.values[key] is not None and not Path(self.values[key]).exists():
                logging.info(f"Creating {key} directory {self.values[key]}")
                Path(self.values[key]).mkdir(parents=True)

    def __getitem__(self, key):
        return self.values[key]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def __repr__(self):
        return f"RunConfig({self.values!r})"

    def as_dict(self):
        return {key: list(value) if isinstance(value, list) else value for key, value in self.values.items()}

    def updated(self, values):
        """
        New config with the given non-None values applied on top.
        """
        return RunConfig({**self.values, **{k: v for k, v in values.items() if v is not None}})

    def path(self, key):
        value = self.values[key]
        return None if value is None else Path(value)

    def pipeline_config(self):
        return PipelineConfig(
            mode=PipelineMode(self["pipeline.mode"]),
            disabled=parse_ablations(self["pipeline.disable"]),
            top_k_per_mention=self["linker.top_k_per_mention"],
            retriever_top_k=self["retriever.top_k"],
            max_paths=self["retriever.max_paths"],
            max_hops=self["retriever.max_hops"],
            beam=self["constructor.beam"],
            schema_top_k=self["constructor.schema_top_k"],
            max_groundings=self["constructor.max_groundings"],
            jobs=self["jobs"],
        )

    def train_config(self, negatives=None):
        return TrainConfig(
            lr=self["train.lr"],
            epochs=self["train.epochs"],
            batch=self["train.batch"],
            negatives_per_example=negatives,
            seed=self["seed"],
        )


def parse_override(text):
    """
    Parse a `key=value` override; the value is read as a YAML scalar or list.
    """
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like key=value, got '{text}'", exit_code=1)
    try:
        return key.strip(), yaml.safe_load(value)
    except yaml.YAMLError as e:
        raise ConfigError(f"override '{text}': {e}", exit_code=1)


def read_config_file(path: Path):
    if not Path(path).exists():
        raise ConfigError(f"config file not found: {path}", exit_code=1)
    with open(path) as f:
        try:
            values = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}")
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: expected a mapping of configuration keys")
    return values


# Global run configuration
__config_source = (None, ())
__config = None


def configure(config_path=None, overrides=()):
    """
    Remember where the configuration comes from; it is loaded on first use.
    """
    global __config_source
    global __config

    __config_source = (config_path, tuple(overrides))
    __config = None


def seed_from_environment():
    seeds = {}
    for name in SEED_VARIABLES:
        if name in os.environ:
            try:
                seeds[name] = int(os.environ[name])
            except ValueError:
                raise ConfigError(f"{name} must be an integer, got '{os.environ[name]}'")
    if len(set(seeds.values())) > 1:
        raise ConfigError("conflicting seeds in the environment: " + ", ".join(f"{k}={v}" for k, v in seeds.items()))
    return next(iter(seeds.values()), None)


def setup_config(config_path=None, overrides=()) -> RunConfig:
    """
    Build the effective configuration: defaults, then the config file, then
    `key=value` overrides (last wins), then the RETINA_SEED (or KBQA_SEED) environment variable.
    """
    global __config

    values = read_config_file(config_path) if config_path else {}
    for override in overrides:
        key, value = parse_override(override)
        values[key] = value
    seed = seed_from_environment()
    if seed is not None:
        values["seed"] = seed

    __config = RunConfig(values)
    return __config


def setup_env(func):
    """
    Decorator used to load the run configuration before executing command.
    """
    @wraps(func)
    def inner(*args, **kwargs):
        if not __config:
            try:
                setup_config(*__config_source)
            except ConfigError as e:
                logging.error(f"Invalid configuration: {e}")
                sys.exit(e.exit_code)
        return func(*args, **kwargs)
    return inner


def _config_not_found_err():
    logging.error(
        "Run configuration not loaded.\n"
        "Consider calling kbqa.env.setup_config() or decorate your current function with kbqa.env.setup_env"
    )
    sys.exit(1)


def get_config() -> RunConfig:
    if not __config:
        _config_not_found_err()
    return __config


def set_config(config: RunConfig):
    global __config
    __config = config
