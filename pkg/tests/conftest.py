# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

import pytest

from pathlib import Path

from kbqa.dataset import load_dataset
from kbqa.kb import Fact, load_kb
from kbqa.linker import Link, LinkedEntities, Mention, build_lexicon
from kbqa.synthetic import generate_questions, random_kb


ROOT = Path(__file__).resolve().parent.parent
TOY_DIR = ROOT / "demo" / "toy"
TOY_KB_DIR = TOY_DIR / "kb"

MANNING_WORKS_AT_STANFORD = Fact("c_manning", "works_at", "stanford")
QUESTION = "which university does c. manning work at"
GOLD = "(AND university (JOIN (R works_at) c_manning))"


def linked(*entity_ids):
    return LinkedEntities(tuple(Link(Mention((0, 0), e), e, 1.0) for e in entity_ids))


@pytest.fixture
def toy_kb():
    return load_kb(TOY_KB_DIR)


@pytest.fixture
def toy_examples(toy_kb):
    return load_dataset(TOY_DIR / "dataset.jsonl", toy_kb)


@pytest.fixture
def toy_lexicon(toy_kb):
    return build_lexicon(toy_kb)


@pytest.fixture(scope="session")
def synthetic_kb():
    return random_kb(seed=5, n_entities=30)


@pytest.fixture(scope="session")
def synthetic_examples(synthetic_kb):
    return generate_questions(synthetic_kb, n=40, seed=5)


@pytest.fixture(scope="session")
def large_kb():
    return random_kb(seed=11, n_entities=80, density=0.5)


@pytest.fixture(scope="session")
def large_examples(large_kb):
    return generate_questions(large_kb, n=150, seed=11)
