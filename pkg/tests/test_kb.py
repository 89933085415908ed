# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

import pytest

from kbqa.kb import (
    EntityDef, Fact, KBIntegrityError, KBParseError, KnowledgeBase, Literal, LiteralKind, RelationDef, TypeDef,
    canonical_number, load_kb, read_kb, save_kb, validate_kb,
)
from tests.conftest import MANNING_WORKS_AT_STANFORD, TOY_KB_DIR


def _copy_toy(tmp_path):
    target = tmp_path / "kb"
    target.mkdir()
    for path in TOY_KB_DIR.iterdir():
        (target / path.name).write_text(path.read_text())
    return target


def test_toy_kb_counts(toy_kb):
    assert (len(toy_kb.types), len(toy_kb.relations), len(toy_kb.entities), len(toy_kb.facts)) == (3, 2, 3, 2)
    assert MANNING_WORKS_AT_STANFORD in toy_kb.facts


def test_toy_kb_is_valid(toy_kb):
    report = validate_kb(toy_kb)
    assert report.ok
    assert str(report) == "0 violations"


def test_indexes(toy_kb):
    assert toy_kb.objects("c_manning", "works_at") == ("stanford",)
    assert toy_kb.subjects("located_in", "palo_alto") == ("stanford",)
    assert toy_kb.instances("university") == {"stanford"}
    assert toy_kb.degree("stanford") == 2
    assert toy_kb.label("works_at") == "work at"
    assert toy_kb.label("unknown") == "unknown"


def test_dangling_fact_subject_is_reported(tmp_path):
    kb_dir = _copy_toy(tmp_path)
    with open(kb_dir / "facts.tsv", "a") as f:
        f.write("nobody\tworks_at\tstanford\n")

    report = validate_kb(read_kb(kb_dir))
    assert [v.rule for v in report.violations] == ["fact-subject"]
    with pytest.raises(KBIntegrityError, match="nobody"):
        load_kb(kb_dir)


def test_domain_violation_is_reported(tmp_path):
    kb_dir = _copy_toy(tmp_path)
    with open(kb_dir / "facts.tsv", "a") as f:
        f.write("palo_alto\tworks_at\tstanford\n")

    rules = [v.rule for v in validate_kb(read_kb(kb_dir)).violations]
    assert rules == ["fact-domain"]


def test_parse_error_cites_file_and_line(tmp_path):
    kb_dir = _copy_toy(tmp_path)
    (kb_dir / "types.tsv").write_text("# id\tlabel\nresearcher\n")

    with pytest.raises(KBParseError) as e:
        read_kb(kb_dir)
    assert e.value.line == 2
    assert "types.tsv:2" in str(e.value)


def test_missing_file(tmp_path):
    kb_dir = _copy_toy(tmp_path)
    (kb_dir / "facts.tsv").unlink()
    with pytest.raises(FileNotFoundError, match="facts.tsv"):
        read_kb(kb_dir)


def test_identifier_hygiene():
    kb = KnowledgeBase(
        [TypeDef("AND", "and"), TypeDef("city", "city")],
        [RelationDef("city", "clash", "city", "city")],
        [EntityDef("1984", "year", frozenset({"city"}))],
    )
    rules = sorted(v.rule for v in validate_kb(kb).violations)
    assert rules == ["identifier", "identifier", "uniqueness"]


def test_literal_facts_are_checked():
    kb = KnowledgeBase(
        [TypeDef("city", "city")],
        [RelationDef("population", "population", "city", LiteralKind.NUMBER)],
        [EntityDef("paris", "Paris", frozenset({"city"}))],
        [Fact("paris", "population", "paris")],
    )
    assert [v.rule for v in validate_kb(kb).violations] == ["fact-object"]


def test_duplicate_fact():
    kb = KnowledgeBase(
        [TypeDef("city", "city")],
        [RelationDef("twin", "twin", "city", "city")],
        [EntityDef("a", "A", frozenset({"city"})), EntityDef("b", "B", frozenset({"city"}))],
        [Fact("a", "twin", "b"), Fact("a", "twin", "b")],
    )
    assert [v.rule for v in validate_kb(kb).violations] == ["fact-duplicate"]


@pytest.mark.parametrize("text, expected", [
    ("1900", "1900"),
    ("1900.0", "1900"),
    ("-0", "0"),
    ("0.50", "0.5"),
    ("1e3", "1000"),
])
def test_canonical_number(text, expected):
    assert canonical_number(text) == expected


def test_literal_codec():
    assert Literal.decode("number:12.0") == Literal.number(12)
    assert Literal.decode("string:a:b").value == "a:b"
    with pytest.raises(ValueError):
        Literal.decode("date:2020")


def test_save_and_load(tmp_path, synthetic_kb):
    save_kb(synthetic_kb, tmp_path / "kb")
    assert load_kb(tmp_path / "kb") == synthetic_kb
