# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

import logging
import re

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import StrEnum
from fractions import Fraction
from pathlib import Path
from typing import List, Optional, Union


RESERVED_WORDS = frozenset({
    "AND", "JOIN", "R", "COUNT", "ARGMIN", "ARGMAX", "lt", "le", "gt", "ge",
    "TYPE", "REL", "ENT", "NUM",
})

KB_FILES = ("types.tsv", "relations.tsv", "entities.tsv", "facts.tsv")

_IDENTIFIER = re.compile(r'^[^\s()"]+$')


class KBParseError(Exception):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class KBIntegrityError(Exception):
    def __init__(self, violation):
        super().__init__(f"Integrity error: {violation}")
        self.violation = violation


class LiteralKind(StrEnum):
    NUMBER = "number"
    STRING = "string"


def canonical_number(text):
    """
    Return the minimal decimal spelling of a number (no exponent, no trailing zeros).
    """
    try:
        value = Decimal(str(text).strip())
    except InvalidOperation:
        raise ValueError(f"Not a decimal number: '{text}'")
    if not value.is_finite():
        raise ValueError(f"Not a finite number: '{text}'")
    text = format(value.normalize(), "f")
    return "0" if text == "-0" else text


def is_number(text):
    try:
        canonical_number(text)
    except ValueError:
        return False
    return True


@dataclass(frozen=True, order=True)
class Literal:
    kind: LiteralKind
    value: str

    def __post_init__(self):
        object.__setattr__(self, "kind", LiteralKind(self.kind))
        if self.kind == LiteralKind.NUMBER:
            object.__setattr__(self, "value", canonical_number(self.value))

    @classmethod
    def number(cls, value):
        return cls(LiteralKind.NUMBER, str(value))

    @classmethod
    def decode(cls, text):
        """
        Decode the `number:<decimal>` / `string:<text>` spelling used in TSV and plan files.
        """
        kind, sep, value = text.partition(":")
        if not sep or kind not in (LiteralKind.NUMBER, LiteralKind.STRING):
            raise ValueError(f"Not a literal: '{text}'")
        return cls(LiteralKind(kind), value)

    def encode(self):
        return f"{self.kind}:{self.value}"

    @property
    def fraction(self):
        return Fraction(self.value)


@dataclass(frozen=True)
class TypeDef:
    id: str
    label: str


@dataclass(frozen=True)
class RelationDef:
    id: str
    label: str
    domain: str
    # Type id, or LiteralKind for literal-valued relations
    range: Union[str, LiteralKind]

    @property
    def literal_range(self) -> Optional[LiteralKind]:
        return self.range if isinstance(self.range, LiteralKind) else None


@dataclass(frozen=True)
class EntityDef:
    id: str
    label: str
    types: frozenset
    aliases: tuple = ()

    @property
    def names(self):
        return (self.label, *self.aliases)


@dataclass(frozen=True)
class Fact:
    subject: str
    relation: str
    object: Union[str, Literal]

    def encode_object(self):
        return self.object.encode() if isinstance(self.object, Literal) else self.object

    def sort_key(self):
        return (self.subject, self.relation, self.encode_object())

    def __str__(self):
        return f"({self.subject}, {self.relation}, {self.encode_object()})"


class KnowledgeBase():
    """
    Immutable store of the schema (types, relations) and data (entities, facts).

    Definitions are kept in the order they were given and the id maps are
    built from them, so a duplicated id is only visible to validate_kb().
    """
    def __init__(self, types=(), relations=(), entities=(), facts=()):
        self.type_defs = tuple(types)
        self.relation_defs = tuple(relations)
        self.entity_defs = tuple(entities)
        self.fact_list = tuple(facts)

        self.types = {t.id: t for t in self.type_defs}
        self.relations = {r.id: r for r in self.relation_defs}
        self.entities = {e.id: e for e in self.entity_defs}
        self.facts = frozenset(self.fact_list)

        by_subject = defaultdict(list)
        by_object = defaultdict(list)
        by_relation = defaultdict(list)
        objects = defaultdict(list)
        subjects = defaultdict(list)
        for fact in dict.fromkeys(self.fact_list):
            by_subject[fact.subject].append(fact)
            by_object[fact.object].append(fact)
            by_relation[fact.relation].append(fact)
            objects[(fact.subject, fact.relation)].append(fact.object)
            subjects[(fact.relation, fact.object)].append(fact.subject)

        self.by_subject = {k: tuple(v) for k, v in by_subject.items()}
        self.by_object = {k: tuple(v) for k, v in by_object.items()}
        self.by_relation = {k: tuple(v) for k, v in by_relation.items()}
        self._objects = {k: tuple(v) for k, v in objects.items()}
        self._subjects = {k: tuple(v) for k, v in subjects.items()}

        instances = defaultdict(set)
        for entity in self.entity_defs:
            for type_id in entity.types:
                instances[type_id].add(entity.id)
        self._instances = {k: frozenset(v) for k, v in instances.items()}

    def __repr__(self):
        return (f"<KnowledgeBase |T|={len(self.types)} |R|={len(self.relations)} "
                f"|E|={len(self.entities)} |F|={len(self.facts)}>")

    def __eq__(self, other):
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return (self.type_defs == other.type_defs and
                self.relation_defs == other.relation_defs and
                self.entity_defs == other.entity_defs and
                self.fact_list == other.fact_list)

    __hash__ = None

    def instances(self, type_id):
        return self._instances.get(type_id, frozenset())

    def objects(self, subject, relation):
        return self._objects.get((subject, relation), ())

    def subjects(self, relation, obj):
        return self._subjects.get((relation, obj), ())

    def facts_of_relation(self, relation):
        return self.by_relation.get(relation, ())

    def degree(self, entity_id):
        return len(self.by_subject.get(entity_id, ())) + len(self.by_object.get(entity_id, ()))

    def label(self, identifier):
        for table in (self.types, self.relations, self.entities):
            if identifier in table:
                return table[identifier].label
        return identifier


@dataclass(frozen=True)
class Violation:
    rule: str
    target: str
    message: str

    def __str__(self):
        return f"[{self.rule}] {self.target}: {self.message}"


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def add(self, rule, target, message):
        self.violations.append(Violation(rule, str(target), message))

    def __str__(self):
        lines = [f"{len(self.violations)} violations"]
        lines.extend(f" - {v}" for v in self.violations)
        return "\n".join(lines)


def _identifier_problem(identifier):
    if not _IDENTIFIER.match(identifier):
        return "contains whitespace, parentheses or quotes"
    if identifier in RESERVED_WORDS:
        return "is a reserved s-expression word"
    if is_number(identifier):
        return "looks like a number"
    return None


def _check_definitions(report, kind, definitions):
    seen = set()
    for definition in definitions:
        if not definition.id:
            report.add("id-empty", kind, f"{kind} with empty id")
            continue
        if definition.id in seen:
            report.add("uniqueness", definition.id, f"duplicate {kind} id")
            continue
        seen.add(definition.id)
        if not definition.label:
            report.add("label-empty", definition.id, f"{kind} has an empty label")
        if problem := _identifier_problem(definition.id):
            report.add("identifier", definition.id, f"{kind} id {problem}")


def validate_kb(kb: KnowledgeBase) -> ValidationReport:
    """
    Check every integrity invariant of the KB and report all violations.
    """
    report = ValidationReport()

    _check_definitions(report, "type", kb.type_defs)
    _check_definitions(report, "relation", kb.relation_defs)
    _check_definitions(report, "entity", kb.entity_defs)

    namespaces = Counter([*kb.types, *kb.relations, *kb.entities])
    for identifier, count in sorted(namespaces.items()):
        if count > 1:
            report.add("uniqueness", identifier, "id is used by more than one of types, relations, entities")

    for relation in kb.relations.values():
        if relation.domain not in kb.types:
            report.add("relation-domain", relation.id, f"unknown domain type '{relation.domain}'")
        if relation.literal_range is None and relation.range not in kb.types:
            report.add("relation-range", relation.id, f"unknown range type '{relation.range}'")

    for entity in kb.entities.values():
        if not entity.types:
            report.add("entity-types", entity.id, "entity has no types")
        for type_id in sorted(entity.types):
            if type_id not in kb.types:
                report.add("entity-type", entity.id, f"unknown type '{type_id}'")

    seen = set()
    for fact in kb.fact_list:
        if fact in seen:
            report.add("fact-duplicate", fact, "duplicate fact")
            continue
        seen.add(fact)

        subject = kb.entities.get(fact.subject)
        relation = kb.relations.get(fact.relation)
        if subject is None:
            report.add("fact-subject", fact, f"dangling subject '{fact.subject}'")
        if relation is None:
            report.add("fact-relation", fact, f"unknown relation '{fact.relation}'")
        if subject is None or relation is None:
            continue

        if relation.domain not in subject.types:
            report.add("fact-domain", fact, f"subject lacks domain type '{relation.domain}'")

        if relation.literal_range is not None:
            if not isinstance(fact.object, Literal) or fact.object.kind != relation.literal_range:
                report.add("fact-object", fact, f"object must be a {relation.literal_range} literal")
        elif isinstance(fact.object, Literal):
            report.add("fact-object", fact, f"object must be an entity of type '{relation.range}'")
        elif fact.object not in kb.entities:
            report.add("fact-object", fact, f"dangling object '{fact.object}'")
        elif relation.range not in kb.entities[fact.object].types:
            report.add("fact-range", fact, f"object lacks range type '{relation.range}'")

    return report


def _read_tsv(path, n_fields, n_optional=0):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if not n_fields - n_optional <= len(fields) <= n_fields:
                raise KBParseError(path, lineno, f"expected {n_fields} tab-separated fields, got {len(fields)}")
            fields = [f.strip() for f in fields]
            fields += [""] * (n_fields - len(fields))
            yield lineno, fields


def _parse_range(text):
    if text.endswith(":") and text[:-1] in (LiteralKind.NUMBER, LiteralKind.STRING):
        return LiteralKind(text[:-1])
    return text


def parse_object(text):
    if text.startswith(("number:", "string:")):
        return Literal.decode(text)
    return text


def read_kb(kb_dir: Path) -> KnowledgeBase:
    """
    Parse the four TSV files of a KB directory without validating them.

    Raises FileNotFoundError for a missing file and KBParseError for malformed lines.
    """
    kb_dir = Path(kb_dir)
    for name in KB_FILES:
        if not (kb_dir / name).exists():
            raise FileNotFoundError(f"KB file not found: {kb_dir / name}")

    types = [TypeDef(id, label) for _, (id, label) in _read_tsv(kb_dir / "types.tsv", 2)]

    relations = []
    for _, (id, label, domain, range_) in _read_tsv(kb_dir / "relations.tsv", 4):
        relations.append(RelationDef(id, label, domain, _parse_range(range_)))

    entities = []
    for _, (id, label, type_ids, aliases) in _read_tsv(kb_dir / "entities.tsv", 4, n_optional=1):
        entities.append(EntityDef(
            id,
            label,
            frozenset(t.strip() for t in type_ids.split(",") if t.strip()),
            tuple(a.strip() for a in aliases.split("|") if a.strip()),
        ))

    facts = []
    path = kb_dir / "facts.tsv"
    for lineno, (subject, relation, obj) in _read_tsv(path, 3):
        try:
            facts.append(Fact(subject, relation, parse_object(obj)))
        except ValueError as e:
            raise KBParseError(path, lineno, str(e))

    return KnowledgeBase(types, relations, entities, facts)


def load_kb(kb_dir: Path) -> KnowledgeBase:
    """
    Load and validate a KB directory.

    Raises KBIntegrityError naming the first violated invariant.
    """
    kb = read_kb(kb_dir)
    report = validate_kb(kb)
    if not report.ok:
        raise KBIntegrityError(report.violations[0])

    logging.info(f"Loaded {kb!r} from {kb_dir}")
    return kb


def save_kb(kb: KnowledgeBase, kb_dir: Path):
    kb_dir = Path(kb_dir)
    kb_dir.mkdir(parents=True, exist_ok=True)

    with open(kb_dir / "types.tsv", "w", encoding="utf-8") as f:
        f.write("# id\tlabel\n")
        for t in kb.type_defs:
            f.write(f"{t.id}\t{t.label}\n")

    with open(kb_dir / "relations.tsv", "w", encoding="utf-8") as f:
        f.write("# id\tlabel\tdomain\trange\n")
        for r in kb.relation_defs:
            range_ = f"{r.range}:" if r.literal_range else r.range
            f.write(f"{r.id}\t{r.label}\t{r.domain}\t{range_}\n")

    with open(kb_dir / "entities.tsv", "w", encoding="utf-8") as f:
        f.write("# id\tlabel\ttypes\taliases\n")
        for e in kb.entity_defs:
            f.write(f"{e.id}\t{e.label}\t{','.join(sorted(e.types))}\t{'|'.join(e.aliases)}\n")

    with open(kb_dir / "facts.tsv", "w", encoding="utf-8") as f:
        f.write("# subject\trelation\tobject\n")
        for fact in kb.fact_list:
            f.write(f"{fact.subject}\t{fact.relation}\t{fact.encode_object()}\n")

    return kb_dir
