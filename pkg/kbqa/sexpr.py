# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

"""
S-expression logical forms: AST, parser, printer, canonical form and sketches.

Grammar (tokens are whitespace-delimited, identifiers are KB ids):

    expr   := class | entity | literal
            | "(" "AND" expr expr ")"
            | "(" "JOIN" relref expr ")"
            | "(" "COUNT" expr ")"
            | "(" ("ARGMIN" | "ARGMAX") expr relation ")"
            | "(" ("lt" | "le" | "gt" | "ge") relation number ")"
    relref := relation | "(" "R" relation ")"

Sketches use the same grammar with the slot words TYPE, ENT, REL and NUM in
place of types, entities, relations and number literals.
"""

import json
import logging
import re

from collections import Counter
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path
from typing import Optional, Union

from kbqa.kb import Literal, LiteralKind, RESERVED_WORDS, is_number
from kbqa.utils import read_jsonl, write_jsonl


class SExprError(ValueError):
    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class SExprSyntaxError(SExprError):
    pass


class SExprArityError(SExprError):
    pass


class SExprUnknownFunction(SExprError):
    pass


class InventoryError(ValueError):
    pass


@dataclass(frozen=True)
class Class:
    type_id: str


@dataclass(frozen=True)
class Entity:
    entity_id: str


@dataclass(frozen=True)
class TypeSlot:
    pass


@dataclass(frozen=True)
class EntitySlot:
    pass


@dataclass(frozen=True)
class RelationSlot:
    pass


@dataclass(frozen=True)
class LiteralSlot:
    kind: LiteralKind = LiteralKind.NUMBER


TYPE_SLOT = TypeSlot()
ENTITY_SLOT = EntitySlot()
RELATION_SLOT = RelationSlot()
NUMBER_SLOT = LiteralSlot()

Relation = Union[str, RelationSlot]


@dataclass(frozen=True)
class Forward:
    relation: Relation


@dataclass(frozen=True)
class Inverse:
    relation: Relation


RelationRef = Union[Forward, Inverse]


@dataclass(frozen=True)
class Join:
    relation: RelationRef
    child: "SExpr"


@dataclass(frozen=True)
class And:
    left: "SExpr"
    right: "SExpr"


@dataclass(frozen=True)
class Count:
    child: "SExpr"


@dataclass(frozen=True)
class ArgMin:
    child: "SExpr"
    relation: Relation


@dataclass(frozen=True)
class ArgMax:
    child: "SExpr"
    relation: Relation


class CmpOp(StrEnum):
    LT = "lt"
    LE = "le"
    GT = "gt"
    GE = "ge"


@dataclass(frozen=True)
class Cmp:
    op: CmpOp
    relation: Relation
    value: Union[Literal, LiteralSlot]


SExpr = Union[Class, Entity, Literal, Join, And, Count, ArgMin, ArgMax, Cmp,
              TypeSlot, EntitySlot, LiteralSlot]

_SLOT_WORDS = {"TYPE": TYPE_SLOT, "ENT": ENTITY_SLOT, "NUM": NUMBER_SLOT}

_TOKEN = re.compile(r'\s*(?:(?P<open>\()|(?P<close>\))|(?P<string>"(?:[^"\\]|\\.)*")|(?P<atom>[^\s()"]+))')


# Printing

def _print_relation(relation):
    return "REL" if isinstance(relation, RelationSlot) else relation


def _print_relref(ref, relation_text=_print_relation):
    if isinstance(ref, Inverse):
        return f"(R {relation_text(ref.relation)})"
    return relation_text(ref.relation)


def _print(expr, leaf, relation_text):
    match expr:
        case Join(relation, child):
            return f"(JOIN {_print_relref(relation, relation_text)} {_print(child, leaf, relation_text)})"
        case And(left, right):
            return f"(AND {_print(left, leaf, relation_text)} {_print(right, leaf, relation_text)})"
        case Count(child):
            return f"(COUNT {_print(child, leaf, relation_text)})"
        case ArgMin(child, relation):
            return f"(ARGMIN {_print(child, leaf, relation_text)} {relation_text(relation)})"
        case ArgMax(child, relation):
            return f"(ARGMAX {_print(child, leaf, relation_text)} {relation_text(relation)})"
        case Cmp(op, relation, value):
            return f"({op} {relation_text(relation)} {leaf(value)})"
        case _:
            return leaf(expr)


def _print_leaf(expr):
    match expr:
        case Class(type_id):
            return type_id
        case Entity(entity_id):
            return entity_id
        case Literal(kind=LiteralKind.NUMBER, value=value):
            return value
        case Literal(value=value):
            return json.dumps(value, ensure_ascii=False)
        case TypeSlot():
            return "TYPE"
        case EntitySlot():
            return "ENT"
        case LiteralSlot():
            return "NUM"
    raise TypeError(f"Not an s-expression node: {expr!r}")


def print_sexpr(expr) -> str:
    return _print(expr, _print_leaf, _print_relation)


def surface_text(expr, kb) -> str:
    """
    Render a logical form with KB ids replaced by their labels (scorer input).
    """
    def leaf(node):
        match node:
            case Class(type_id):
                return kb.label(type_id)
            case Entity(entity_id):
                return kb.label(entity_id)
        return _print_leaf(node)

    def relation_text(relation):
        return _print_relation(relation) if isinstance(relation, RelationSlot) else kb.label(relation)

    return _print(expr, leaf, relation_text)


# Parsing

@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    position: int


def _tokenize(text):
    tokens = []
    position = 0
    while position < len(text):
        match = _TOKEN.match(text, position)
        if not match or match.end() == position:
            if text[position:].strip():
                raise SExprSyntaxError(f"unexpected character '{text[position:].lstrip()[0]}'", position)
            break
        kind = match.lastgroup
        tokens.append(_Token(kind, match.group(kind), match.start(kind)))
        position = match.end()
    return tokens


def _nest(tokens):
    """
    Turn the token stream into nested lists; every list starts with its '(' token.
    """
    stack = [[]]
    for token in tokens:
        if token.kind == "open":
            nested = [token]
            stack[-1].append(nested)
            stack.append(nested)
        elif token.kind == "close":
            if len(stack) == 1:
                raise SExprSyntaxError("unbalanced ')'", token.position)
            stack.pop()
        else:
            stack[-1].append(token)
    if len(stack) > 1:
        raise SExprSyntaxError("unbalanced '('", stack[-1][0].position)
    top = stack[0]
    if not top:
        raise SExprSyntaxError("empty expression", 0)
    if len(top) > 1:
        second = top[1]
        raise SExprSyntaxError("unexpected trailing input", _position(second))
    return top[0]


def _position(item):
    return item[0].position if isinstance(item, list) else item.position


class _Builder():
    def __init__(self, kb):
        self.kb = kb

    def symbol(self, name, in_join):
        if self.kb is not None:
            if name in self.kb.types:
                return Class(name)
            if name in self.kb.entities:
                return Entity(name)
        return Entity(name) if in_join else Class(name)

    def expr(self, item, in_join=False):
        if isinstance(item, list):
            return self.call(item)
        if item.kind == "string":
            return Literal(LiteralKind.STRING, json.loads(item.text))
        text = item.text
        if text in _SLOT_WORDS:
            return _SLOT_WORDS[text]
        if text == "REL" or text in RESERVED_WORDS:
            raise SExprSyntaxError(f"'{text}' cannot be used as an expression", item.position)
        if is_number(text):
            return Literal(LiteralKind.NUMBER, text)
        return self.symbol(text, in_join)

    def relation(self, item):
        if isinstance(item, list) or item.kind != "atom":
            raise SExprSyntaxError("expected a relation", _position(item))
        if item.text == "REL":
            return RELATION_SLOT
        if item.text in RESERVED_WORDS or is_number(item.text):
            raise SExprSyntaxError(f"'{item.text}' is not a relation", item.position)
        return item.text

    def relref(self, item):
        if not isinstance(item, list):
            return Forward(self.relation(item))
        head = item[1] if len(item) > 1 else None
        if head is None or isinstance(head, list) or head.text != "R":
            raise SExprSyntaxError("expected a relation or (R relation)", item[0].position)
        if len(item) != 3:
            raise SExprArityError(f"R expects 1 argument, got {len(item) - 2}", item[0].position)
        return Inverse(self.relation(item[2]))

    def literal(self, item):
        if isinstance(item, list) or item.kind != "atom":
            raise SExprSyntaxError("expected a number", _position(item))
        if item.text == "NUM":
            return NUMBER_SLOT
        if not is_number(item.text):
            raise SExprSyntaxError(f"expected a number, got '{item.text}'", item.position)
        return Literal(LiteralKind.NUMBER, item.text)

    def call(self, item):
        open_token, args = item[0], item[1:]
        if not args:
            raise SExprSyntaxError("empty application '()'", open_token.position)
        head, args = args[0], args[1:]
        if isinstance(head, list) or head.kind != "atom":
            raise SExprSyntaxError("expected a function name after '('", _position(head))

        def arity(expected):
            if len(args) != expected:
                raise SExprArityError(f"{head.text} expects {expected} argument(s), got {len(args)}", head.position)

        match head.text:
            case "AND":
                arity(2)
                return And(self.expr(args[0]), self.expr(args[1]))
            case "JOIN":
                arity(2)
                return Join(self.relref(args[0]), self.expr(args[1], in_join=True))
            case "COUNT":
                arity(1)
                return Count(self.expr(args[0]))
            case "ARGMIN":
                arity(2)
                return ArgMin(self.expr(args[0]), self.relation(args[1]))
            case "ARGMAX":
                arity(2)
                return ArgMax(self.expr(args[0]), self.relation(args[1]))
            case "lt" | "le" | "gt" | "ge":
                arity(2)
                return Cmp(CmpOp(head.text), self.relation(args[0]), self.literal(args[1]))
            case "R":
                raise SExprSyntaxError("R is only valid as a JOIN relation", head.position)
        raise SExprUnknownFunction(f"unknown function '{head.text}'", head.position)


def parse_sexpr(text: str, kb=None) -> SExpr:
    """
    Parse a logical form.

    Bare identifiers resolve against the KB when one is given. Without a KB
    an identifier in a JOIN argument position is an Entity and a Class
    everywhere else.
    """
    return _Builder(kb).expr(_nest(_tokenize(text)))


# Tree utilities

def walk(expr):
    """
    Yield the nodes of an expression in printing order (pre-order, left to right).
    """
    yield expr
    match expr:
        case Join(_, child) | Count(child) | ArgMin(child, _) | ArgMax(child, _):
            yield from walk(child)
        case And(left, right):
            yield from walk(left)
            yield from walk(right)
        case Cmp(_, _, value):
            yield value


def relation_refs(expr):
    """
    Yield the relation fields of an expression in printing order.
    """
    for node in walk(expr):
        match node:
            case Join(relation, _):
                yield node.relation.relation
            case ArgMin(_, relation) | ArgMax(_, relation) | Cmp(_, relation, _):
                yield relation


def relations_of(expr):
    return {r for r in relation_refs(expr) if isinstance(r, str)}


def types_of(expr):
    return {node.type_id for node in walk(expr) if isinstance(node, Class)}


def entities_of(expr):
    return {node.entity_id for node in walk(expr) if isinstance(node, Entity)}


def count_relations(expr):
    return sum(1 for _ in relation_refs(expr))


def _flatten_and(expr):
    if isinstance(expr, And):
        return [*_flatten_and(expr.left), *_flatten_and(expr.right)]
    return [expr]


def _nest_and(operands):
    expr = operands[-1]
    for operand in reversed(operands[:-1]):
        expr = And(operand, expr)
    return expr


def canonicalize(expr: SExpr) -> SExpr:
    """
    Flatten nested ANDs, sort their operands by printed form and re-nest them to the right.
    """
    match expr:
        case And():
            operands = sorted((canonicalize(o) for o in _flatten_and(expr)), key=print_sexpr)
            return _nest_and(operands)
        case Join(relation, child):
            return Join(relation, canonicalize(child))
        case Count(child):
            return Count(canonicalize(child))
        case ArgMin(child, relation):
            return ArgMin(canonicalize(child), relation)
        case ArgMax(child, relation):
            return ArgMax(canonicalize(child), relation)
    return expr


def canonical_key(expr) -> str:
    return print_sexpr(canonicalize(expr))


# Sketches

@dataclass(frozen=True)
class Sketch:
    tree: SExpr
    n_types: int
    n_relations: int
    n_entities: int

    @classmethod
    def of(cls, tree):
        nodes = list(walk(tree))
        return cls(
            tree,
            sum(1 for n in nodes if isinstance(n, TypeSlot)),
            sum(1 for r in relation_refs(tree) if isinstance(r, RelationSlot)),
            sum(1 for n in nodes if isinstance(n, EntitySlot)),
        )

    @property
    def counts(self):
        return (self.n_types, self.n_relations, self.n_entities)

    @property
    def n_literal_slots(self):
        return sum(1 for n in walk(self.tree) if isinstance(n, LiteralSlot))

    def __str__(self):
        return print_sketch(self)


def _abstract(expr, literals):
    match expr:
        case Class():
            return TYPE_SLOT
        case Entity():
            return ENTITY_SLOT
        case Literal(kind=LiteralKind.NUMBER) if literals:
            return NUMBER_SLOT
        case Join(relation, child):
            return Join(type(relation)(RELATION_SLOT), _abstract(child, literals))
        case And(left, right):
            return And(_abstract(left, literals), _abstract(right, literals))
        case Count(child):
            return Count(_abstract(child, literals))
        case ArgMin(child, _):
            return ArgMin(_abstract(child, literals), RELATION_SLOT)
        case ArgMax(child, _):
            return ArgMax(_abstract(child, literals), RELATION_SLOT)
        case Cmp(op, _, value):
            return Cmp(op, RELATION_SLOT, _abstract(value, literals))
    return expr


def extract_sketch(expr: SExpr) -> Sketch:
    """
    Replace every type, entity and relation with a slot; literals are kept verbatim.
    """
    return Sketch.of(_abstract(expr, literals=False))


def abstract_literals(sketch: Sketch) -> Sketch:
    return Sketch.of(_abstract(sketch.tree, literals=True))


def inventory_key(expr) -> str:
    """
    Printed literal-abstracted sketch of a logical form or sketch tree.
    """
    return print_sexpr(_abstract(expr, literals=True))


def fill_literals(sketch: Sketch, numbers) -> Optional[Sketch]:
    """
    Fill number slots left to right with the given numbers; None when there are too few.
    """
    numbers = iter(numbers)

    def fill(node):
        match node:
            case LiteralSlot():
                return Literal.number(next(numbers))
            case Join(relation, child):
                return Join(relation, fill(child))
            case And(left, right):
                left = fill(left)
                return And(left, fill(right))
            case Count(child):
                return Count(fill(child))
            case ArgMin(child, relation):
                return ArgMin(fill(child), relation)
            case ArgMax(child, relation):
                return ArgMax(fill(child), relation)
            case Cmp(op, relation, value):
                return Cmp(op, relation, fill(value))
        return node

    if sketch.n_literal_slots == 0:
        return sketch
    try:
        return Sketch.of(fill(sketch.tree))
    except StopIteration:
        return None


def parse_sketch(text: str) -> Sketch:
    tree = parse_sexpr(text)
    for node in walk(tree):
        if isinstance(node, (Class, Entity)):
            raise SExprSyntaxError(f"sketch contains the identifier '{print_sexpr(node)}'")
    for relation in relation_refs(tree):
        if not isinstance(relation, RelationSlot):
            raise SExprSyntaxError(f"sketch contains the relation '{relation}'")
    return Sketch.of(tree)


def print_sketch(sketch: Sketch) -> str:
    return print_sexpr(sketch.tree)


@dataclass(frozen=True)
class InventoryEntry:
    key: str
    sketch: Sketch
    frequency: int


class SketchInventory():
    """
    Training-derived sketch vocabulary ordered by descending frequency, then key.
    """
    def __init__(self, entries):
        self.entries = tuple(entries)
        self._index = {entry.key: i for i, entry in enumerate(self.entries)}
        if len(self._index) != len(self.entries):
            raise InventoryError("duplicate inventory keys")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, index):
        return self.entries[index]

    def __contains__(self, key):
        return key in self._index

    def index(self, key):
        return self._index[key]

    @property
    def keys(self):
        return [entry.key for entry in self.entries]


def build_sketch_inventory(train_lfs) -> SketchInventory:
    if not train_lfs:
        raise InventoryError("cannot build a sketch inventory from an empty list")

    counts = Counter()
    representatives = {}
    for lf in train_lfs:
        sketch = abstract_literals(extract_sketch(lf))
        key = print_sexpr(sketch.tree)
        counts[key] += 1
        representatives.setdefault(key, sketch)

    ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    logging.info(f"Built sketch inventory with {len(ordered)} entries from {len(train_lfs)} logical forms")
    return SketchInventory(InventoryEntry(key, representatives[key], n) for key, n in ordered)


def save_inventory(inventory: SketchInventory, path: Path):
    write_jsonl(path, ({"key": e.key, "frequency": e.frequency} for e in inventory))


def load_inventory(path: Path) -> SketchInventory:
    entries = []
    for lineno, obj in read_jsonl(path):
        try:
            sketch = parse_sketch(obj["key"])
            frequency = int(obj["frequency"])
        except (KeyError, ValueError) as e:
            raise InventoryError(f"{path}:{lineno}: {e}")
        if frequency < 1:
            raise InventoryError(f"{path}:{lineno}: frequency must be >= 1")
        entries.append(InventoryEntry(print_sexpr(sketch.tree), sketch, frequency))
    return SketchInventory(entries)
