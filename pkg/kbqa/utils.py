# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

import json
import re

from pathlib import Path


_WORD = re.compile(r"[^\W_]+")
_NUMBER = re.compile(r"(?<![\w.])-?\d+(?:\.\d+)?(?![\w])")


def tokenize(text):
    """
    Split text on non-alphanumeric characters.

    Returns list of (lowercased token, start offset, end offset) tuples.
    """
    return [(m.group().lower(), m.start(), m.end()) for m in _WORD.finditer(text)]


def words(text):
    return [token for token, _, _ in tokenize(text)]


def stem(token):
    # Crude plural folding, enough to match "works" with "work".
    if len(token) > 4 and token.endswith("ies"):
        return token[:-3] + "y"
    if len(token) > 3 and token.endswith("s") and not token.endswith("ss"):
        return token[:-1]
    return token


def extract_numbers(text):
    return _NUMBER.findall(text)


def normalize_phrase(text):
    return " ".join(text.lower().split())


def partition(items, predicate):
    """
    Use predicate to split items in two lists.

    Returns tuple:
        - items accepted by the predicate
        - items that are not accepted
    """
    accepted, other = [], []
    for item in items:
        if predicate(item):
            accepted.append(item)
        else:
            other.append(item)
    return accepted, other


class JSONLinesError(ValueError):
    def __init__(self, path, line, reason):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line
        self.reason = reason


def read_jsonl(path: Path):
    """
    Yield (line number, decoded object) for every non-empty line of a JSON-lines file.

    Raises JSONLinesError with the line number when a line is not a JSON object.
    """
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise JSONLinesError(path, lineno, f"invalid JSON ({e.msg})") from e
            if not isinstance(obj, dict):
                raise JSONLinesError(path, lineno, "expected a JSON object")
            yield lineno, obj


def write_jsonl(path: Path, objects):
    with open(path, "w", encoding="utf-8") as f:
        for obj in objects:
            f.write(json.dumps(obj, sort_keys=True, ensure_ascii=False))
            f.write("\n")
