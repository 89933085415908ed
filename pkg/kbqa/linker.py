# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

"""
Alias-lexicon entity linking: mention detection, candidate generation and
degree-based disambiguation.
"""

import logging

from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Optional

from kbqa.kb import KnowledgeBase
from kbqa.utils import normalize_phrase, tokenize, words


@dataclass(frozen=True)
class Mention:
    span: tuple
    surface: str
    key: tuple = ()


@dataclass(frozen=True)
class Link:
    mention: Mention
    entity_id: str
    score: float


@dataclass(frozen=True)
class LinkedEntities:
    links: tuple = ()

    @property
    def entity_ids(self):
        return tuple(dict.fromkeys(link.entity_id for link in self.links))

    def __len__(self):
        return len(self.links)

    def __bool__(self):
        return bool(self.links)


class Lexicon():
    """
    Maps lowercased alias phrases (entity labels and declared aliases) to entity ids.
    """
    def __init__(self, phrases):
        self.phrases = {phrase: frozenset(ids) for phrase, ids in phrases.items()}

        by_tokens = defaultdict(set)
        for phrase, ids in self.phrases.items():
            key = tuple(words(phrase))
            if key:
                by_tokens[key] |= ids
        self.by_tokens = {key: frozenset(ids) for key, ids in by_tokens.items()}
        self.max_tokens = max((len(key) for key in self.by_tokens), default=0)

    def __len__(self):
        return len(self.phrases)

    def lookup(self, phrase):
        return self.phrases.get(normalize_phrase(phrase), frozenset())


def build_lexicon(kb: KnowledgeBase) -> Lexicon:
    phrases = defaultdict(set)
    for entity in kb.entity_defs:
        for name in entity.names:
            if phrase := normalize_phrase(name):
                phrases[phrase].add(entity.id)
    return Lexicon(phrases)


def detect_mentions(question: str, lexicon: Lexicon):
    """
    Greedy longest-match-first, left-to-right scan over word tokens.
    """
    tokens = tokenize(question)
    mentions = []
    i = 0
    while i < len(tokens):
        for length in range(min(lexicon.max_tokens, len(tokens) - i), 0, -1):
            key = tuple(token for token, _, _ in tokens[i:i + length])
            if key in lexicon.by_tokens:
                start, end = tokens[i][1], tokens[i + length - 1][2]
                mentions.append(Mention((start, end), question[start:end], key))
                i += length
                break
        else:
            i += 1
    return mentions


def link_entities(question: str, kb: KnowledgeBase, lexicon: Lexicon,
                  top_k: int = 1, disambiguate: Optional[Callable] = None) -> LinkedEntities:
    """
    Link every detected mention to its best KB entities.

    Candidates missing from the KB are dropped. The default disambiguation
    score is the entity's fact degree, ties go to the smaller id.
    disambiguate(question, mention, entity_id) can replace the score.
    """
    links = []
    for mention in detect_mentions(question, lexicon):
        candidates = [e for e in lexicon.by_tokens[mention.key] if e in kb.entities]
        if disambiguate is None:
            scored = [(float(kb.degree(e)), e) for e in candidates]
        else:
            scored = [(float(disambiguate(question, mention, e)), e) for e in candidates]
        scored.sort(key=lambda item: (-item[0], item[1]))
        links.extend(Link(mention, entity_id, score) for score, entity_id in scored[:top_k])

    logging.debug(f"Linked '{question}' -> {[link.entity_id for link in links]}")
    return LinkedEntities(tuple(links))
