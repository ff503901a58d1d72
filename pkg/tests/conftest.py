"""Shared fixtures: deterministic pseudo-word corpora, entity/relation
fixtures, and scripted backends."""

from __future__ import annotations

import hashlib
import random

import pytest

from ragmark.extraction import RankedList
from ragmark.gateway import MockBehavior, MockChatClient
from ragmark.kb import KnowledgeBase, add_record

CONSONANTS = "bcdfglmnprstvz"
VOWELS = "aeiou"

RELATION_VOCAB = [
    "USES", "CAUSES", "TREATS", "PREVENTS", "SUPPORTS",
    "INVOLVES", "REGULATES", "INHIBITS", "PART_OF", "LOCATED_IN",
    "ASSOCIATION", "DERIVED_FROM", "PRECEDES", "TRIGGERS", "ENCODES",
    "BINDS", "MIMICS", "AMPLIFIES", "REDUCES", "CONTAINS",
]


def pseudo_word(index: int, syllables: int = 3) -> str:
    """Injective index -> pronounceable lowercase word (fixed length)."""
    out = []
    x = index
    for _ in range(syllables):
        out.append(CONSONANTS[x % len(CONSONANTS)])
        x //= len(CONSONANTS)
        out.append(VOWELS[x % len(VOWELS)])
        x //= len(VOWELS)
    return "".join(out)


def filler_sentence(rng: random.Random, words: int = 15) -> str:
    return " ".join(pseudo_word(rng.randrange(70**3)) for _ in range(words)) + "."


def make_entities(count: int = 100, salt: str = "entity") -> RankedList:
    """Entity names with hash-scattered syllables (shared prefixes/suffixes
    would blur the trigram embeddings)."""
    names: list[str] = []
    seen: set[str] = set()
    i = 0
    while len(names) < count:
        digest = hashlib.blake2b(f"{salt}-{i}".encode(), digest_size=4).digest()
        name = pseudo_word(int.from_bytes(digest, "big") % 70**4, syllables=4).title()
        if name not in seen:
            seen.add(name)
            names.append(name)
        i += 1
    return RankedList(items=names, freq={n: count - i for i, n in enumerate(names)})


def make_relations(count: int = 20) -> RankedList:
    names = RELATION_VOCAB[:count]
    return RankedList(items=names, freq={n: count - i for i, n in enumerate(names)})


def synth_corpus(
    n_records: int,
    entities: RankedList | None = None,
    seed: int = 7,
    name: str = "synth",
) -> KnowledgeBase:
    """Pseudo-word corpus. When entities are given, entity i gets one "home"
    record (index i) mentioning it twice; the rest is filler."""
    rng = random.Random(seed)
    kb = KnowledgeBase(name=name)
    homes = len(entities.items) if entities else 0
    for i in range(n_records):
        if entities and i < homes:
            entity = entities.items[i]
            text = (
                f"{filler_sentence(rng, 5)[:-1]} {entity} "
                f"{filler_sentence(rng, 4)[:-1]} {entity} {filler_sentence(rng, 4)}"
            )
        else:
            text = filler_sentence(rng)
        add_record(kb, text)
    return kb


@pytest.fixture
def small_kb() -> KnowledgeBase:
    kb = KnowledgeBase(name="small")
    for text in (
        "alpha particles scatter in gold foil.",
        "beta decay emits electrons from the nucleus.",
        "gamma rays are high energy photons.",
    ):
        add_record(kb, text)
    return kb


@pytest.fixture
def entities100() -> RankedList:
    return make_entities(100)


@pytest.fixture
def relations20() -> RankedList:
    return make_relations(20)


def ideal_mock(graph, leak_probability: float = 1.0, **kwargs) -> MockChatClient:
    """Mock whose relation knowledge covers the graph's tuples."""
    return MockChatClient(
        MockBehavior.for_tuples(graph.tuples, leak_probability=leak_probability, **kwargs)
    )
