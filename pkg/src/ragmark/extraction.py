"""Entity and relation harvesting from the knowledge base.

A seeded sample of records is parsed into (subject, relation, object) triples
by an LLM, then reduced to the high-frequency entity and relation lists that
seed watermark generation. Canonical string forms are fixed here because the
keyed hashing downstream needs byte-stable inputs.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

from .errors import ExtractionUnderflowError, ValidationError
from .gateway import ChatClient
from .kb import KnowledgeBase
from .prompts import build_extract_prompt
from .sampling import seeded_sample

logger = logging.getLogger(__name__)

DEFAULT_ENTITY_COUNT = 100
DEFAULT_RELATION_COUNT = 20


def canonical_entity(raw: str) -> str:
    """Trim, collapse internal whitespace, title-case."""
    return re.sub(r"\s+", " ", raw.strip()).title()


def canonical_relation(raw: str) -> str:
    """Trim, collapse whitespace runs to single underscores, uppercase."""
    return re.sub(r"[\s_]+", "_", raw.strip()).upper()


@dataclass(frozen=True)
class ExtractedTriple:
    subject: str
    relation: str
    object: str
    source_record: str


@dataclass
class RankedList:
    """Items sorted by descending frequency, ties by ascending name."""

    items: list[str]
    freq: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.items)

    def to_json(self) -> list[dict]:
        return [{"name": name, "freq": self.freq[name]} for name in self.items]

    @classmethod
    def from_json(cls, rows: list[dict]) -> "RankedList":
        return cls(
            items=[row["name"] for row in rows],
            freq={row["name"]: row["freq"] for row in rows},
        )


EntityList = RankedList
RelationList = RankedList


def sample_records(kb: KnowledgeBase, d: int, seed: int) -> list[str]:
    """Pick `d` distinct record ids by seeded draw."""
    return seeded_sample(kb.ids(), d, seed)


def parse_er(
    client: ChatClient,
    texts: list[str],
    record_ids: list[str] | None = None,
    stats: dict | None = None,
) -> list[ExtractedTriple]:
    """Parse triples out of each text via the extraction prompt.

    Unparseable replies are counted in `stats["skipped"]` and skipped; they
    never abort the batch.
    """
    if not texts:
        raise ValidationError("texts must be non-empty")
    if record_ids is None:
        record_ids = [str(i) for i in range(len(texts))]
    triples: list[ExtractedTriple] = []
    skipped = 0
    for record_id, text in zip(record_ids, texts):
        system, user = build_extract_prompt(text)
        reply = client.complete(system, user)
        rows = _parse_triple_reply(reply)
        if rows is None:
            skipped += 1
            logger.warning("unparseable extraction reply for record %s", record_id)
            continue
        for row in rows:
            subject = canonical_entity(row.get("subject", ""))
            relation = canonical_relation(row.get("relation", ""))
            obj = canonical_entity(row.get("object", ""))
            if subject and relation and obj:
                triples.append(ExtractedTriple(subject, relation, obj, record_id))
    if stats is not None:
        stats["skipped"] = stats.get("skipped", 0) + skipped
    return triples


def _parse_triple_reply(reply: str) -> list[dict] | None:
    try:
        rows = json.loads(reply)
    except json.JSONDecodeError:
        return None
    if not isinstance(rows, list):
        return None
    return [row for row in rows if isinstance(row, dict)]


def reduce_by_frequency(
    triples: list[ExtractedTriple],
    e_size: int = DEFAULT_ENTITY_COUNT,
    r_size: int = DEFAULT_RELATION_COUNT,
) -> tuple[EntityList, RelationList]:
    """Keep the `e_size` most frequent entities (subjects and objects pooled)
    and the `r_size` most frequent relations."""
    entity_freq: dict[str, int] = {}
    relation_freq: dict[str, int] = {}
    for t in triples:
        entity_freq[t.subject] = entity_freq.get(t.subject, 0) + 1
        entity_freq[t.object] = entity_freq.get(t.object, 0) + 1
        relation_freq[t.relation] = relation_freq.get(t.relation, 0) + 1
    if len(entity_freq) < e_size:
        raise ExtractionUnderflowError("entities", e_size, len(entity_freq))
    if len(relation_freq) < r_size:
        raise ExtractionUnderflowError("relations", r_size, len(relation_freq))
    return _take_top(entity_freq, e_size), _take_top(relation_freq, r_size)


def _take_top(freq: dict[str, int], size: int) -> RankedList:
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:size]
    return RankedList(items=[name for name, _ in ranked], freq=dict(ranked))
