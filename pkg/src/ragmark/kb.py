"""Knowledge base store: text records, content hashing, and JSONL persistence.

Persistence format is one JSON object per line so multi-million-record bases
can be streamed:

    {"id": ..., "text": ..., "is_watermark": ..., "source_tuple": ..., "content_hash": <hex>}

Record ids are zero-padded sequential strings assigned by the store, which
gives retrieval a deterministic tie-break. Concurrency contract: many readers
or one writer; hand the store between threads only after construction or
between mutations.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .errors import ConflictError, NotFoundError, StoreParseError, ValidationError

_ID_WIDTH = 7


def text_hash(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


@dataclass
class TextRecord:
    """One document chunk. `content_hash` always tracks `text`."""

    id: str
    text: str
    is_watermark: bool = False
    source_tuple: str | None = None
    content_hash: bytes = b""

    def __post_init__(self):
        if not self.content_hash:
            self.content_hash = text_hash(self.text)
        # is_watermark is derived, never stored inconsistently
        self.is_watermark = self.source_tuple is not None


@dataclass(eq=False)  # identity semantics; cached retrieval keys off the object
class KnowledgeBase:
    name: str = "kb"
    records: list[TextRecord] = field(default_factory=list)

    def __post_init__(self):
        self._by_id: dict[str, TextRecord] = {r.id: r for r in self.records}
        self._next_seq = len(self.records) + 1
        self.version = 0

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TextRecord]:
        return iter(self.records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._by_id

    def get(self, record_id: str) -> TextRecord:
        try:
            return self._by_id[record_id]
        except KeyError:
            raise NotFoundError(f"no record {record_id!r}") from None

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def clone(self, name: str | None = None) -> "KnowledgeBase":
        kb = KnowledgeBase(
            name=name or self.name,
            records=[
                TextRecord(r.id, r.text, source_tuple=r.source_tuple)
                for r in self.records
            ],
        )
        kb._next_seq = self._next_seq
        return kb

    def watermark_text_count(self) -> int:
        return sum(1 for r in self.records if r.is_watermark)


def add_record(
    kb: KnowledgeBase,
    text: str,
    provenance: str | None = None,
    record_id: str | None = None,
) -> str:
    """Append a record and return its id.

    Ids are assigned sequentially unless an explicit `record_id` is given.
    """
    if not text:
        raise ValidationError("record text must be non-empty")
    if record_id is None:
        record_id = f"r{kb._next_seq:0{_ID_WIDTH}d}"
        kb._next_seq += 1
    elif record_id in kb._by_id:
        raise ConflictError(f"record id {record_id!r} already exists")
    record = TextRecord(record_id, text, source_tuple=provenance)
    kb.records.append(record)
    kb._by_id[record_id] = record
    kb.version += 1
    return record_id


def mutate_text(kb: KnowledgeBase, record_id: str, new_text: str) -> None:
    """Replace a record's text in place; the content hash is recomputed."""
    if not new_text:
        raise ValidationError("record text must be non-empty")
    record = kb.get(record_id)
    record.text = new_text
    record.content_hash = text_hash(new_text)
    kb.version += 1


def stamp_provenance(kb: KnowledgeBase, record_id: str, tuple_id: str) -> None:
    """Mark a record as a watermark carrier.

    A record already carrying a stamp keeps its original one; a host shared by
    several tuples stays attributed to the first (the verification path takes
    the full tuple-to-record map from the injection report instead).
    """
    record = kb.get(record_id)
    if record.source_tuple is None:
        record.source_tuple = tuple_id
        record.is_watermark = True
        kb.version += 1


def remove_record(kb: KnowledgeBase, record_id: str) -> None:
    """Drop a record. Used to roll back tentative direct insertions."""
    record = kb.get(record_id)
    kb.records.remove(record)
    del kb._by_id[record_id]
    kb.version += 1


def save(kb: KnowledgeBase, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in kb.records:
            fh.write(
                json.dumps(
                    {
                        "id": r.id,
                        "text": r.text,
                        "is_watermark": r.is_watermark,
                        "source_tuple": r.source_tuple,
                        "content_hash": r.content_hash.hex(),
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def load(path: str | Path, name: str | None = None) -> KnowledgeBase:
    records: list[TextRecord] = []
    seen: set[str] = set()
    max_seq = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                record = TextRecord(
                    id=obj["id"],
                    text=obj["text"],
                    source_tuple=obj.get("source_tuple"),
                    content_hash=bytes.fromhex(obj["content_hash"]),
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise StoreParseError(str(exc), line=lineno) from None
            if record.content_hash != text_hash(record.text):
                raise StoreParseError(
                    f"content_hash mismatch for {record.id!r}", line=lineno
                )
            if record.id in seen:
                raise StoreParseError(f"duplicate record id {record.id!r}", line=lineno)
            seen.add(record.id)
            records.append(record)
            if record.id.startswith("r") and record.id[1:].isdigit():
                max_seq = max(max_seq, int(record.id[1:]))
    kb = KnowledgeBase(name=name or Path(path).stem, records=records)
    kb._next_seq = max_seq + 1
    return kb
