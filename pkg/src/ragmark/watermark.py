"""Keyed watermark graph: entity chain, relation draws, tuples, and queries.

Everything here is a pure function of the owner key and the entity/relation
lists, so the owner can regenerate the exact graph from the key alone during
a dispute. All digests are reduced as big-endian unsigned integers to keep
results identical across platforms.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field

from .errors import GenerationExhaustedError, ValidationError
from .extraction import EntityList, RelationList

SEP = b"\x1f"

DEFAULT_TUPLE_COUNT = 50
DEFAULT_RELATION_PROBABILITY = 0.05
DEFAULT_CHAIN_CAP = 100_000

# Seed of the entity chain; the zeroth entity is a null sentinel, encoded as
# the empty string, and never becomes a graph node itself.
NULL_ENTITY = ""

QUERY_TEMPLATES = {
    1: "What is the relationship between {a} and {b}?",
    2: "Please introduce the most relevant content of {a} and {b}.",
    3: "{a} and {b} have a correlation, please provide an introduction.",
}


@dataclass(frozen=True)
class OwnerKey:
    """Secret watermarking key. Only its fingerprint may appear in reports."""

    key_bytes: bytes

    def __post_init__(self):
        if len(self.key_bytes) < 16:
            raise ValidationError("owner key must be at least 16 bytes")

    @classmethod
    def from_hex(cls, hex_str: str) -> "OwnerKey":
        try:
            return cls(bytes.fromhex(hex_str.strip()))
        except ValueError as exc:
            raise ValidationError(f"invalid key hex: {exc}") from None

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.key_bytes).hexdigest()[:8]

    def __repr__(self) -> str:  # never leak key material into logs
        return f"OwnerKey(fingerprint={self.fingerprint})"


def _mac(key: OwnerKey, *parts: str) -> bytes:
    msg = SEP.join(p.encode("utf-8") for p in parts)
    return hmac.new(key.key_bytes, msg, hashlib.sha256).digest()


def next_entity_index(key: OwnerKey, current_entity: str, e_size: int) -> int:
    """Chain step: keyed digest of the current entity, reduced mod |E|."""
    if e_size < 1:
        raise ValidationError("e_size must be >= 1")
    return int.from_bytes(_mac(key, current_entity), "big") % e_size


def relation_exists(key: OwnerKey, entity_a: str, entity_b: str, p: float) -> bool:
    """Key-deterministic Bernoulli(p) draw for the ordered pair (a, b)."""
    if not 0.0 <= p <= 1.0:
        raise ValidationError("p must be in [0,1]")
    u = int.from_bytes(_mac(key, entity_a, entity_b, "exist")[:8], "big") / 2**64
    return u < p


def relation_index(key: OwnerKey, entity_a: str, entity_b: str, r_size: int) -> int:
    if r_size < 1:
        raise ValidationError("r_size must be >= 1")
    return int.from_bytes(_mac(key, entity_a, entity_b), "big") % r_size


@dataclass(frozen=True)
class WatermarkTuple:
    tuple_id: str
    entity_a: str
    relation: str
    entity_b: str
    pair_order: tuple[int, int] | None = None

    def __post_init__(self):
        if self.entity_a == self.entity_b:
            raise ValidationError("tuple entities must differ")


@dataclass
class WatermarkGraph:
    key_fingerprint: str
    p: float
    chain: list[str]
    tuples: list[WatermarkTuple] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tuples)

    def to_json(self) -> dict:
        return {
            "key_fingerprint": self.key_fingerprint,
            "p": self.p,
            "chain": self.chain,
            "tuples": [
                {"id": t.tuple_id, "a": t.entity_a, "r": t.relation, "b": t.entity_b}
                for t in self.tuples
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WatermarkGraph":
        return cls(
            key_fingerprint=obj["key_fingerprint"],
            p=obj["p"],
            chain=list(obj["chain"]),
            tuples=[
                WatermarkTuple(row["id"], row["a"], row["r"], row["b"])
                for row in obj["tuples"]
            ],
        )


def build_graph(
    key: OwnerKey,
    entities: EntityList,
    relations: RelationList,
    tuple_count: int = DEFAULT_TUPLE_COUNT,
    p: float = DEFAULT_RELATION_PROBABILITY,
    chain_cap: int = DEFAULT_CHAIN_CAP,
) -> WatermarkGraph:
    """Walk the keyed entity chain until `tuple_count` tuples exist.

    Each appended chain entity is paired against every earlier distinct chain
    entity in first-appearance order; a keyed Bernoulli(p) draw decides
    whether the ordered pair carries a relation. An index that would repeat
    the immediately preceding entity is skipped by probing the next slot.
    Duplicate (unordered pair, relation) tuples are dropped and do not count.
    """
    if tuple_count < 1:
        raise ValidationError("tuple_count must be >= 1")
    if len(entities) < 2:
        raise ValidationError("need at least 2 entities")
    e_names = entities.items
    r_names = relations.items
    chain: list[str] = []
    earlier: list[str] = []  # distinct chain entities, first-appearance order
    earlier_set: set[str] = set()
    tested: set[tuple[str, str]] = set()
    seen_tuples: set[tuple[frozenset, str]] = set()
    tuples: list[WatermarkTuple] = []
    first_pos: dict[str, int] = {}
    current = NULL_ENTITY
    steps_since_progress = 0
    steps = 0
    while len(tuples) < tuple_count:
        if steps >= chain_cap or steps_since_progress > len(e_names):
            raise GenerationExhaustedError(tuple_count, len(tuples), steps)
        steps += 1
        idx = next_entity_index(key, current, len(e_names))
        if chain and e_names[idx] == chain[-1]:
            idx = (idx + 1) % len(e_names)
        entity = e_names[idx]
        chain.append(entity)
        position = len(chain) - 1
        first_pos.setdefault(entity, position)
        progressed = False
        for other in earlier:
            if other == entity:
                continue
            pair = (other, entity)
            if pair in tested:
                continue
            tested.add(pair)
            progressed = True
            if relation_exists(key, other, entity, p):
                relation = r_names[relation_index(key, other, entity, len(r_names))]
                dedup_key = (frozenset(pair), relation)
                if dedup_key in seen_tuples:
                    continue
                seen_tuples.add(dedup_key)
                tuples.append(
                    WatermarkTuple(
                        tuple_id=f"t{len(tuples) + 1:04d}",
                        entity_a=other,
                        relation=relation,
                        entity_b=entity,
                        pair_order=(first_pos[other], position),
                    )
                )
                if len(tuples) >= tuple_count:
                    break
        if entity not in earlier_set:
            earlier_set.add(entity)
            earlier.append(entity)
        steps_since_progress = 0 if progressed else steps_since_progress + 1
        current = entity
    return WatermarkGraph(
        key_fingerprint=key.fingerprint, p=p, chain=chain, tuples=tuples
    )


def watermark_query(wm_tuple: WatermarkTuple, template: int = 1) -> str:
    try:
        pattern = QUERY_TEMPLATES[template]
    except KeyError:
        raise ValidationError(f"unknown query template {template}") from None
    return pattern.format(a=wm_tuple.entity_a, b=wm_tuple.entity_b)
