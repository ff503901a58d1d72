"""Adversarial transformations and watermark-detection attempts.

Two families: response-path attacks rewrite retrieved texts on their way to
the suspect's LLM (paraphrasing, unrelated-content removal, duplicate
filtering); base-level attacks produce a modified copy of the stored base
(knowledge insertion, graph distillation). No attack ever mutates its input
base.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .errors import GatewayError, ValidationError
from .extraction import ExtractedTriple
from .gateway import (
    ChatClient,
    PARAPHRASE_MAX_TOKENS,
    PARAPHRASE_TEMPERATURE,
)
from .kb import KnowledgeBase, TextRecord, add_record
from .prompts import build_paraphrase_prompt, build_removal_prompt

logger = logging.getLogger(__name__)


@dataclass
class AttackOutcome:
    attack: str
    params: dict = field(default_factory=dict)
    kb_after: KnowledgeBase | None = None
    inserted: int = 0
    removed: int = 0
    notes: str = ""


def paraphrase_responses(client: ChatClient, texts: Sequence[str]) -> list[str]:
    """Paraphrase each retrieved text before it reaches the suspect LLM.

    A failed paraphrase passes the original through with a warning; the
    adversary would rather serve a raw text than no text.
    """
    if not texts:
        raise ValidationError("texts must be non-empty")
    out = []
    for text in texts:
        system, user = build_paraphrase_prompt(text)
        try:
            out.append(
                client.complete(
                    system,
                    user,
                    temperature=PARAPHRASE_TEMPERATURE,
                    max_tokens=PARAPHRASE_MAX_TOKENS,
                )
            )
        except GatewayError as exc:
            logger.warning("paraphrase failed, passing text through: %s", exc)
            out.append(text)
    return out


def remove_unrelated(client: ChatClient, text: str) -> str:
    """Ask the model to strip sentences unrelated to the rest of the text."""
    if not text:
        raise ValidationError("text must be non-empty")
    system, user = build_removal_prompt(text)
    return client.complete(system, user)


def paraphrase_transform(client: ChatClient) -> Callable[[list[str]], list[str]]:
    """Context transform for a suspect under the paraphrasing attack."""
    return lambda texts: paraphrase_responses(client, texts)


def removal_transform(client: ChatClient) -> Callable[[list[str]], list[str]]:
    """Context transform for a suspect under unrelated-content removal."""
    return lambda texts: [remove_unrelated(client, t) for t in texts]


def insert_knowledge(kb: KnowledgeBase, count: int, seed: int) -> KnowledgeBase:
    """Add `count` noise records, each splicing two existing texts together.

    Both parts are drawn (independently, uniformly) from the records present
    before the attack, so runs with the same seed share a common prefix of
    insertions: the 50-record attack is literally the first 50 insertions of
    the 500-record attack.
    """
    if count < 0:
        raise ValidationError("count must be >= 0")
    if len(kb) < 2:
        raise ValidationError("need at least 2 records to combine")
    attacked = kb.clone()
    originals = [r.text for r in kb]
    rng = random.Random(seed)
    for _ in range(count):
        first = originals[rng.randrange(len(originals))]
        second = originals[rng.randrange(len(originals))]
        add_record(attacked, first + " " + second)
    return attacked


def expand_k(config, k: int):
    """Copy a verification config with the retrieval width raised to `k`."""
    if not 1 <= k <= 50:
        raise ValidationError("k must be in 1..50")
    import copy

    widened = copy.copy(config)
    widened.k = k
    return widened


def duplicate_filter(retrieved: Sequence[TextRecord]) -> list[TextRecord]:
    """Drop records whose content hash repeats an earlier one, keeping order.

    Idempotent; distinct watermark variants all survive because their hashes
    differ.
    """
    seen: set[bytes] = set()
    out: list[TextRecord] = []
    for record in retrieved:
        if record.content_hash not in seen:
            seen.add(record.content_hash)
            out.append(record)
    return out


class UnigramPerplexityScorer:
    """Character-level unigram cross-entropy, trained on a clean sample.

    Stands in for an LLM perplexity at desk scale: fluent in-distribution
    text scores low, out-of-distribution character soup scores high.
    """

    def __init__(self):
        self._log_prob: dict[str, float] = {}
        self._log_unseen = 0.0

    def fit(self, texts: Sequence[str]) -> "UnigramPerplexityScorer":
        counts: dict[str, int] = {}
        total = 0
        for text in texts:
            for ch in text:
                counts[ch] = counts.get(ch, 0) + 1
                total += 1
        vocab = len(counts) + 1  # Laplace smoothing with one unseen slot
        denom = total + vocab
        self._log_prob = {
            ch: math.log((c + 1) / denom) for ch, c in counts.items()
        }
        self._log_unseen = math.log(1 / denom)
        return self

    def __call__(self, text: str) -> float:
        if not text:
            return math.exp(-self._log_unseen)
        nll = -sum(
            self._log_prob.get(ch, self._log_unseen) for ch in text
        ) / len(text)
        return math.exp(nll)


def _kmeans_1d(values: list[float], max_iter: int = 100) -> tuple[list[int], list[float]]:
    """Two-means clustering with deterministic percentile initialization."""
    ordered = sorted(values)
    lo = ordered[int(0.25 * (len(ordered) - 1))]
    hi = ordered[int(0.75 * (len(ordered) - 1))]
    centers = [lo, hi]
    assign: list[int] | None = None
    for _iteration in range(max_iter):
        new_assign = [
            0 if abs(v - centers[0]) <= abs(v - centers[1]) else 1 for v in values
        ]
        if new_assign == assign:
            break
        assign = new_assign
        for cluster in (0, 1):
            members = [v for v, a in zip(values, assign) if a == cluster]
            if members:
                centers[cluster] = sum(members) / len(members)
    return assign, centers


@dataclass
class PerplexityDetection:
    flagged_ids: list[str]
    f1: float
    notes: str = ""


def perplexity_detect(
    scorer: Callable[[str], float],
    clean_sample: Sequence[TextRecord],
    wm_sample: Sequence[TextRecord],
) -> PerplexityDetection:
    """Cluster perplexities into two groups and flag the smaller cluster.

    F1 is scored against the records' watermark ground truth. Degenerate
    all-equal scores flag nothing.
    """
    records = list(clean_sample) + list(wm_sample)
    scores = [float(scorer(r.text)) for r in records]
    for s in scores:
        if not math.isfinite(s) or s <= 0:
            raise ValidationError("scorer must return finite positive values")
    if len(set(scores)) == 1:
        return PerplexityDetection([], 0.0, notes="degenerate: all scores equal")
    assign, centers = _kmeans_1d(scores)
    sizes = [assign.count(0), assign.count(1)]
    if sizes[0] == sizes[1]:
        flagged_cluster = max((0, 1), key=lambda c: centers[c])
    else:
        flagged_cluster = min((0, 1), key=lambda c: sizes[c])
    flagged = [r.id for r, a in zip(records, assign) if a == flagged_cluster]
    truth = {r.id for r in wm_sample}
    true_pos = sum(1 for rid in flagged if rid in truth)
    precision = true_pos / len(flagged) if flagged else 0.0
    recall = true_pos / len(truth) if truth else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return PerplexityDetection(flagged, f1)


def kg_distill(
    kb: KnowledgeBase,
    triples: Sequence[ExtractedTriple],
    rate: float,
) -> KnowledgeBase:
    """Prune the base to records touching the highest-degree entities.

    Entity degree counts incident triples; the top ceil(rate * distinct)
    entities survive, and a record is retained iff its extracted entities
    intersect that set. Records with no extracted entities are outside the
    attacker's graph view and are always retained.
    """
    if not 0.0 < rate <= 1.0:
        raise ValidationError("rate must lie in (0, 1]")
    degree: dict[str, int] = {}
    record_entities: dict[str, set[str]] = {}
    for t in triples:
        degree[t.subject] = degree.get(t.subject, 0) + 1
        degree[t.object] = degree.get(t.object, 0) + 1
        record_entities.setdefault(t.source_record, set()).update(
            (t.subject, t.object)
        )
    keep_n = math.ceil(rate * len(degree))
    ranked = sorted(degree.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = {name for name, _ in ranked[:keep_n]}
    distilled = KnowledgeBase(name=f"{kb.name}-distilled")
    for r in kb:
        entities = record_entities.get(r.id)
        if entities is None or entities & kept:
            add_record(distilled, r.text, provenance=r.source_tuple, record_id=r.id)
    distilled._next_seq = kb._next_seq
    return distilled
