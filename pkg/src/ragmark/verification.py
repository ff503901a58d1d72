"""Black-box infringement detection and fidelity metrics.

The detector samples watermark tuples, asks the suspect system the matching
questions, counts how many answers surface the keyed relation, and runs a
one-tailed binomial test against the null that an innocent system emits the
relation with probability p0. Detection additionally requires the count to
clear the minimum-success floor (more than 2 hits), which is what makes three
confirmations at n=30, p0=1/100 the decision boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

from .errors import GatewayError, IndeterminateReplyError, ValidationError
from .gateway import ChatClient, answer_with_context, judge_same_meaning
from .injection import discriminate
from .kb import KnowledgeBase
from .retrieval import Retriever
from .sampling import seeded_sample
from .watermark import WatermarkGraph, watermark_query

logger = logging.getLogger(__name__)

DEFAULT_QUERY_COUNT = 30
DEFAULT_ALPHA = 0.05
DEFAULT_NULL_PROBABILITY = 0.01  # 1/n_r with at least 100 relations in the base

# Minimum hits before infringement is claimed, on top of the p-value cut:
# a detection needs more than this many confirmed relations.
MIN_SUCCESS_FLOOR = 2


def binomial_upper_pvalue(n: int, c: int, p0: float) -> float:
    """P(X >= c) for X ~ Binomial(n, p0), one-tailed.

    Terms are evaluated in log space and summed exactly with fsum; c = 0
    returns 1.0 exactly. Nonincreasing in c for fixed n, p0.
    """
    if not 0.0 < p0 < 1.0:
        raise ValidationError(f"p0 must lie strictly inside (0,1), got {p0}")
    if not 0 <= c <= n:
        raise ValidationError(f"c must be in 0..{n}, got {c}")
    if c == 0:
        return 1.0
    log_p = math.log(p0)
    log_q = math.log1p(-p0)
    terms = [
        math.exp(
            math.lgamma(n + 1)
            - math.lgamma(k + 1)
            - math.lgamma(n - k + 1)
            + k * log_p
            + (n - k) * log_q
        )
        for k in range(c, n + 1)
    ]
    return min(1.0, math.fsum(terms))


class SuspectRag(Protocol):
    """Black-box question interface to a possibly stolen system.

    Retrieved ids are only available for in-process suspects; remote ones
    answer without exposing their retrieval.
    """

    def ask(self, question: str) -> tuple[str, list[str] | None]: ...


class InProcessSuspect:
    """A locally simulated deployment: retriever over a base plus an LLM.

    `candidate_width` widens the retrieval pool before `record_filter` (an
    adversarial post-filter such as duplicate removal) and the final top-k
    cut, mirroring how a defender-side filter would sit in the pipeline.
    `context_transform` rewrites the retrieved texts before they reach the
    LLM (paraphrasing and content-removal attacks live there).
    """

    def __init__(
        self,
        kb: KnowledgeBase,
        retriever: Retriever,
        client: ChatClient,
        k: int = 1,
        candidate_width: int | None = None,
        record_filter: Callable | None = None,
        context_transform: Callable[[list[str]], list[str]] | None = None,
    ):
        self.kb = kb
        self.retriever = retriever
        self.client = client
        self.k = k
        self.candidate_width = candidate_width
        self.record_filter = record_filter
        self.context_transform = context_transform

    def ask(self, question: str) -> tuple[str, list[str] | None]:
        width = self.candidate_width or self.k
        hits = self.retriever.top_k(self.kb, question, max(width, self.k))
        records = [self.kb.get(record_id) for record_id, _ in hits]
        if self.record_filter is not None:
            records = self.record_filter(records)
        records = records[: self.k]
        contexts = [r.text for r in records]
        if self.context_transform is not None:
            contexts = self.context_transform(contexts)
        answer = answer_with_context(self.client, question, contexts)
        return answer, [r.id for r in records]


class RemoteSuspect:
    """A remote deployment reachable only through its chat endpoint."""

    def __init__(self, client: ChatClient):
        self.client = client

    def ask(self, question: str) -> tuple[str, list[str] | None]:
        return self.client.complete("", question), None


@dataclass
class VerificationReport:
    n: int
    c_wm: int
    p0: float
    p_value: float
    verdict: bool
    per_query: list[dict] = field(default_factory=list)
    wirr: float | None = None
    excluded: int = 0
    key_fingerprint: str = ""

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "c_wm": self.c_wm,
            "p0": self.p0,
            "p_value": self.p_value,
            "verdict": self.verdict,
            "wirr": self.wirr,
            "excluded": self.excluded,
            "key_fingerprint": self.key_fingerprint,
            "per_query": self.per_query,
        }


def run_verification(
    graph: WatermarkGraph,
    suspect: SuspectRag,
    disc_client: ChatClient,
    n: int = DEFAULT_QUERY_COUNT,
    p0: float = DEFAULT_NULL_PROBABILITY,
    alpha: float = DEFAULT_ALPHA,
    template: int = 1,
    seed: int = 0,
    wm_records: Mapping[str, set] | None = None,
) -> VerificationReport:
    """Sample n tuples, query the suspect, and test the hit count.

    Transport failures exclude the query (shrinking n) rather than counting
    as misses: a dead connection says nothing about the suspect. The
    retrieval-hit ratio is filled only when the suspect exposes retrieved ids
    and a tuple-to-record placement map is supplied.
    """
    if len(graph) < n:
        raise ValidationError(f"graph has {len(graph)} tuples, need {n}")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie strictly inside (0,1)")
    sample = seeded_sample(graph.tuples, n, seed)
    per_query: list[dict] = []
    hits = 0
    excluded = 0
    retrieval_flags: list[bool] = []
    for wm_tuple in sample:
        question = watermark_query(wm_tuple, template)
        try:
            answer, retrieved_ids = suspect.ask(question)
        except GatewayError as exc:
            logger.warning("query for %s excluded: %s", wm_tuple.tuple_id, exc)
            excluded += 1
            per_query.append(
                {
                    "tuple_id": wm_tuple.tuple_id,
                    "question": question,
                    "answer": None,
                    "hit": None,
                    "retrieved_watermark": None,
                    "error": str(exc),
                }
            )
            continue
        hit = discriminate(disc_client, answer, wm_tuple)
        hits += hit
        retrieved_watermark = None
        if retrieved_ids is not None and wm_records is not None:
            own_records = wm_records.get(wm_tuple.tuple_id, set())
            retrieved_watermark = any(rid in own_records for rid in retrieved_ids)
            retrieval_flags.append(retrieved_watermark)
        per_query.append(
            {
                "tuple_id": wm_tuple.tuple_id,
                "question": question,
                "answer": answer,
                "hit": hit,
                "retrieved_watermark": retrieved_watermark,
            }
        )
    effective_n = n - excluded
    p_value = binomial_upper_pvalue(effective_n, hits, p0) if effective_n else 1.0
    verdict = p_value < alpha and hits > MIN_SUCCESS_FLOOR
    wirr = (
        sum(retrieval_flags) / len(retrieval_flags) if retrieval_flags else None
    )
    return VerificationReport(
        n=effective_n,
        c_wm=hits,
        p0=p0,
        p_value=p_value,
        verdict=verdict,
        per_query=per_query,
        wirr=wirr,
        excluded=excluded,
        key_fingerprint=graph.key_fingerprint,
    )


def cdpa(
    clean_answers: Sequence[str],
    wm_answers: Sequence[str],
    judge_client: ChatClient,
    stats: dict | None = None,
) -> float:
    """Fraction of paired answers judged to convey the same meaning.

    Indeterminate judgements drop out of the denominator; their count lands
    in `stats["indeterminate"]`.
    """
    if not clean_answers or len(clean_answers) != len(wm_answers):
        raise ValidationError("answer lists must be non-empty and equal length")
    same = 0
    judged = 0
    indeterminate = 0
    for a, b in zip(clean_answers, wm_answers):
        try:
            same += judge_same_meaning(judge_client, a, b)
            judged += 1
        except IndeterminateReplyError:
            indeterminate += 1
            logger.warning("indeterminate judgement excluded from alignment")
    if stats is not None:
        stats["indeterminate"] = stats.get("indeterminate", 0) + indeterminate
        stats["judged"] = stats.get("judged", 0) + judged
    if judged == 0:
        raise ValidationError("every judgement was indeterminate")
    return same / judged


def cira(
    clean_retrievals: Sequence[Sequence[str]],
    wm_retrievals: Sequence[Sequence[str]],
) -> float:
    """Fraction of questions retrieving the same id set from both bases."""
    if len(clean_retrievals) != len(wm_retrievals):
        raise ValidationError("retrieval lists must be equal length")
    if not clean_retrievals:
        raise ValidationError("retrieval lists must be non-empty")
    aligned = sum(
        set(a) == set(b) for a, b in zip(clean_retrievals, wm_retrievals)
    )
    return aligned / len(clean_retrievals)
