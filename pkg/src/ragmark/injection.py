"""Watermark text generation and placement.

For each tuple the interaction loop drives three LLM roles: a generator
proposes a sentence, the shadow system answers the watermark question against
the tentatively updated base, and a discriminator checks the relation
surfaced. Placement is tentative-then-commit: a failed epoch restores the
base byte-for-byte before the next attempt.

Two placement modes exist. `concat` appends the sentence to the record most
similar to the watermark question, entangling it with real content; `direct`
adds the sentence as a standalone record (no coherence check there, since
there is no host text to cohere with).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from . import kb as kbmod
from .errors import GatewayError, GenerationError, ValidationError
from .gateway import ChatClient, answer_with_context
from .kb import KnowledgeBase
from .prompts import build_coherence_prompt, build_disc_prompt, build_gen_prompt
from .retrieval import Retriever
from .watermark import WatermarkGraph, WatermarkTuple, watermark_query

logger = logging.getLogger(__name__)

DEFAULT_TEXTS_PER_TUPLE = 5
DEFAULT_MAX_EPOCHS = 10

MODES = ("concat", "direct")


@dataclass
class InjectionConfig:
    gen_client: ChatClient
    shadow_client: ChatClient
    disc_client: ChatClient
    n_wm: int = DEFAULT_TEXTS_PER_TUPLE
    max_epochs: int = DEFAULT_MAX_EPOCHS
    mode: str = "concat"
    k: int = 1
    query_template: int = 1

    def __post_init__(self):
        if not 1 <= self.n_wm <= 10:
            raise ValidationError("n_wm must be in 1..10")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")
        if self.mode not in MODES:
            raise ValidationError(f"unknown injection mode {self.mode!r}")


@dataclass
class Placement:
    mode: str
    record_id: str


@dataclass
class WatermarkText:
    tuple_id: str
    text: str
    variant_index: int
    placement: Placement
    epochs_used: int


@dataclass
class InjectionReport:
    entries: list[dict] = field(default_factory=list)
    indeterminate_replies: int = 0

    def add_success(self, wt: WatermarkText) -> None:
        self.entries.append(
            {
                "tuple_id": wt.tuple_id,
                "variant": wt.variant_index,
                "placement": {
                    "mode": wt.placement.mode,
                    "record_id": wt.placement.record_id,
                },
                "epochs_used": wt.epochs_used,
                "status": "ok",
            }
        )

    def add_failure(self, tuple_id: str, variant: int, epochs: int) -> None:
        self.entries.append(
            {
                "tuple_id": tuple_id,
                "variant": variant,
                "placement": None,
                "epochs_used": epochs,
                "status": "failed",
            }
        )

    @property
    def successes(self) -> int:
        return sum(1 for e in self.entries if e["status"] == "ok")

    @property
    def failures(self) -> int:
        return sum(1 for e in self.entries if e["status"] == "failed")

    def placements_by_tuple(self) -> dict[str, set[str]]:
        """tuple id -> ids of every record carrying one of its texts."""
        out: dict[str, set[str]] = {}
        for e in self.entries:
            if e["status"] == "ok":
                out.setdefault(e["tuple_id"], set()).add(
                    e["placement"]["record_id"]
                )
        return out

    def to_json(self, kb_size: int | None = None) -> dict:
        obj = {
            "entries": self.entries,
            "successes": self.successes,
            "failures": self.failures,
            "indeterminate_replies": self.indeterminate_replies,
        }
        if kb_size:
            # both views of base size: raw records and watermark texts placed
            obj["record_count"] = kb_size
            obj["watermark_text_count"] = self.successes
            obj["watermark_share"] = watermark_share(self.successes, kb_size)
        return obj


def watermark_share(text_count: int, record_count: int) -> float:
    """Watermark texts as a fraction of the record count."""
    if record_count <= 0:
        raise ValidationError("record_count must be positive")
    return text_count / record_count


def generate_wt(
    gen_client: ChatClient,
    wm_tuple: WatermarkTuple,
    feedback: str | None = None,
    prior_text: str = "",
    host_text: str = "",
) -> str:
    """One generator call; the reply must be a JSON list holding a single
    {"watermark_text": ...} object."""
    system, user = build_gen_prompt(
        relation=wm_tuple.relation,
        entity_a=wm_tuple.entity_a,
        entity_b=wm_tuple.entity_b,
        feedback=feedback or "",
        prior_text=prior_text,
        host_text=host_text,
    )
    reply = gen_client.complete(system, user)
    try:
        rows = json.loads(reply)
        text = rows[0]["watermark_text"]
    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise GenerationError(f"bad generator reply {reply!r}: {exc}") from None
    if not isinstance(text, str) or not text.strip():
        raise GenerationError(f"empty watermark text in reply {reply!r}")
    return text.strip()


def shadow_answer(
    shadow_client: ChatClient,
    retriever: Retriever,
    kb_wm: KnowledgeBase,
    wq: str,
    k: int = 1,
) -> tuple[str, list[str]]:
    """Retrieve top-k then answer; retrieved ids feed the retrieval-hit ratio."""
    hits = retriever.top_k(kb_wm, wq, k)
    retrieved_ids = [record_id for record_id, _ in hits]
    contexts = [kb_wm.get(record_id).text for record_id in retrieved_ids]
    answer = answer_with_context(shadow_client, wq, contexts)
    return answer, retrieved_ids


def discriminate(
    disc_client: ChatClient,
    answer: str,
    wm_tuple: WatermarkTuple,
    counters: dict | None = None,
) -> bool:
    """True iff the discriminator confirms the tuple's relation in `answer`.

    Replies other than yes/no are protocol violations; they count as no (a
    non-answer is not evidence of the relation) and are tallied.
    """
    system, user = build_disc_prompt(
        rag_doc=answer,
        relation=wm_tuple.relation,
        entity_a=wm_tuple.entity_a,
        entity_b=wm_tuple.entity_b,
    )
    reply = disc_client.complete(system, user).strip().lower()
    if reply == "yes":
        return True
    if reply != "no":
        logger.warning("discriminator protocol violation: %r", reply)
        if counters is not None:
            counters["indeterminate"] = counters.get("indeterminate", 0) + 1
    return False


def _coherent(disc_client: ChatClient, combined_text: str) -> bool:
    system, user = build_coherence_prompt(combined_text)
    return disc_client.complete(system, user).strip().lower() == "yes"


def interaction_loop(
    config: InjectionConfig,
    retriever: Retriever,
    kb: KnowledgeBase,
    wm_tuple: WatermarkTuple,
    report: InjectionReport | None = None,
) -> list[WatermarkText]:
    """Generate and place up to n_wm text variants for one tuple.

    Mutates `kb` in place (callers wanting isolation pass a clone). Every
    failed epoch rolls its tentative placement back before retrying.
    """
    if len(kb) == 0:
        raise ValidationError("knowledge base must be non-empty")
    report = report if report is not None else InjectionReport()
    counters: dict = {}
    wq = watermark_query(wm_tuple, config.query_template)
    placed: list[WatermarkText] = []
    accepted_texts: list[str] = []
    for variant in range(1, config.n_wm + 1):
        host_id = None
        if config.mode == "concat":
            host_id = retriever.top_k(kb, wq, 1)[0][0]
        feedback = f"variant={variant}; produce a sentence distinct from prior variants."
        prior_text = ""
        success = None
        for epoch in range(1, config.max_epochs + 1):
            try:
                wt_text = generate_wt(
                    config.gen_client,
                    wm_tuple,
                    feedback=feedback,
                    prior_text=prior_text,
                    host_text=kb.get(host_id).text if host_id else "",
                )
                if wt_text in accepted_texts:
                    # one retry for an exact duplicate of an earlier variant,
                    # then take whatever comes back
                    wt_text = generate_wt(
                        config.gen_client,
                        wm_tuple,
                        feedback=feedback + " duplicate of an earlier variant; reword.",
                        prior_text=wt_text,
                        host_text=kb.get(host_id).text if host_id else "",
                    )
            except GenerationError as exc:
                logger.warning("generation failed (epoch %d): %s", epoch, exc)
                feedback = f"variant={variant}; epoch={epoch}: reply was not valid JSON."
                continue

            # tentative placement
            if config.mode == "concat":
                original = kb.get(host_id).text
                kbmod.mutate_text(kb, host_id, original + " " + wt_text)
                placed_id = host_id
            else:
                placed_id = kbmod.add_record(kb, wt_text, provenance=wm_tuple.tuple_id)

            try:
                answer, _ = shadow_answer(
                    config.shadow_client, retriever, kb, wq, config.k
                )
                ok = discriminate(config.disc_client, answer, wm_tuple, counters)
                reason = "relation not confirmed by the discriminator"
                if ok and config.mode == "concat":
                    ok = _coherent(config.disc_client, kb.get(host_id).text)
                    if not ok:
                        reason = "combined text judged incoherent"
            except Exception:
                # never leave a tentative placement behind
                if config.mode == "concat":
                    kbmod.mutate_text(kb, host_id, original)
                else:
                    kbmod.remove_record(kb, placed_id)
                raise

            if ok:
                if config.mode == "concat":
                    kbmod.stamp_provenance(kb, host_id, wm_tuple.tuple_id)
                success = WatermarkText(
                    tuple_id=wm_tuple.tuple_id,
                    text=wt_text,
                    variant_index=variant,
                    placement=Placement(config.mode, placed_id),
                    epochs_used=epoch,
                )
                break

            # rollback to the pre-epoch state
            if config.mode == "concat":
                kbmod.mutate_text(kb, host_id, original)
            else:
                kbmod.remove_record(kb, placed_id)
            prior_text = wt_text
            feedback = f"variant={variant}; epoch={epoch}: {reason}; rephrase."

        if success is not None:
            placed.append(success)
            accepted_texts.append(success.text)
            report.add_success(success)
        else:
            report.add_failure(wm_tuple.tuple_id, variant, config.max_epochs)
    report.indeterminate_replies += counters.get("indeterminate", 0)
    return placed


def inject_all(
    config: InjectionConfig,
    retriever: Retriever,
    kb: KnowledgeBase,
    graph: WatermarkGraph,
) -> tuple[KnowledgeBase, InjectionReport]:
    """Clone the base and place texts for every tuple in the graph.

    Records that never host a watermark stay byte-identical to the input.
    Tuple failures are recorded in the report, never fatal.
    """
    if len(graph) == 0:
        raise ValidationError("watermark graph has no tuples")
    kb_wm = kb.clone(name=f"{kb.name}-wm")
    report = InjectionReport()
    for wm_tuple in graph.tuples:
        try:
            interaction_loop(config, retriever, kb_wm, wm_tuple, report)
        except GatewayError as exc:
            logger.error("gateway failure on tuple %s: %s", wm_tuple.tuple_id, exc)
            report.add_failure(wm_tuple.tuple_id, 0, 0)
    return kb_wm, report
