"""Single boundary for every LLM role: HTTP backend plus deterministic mocks.

The HTTP backend speaks the OpenAI-compatible chat-completions protocol. The
mock backend is a pure function of (behavior, seed, prompt text): it detects
the role from the rendered prompt and computes a scripted reply, which makes
offline runs reproducible and call logs replayable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field

import requests

from . import prompts
from .errors import GatewayError, IndeterminateReplyError, ValidationError

logger = logging.getLogger(__name__)

API_KEY_ENV = "RAGWM_API_KEY"

DEFAULT_TEMPERATURE = 0.1
DEFAULT_MAX_TOKENS = 512

PARAPHRASE_TEMPERATURE = 0.7
PARAPHRASE_MAX_TOKENS = 200

NO_ANSWER = "I do not know"

RETRY_SLEEPS = (1.0, 2.0, 4.0)
RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass
class ChatExchange:
    system: str
    user: str
    temperature: float
    max_tokens: int
    response: str
    role: str = "other"
    timestamp: float = 0.0

    def to_json(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "role": self.role,
            "system": self.system,
            "user": self.user,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "response": self.response,
        }


class CallLog:
    """Append-only record of every exchange, safe for concurrent writers."""

    def __init__(self):
        self._lock = threading.Lock()
        self.entries: list[ChatExchange] = []

    def append(self, exchange: ChatExchange) -> None:
        with self._lock:
            self.entries.append(exchange)

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_json(), ensure_ascii=False) + "\n")

    def replay(self, client: "ChatClient") -> bool:
        """True iff the client reproduces every logged response."""
        return all(
            client.complete(e.system, e.user, e.temperature, e.max_tokens)
            == e.response
            for e in self.entries
        )


class ChatClient:
    """Base chat backend. Subclasses implement `_complete`.

    `complete` enforces the in-flight limit and appends to the call log when
    one is attached.
    """

    def __init__(self, call_log: CallLog | None = None, max_in_flight: int = 4):
        self.call_log = call_log
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def complete(
        self,
        system: str,
        user: str,
        temperature: float = DEFAULT_TEMPERATURE,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ) -> str:
        if not 0.0 <= temperature <= 2.0:
            raise ValidationError(f"temperature out of range: {temperature}")
        if max_tokens < 1:
            raise ValidationError(f"max_tokens must be positive: {max_tokens}")
        with self._slots:
            response = self._complete(system, user, temperature, max_tokens)
        if self.call_log is not None:
            self.call_log.append(
                ChatExchange(
                    system=system,
                    user=user,
                    temperature=temperature,
                    max_tokens=max_tokens,
                    response=response,
                    role=prompts.detect_role(system, user),
                    timestamp=time.time(),
                )
            )
        return response

    def _complete(self, system, user, temperature, max_tokens) -> str:
        raise NotImplementedError


class HttpChatClient(ChatClient):
    """OpenAI-compatible chat-completions client.

    Transient failures (429/5xx) are retried with exponential backoff; the
    prompt text is forwarded byte-for-byte as produced by the templates.
    """

    def __init__(
        self,
        base_url: str,
        model: str = "gpt-3.5-turbo",
        api_key: str | None = None,
        timeout: float = 30.0,
        sleep=time.sleep,
        session: requests.Session | None = None,
        **kwargs,
    ):
        super().__init__(**kwargs)
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout = timeout
        self._sleep = sleep
        self._session = session or requests.Session()

    def _complete(self, system, user, temperature, max_tokens) -> str:
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": user})
        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/v1/chat/completions"
        last_status = None
        for attempt, backoff in enumerate((*RETRY_SLEEPS, None)):
            try:
                resp = self._session.post(
                    url, json=payload, headers=headers, timeout=self.timeout
                )
            except requests.RequestException as exc:
                raise GatewayError(f"transport failure: {exc}") from exc
            if resp.status_code == 200:
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (KeyError, IndexError, ValueError) as exc:
                    raise GatewayError(f"malformed completion body: {exc}") from exc
            last_status = resp.status_code
            if resp.status_code in RETRY_STATUSES and backoff is not None:
                logger.warning(
                    "chat backend returned %d, retry %d in %.0fs",
                    resp.status_code,
                    attempt + 1,
                    backoff,
                )
                self._sleep(backoff)
                continue
            break
        raise GatewayError(f"chat backend failed with HTTP {last_status}", last_status)


class HttpEmbedder:
    """Client for an OpenAI-compatible embeddings endpoint.

    Satisfies the same embedder contract as the offline hash embedder, so
    retrieval code never knows which one it is talking to.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        api_key: str | None = None,
        timeout: float = 30.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self._dim = dim
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout = timeout
        self._session = session or requests.Session()

    def dim(self) -> int:
        return self._dim

    def embed(self, text: str):
        import numpy as np

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._session.post(
                f"{self.base_url}/v1/embeddings",
                json={"model": self.model, "input": text},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise GatewayError(f"transport failure: {exc}") from exc
        if resp.status_code != 200:
            raise GatewayError(
                f"embeddings backend failed with HTTP {resp.status_code}",
                resp.status_code,
            )
        try:
            values = resp.json()["data"][0]["embedding"]
        except (KeyError, IndexError, ValueError) as exc:
            raise GatewayError(f"malformed embeddings body: {exc}") from exc
        vec = np.asarray(values, dtype=np.float64)
        if vec.shape != (self._dim,) or not np.all(np.isfinite(vec)):
            raise GatewayError(
                f"embedding has wrong shape or non-finite entries: {vec.shape}"
            )
        return vec


def relation_gloss(relation: str) -> str:
    """Lowercased human form of a canonical relation, e.g. PART_OF -> 'part of'."""
    return relation.replace("_", " ").strip().lower()


@dataclass
class MockBehavior:
    """Knobs for the scripted backend.

    relation_knowledge maps unordered entity pairs to the relation the mock
    will surface when asked about them; leak_probability gates whether it
    does. judge_mode selects how the same-meaning judge compares sentences.
    """

    leak_probability: float = 1.0
    relation_knowledge: dict[frozenset, str] = field(default_factory=dict)
    judge_mode: str = "exact"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.leak_probability <= 1.0:
            raise ValidationError("leak_probability must be in [0,1]")
        if self.judge_mode not in ("exact", "token-overlap"):
            raise ValidationError(f"unknown judge_mode {self.judge_mode!r}")
        self.relation_knowledge = {
            frozenset(pair): rel for pair, rel in self.relation_knowledge.items()
        }

    @classmethod
    def for_tuples(cls, tuples, leak_probability: float = 1.0, **kwargs):
        """Behavior whose relation knowledge covers the given watermark tuples."""
        knowledge = {
            frozenset((t.entity_a, t.entity_b)): t.relation for t in tuples
        }
        return cls(
            leak_probability=leak_probability,
            relation_knowledge=knowledge,
            **kwargs,
        )


_GEN_PATTERNS = (
    "{a} {rel} {b}.",
    "It is documented that {a} {rel} {b}.",
    "Studies indicate that {a} {rel} {b} in most observed cases.",
    "{a} reportedly {rel} {b}.",
    "Records consistently show that {a} {rel} {b}.",
    "According to the collected material, {a} {rel} {b}.",
    "Observers have noted that {a} {rel} {b}.",
    "The available evidence shows {a} {rel} {b}.",
)


class MockChatClient(ChatClient):
    """Deterministic scripted backend covering every prompt role."""

    def __init__(self, behavior: MockBehavior | None = None, **kwargs):
        super().__init__(**kwargs)
        self.behavior = behavior or MockBehavior()

    def _uniform(self, *parts: str) -> float:
        """Seeded uniform draw in [0,1), a pure function of the inputs."""
        h = hashlib.blake2b(
            "\x1f".join(parts).encode("utf-8"),
            key=self.behavior.seed.to_bytes(8, "big"),
            digest_size=8,
        ).digest()
        return int.from_bytes(h, "big") / 2**64

    def _complete(self, system, user, temperature, max_tokens) -> str:
        role = prompts.detect_role(system, user)
        handler = getattr(self, f"_handle_{role}", None)
        if handler is None:
            return NO_ANSWER
        return handler(system, user)

    def _handle_shadow(self, system, user) -> str:
        slots = prompts.parse_shadow_prompt(user)
        if not slots:
            return NO_ANSWER
        question, contexts = slots["question"], slots["contexts"]
        for pair in sorted(self.behavior.relation_knowledge, key=sorted):
            a, b = sorted(pair)
            if a in question and b in question:
                if a in contexts and b in contexts:
                    if self._uniform("leak", question) < self.behavior.leak_probability:
                        rel = self.behavior.relation_knowledge[pair]
                        return f"The relationship between {a} and {b} is {rel}."
                return NO_ANSWER
        return NO_ANSWER

    def _handle_disc(self, system, user) -> str:
        slots = prompts.parse_disc_prompt(user)
        if not slots:
            return "no"
        gloss = relation_gloss(slots["relation"])
        # whole-word match so e.g. "uses" never fires inside "causes";
        # underscored canonical forms in the answer normalize to spaces
        normalized = slots["rag_doc"].lower().replace("_", " ")
        hit = gloss and re.search(
            rf"(?<![a-z]){re.escape(gloss)}(?![a-z])", normalized
        )
        return "yes" if hit else "no"

    def _handle_gen(self, system, user) -> str:
        slots = prompts.parse_gen_prompt(user)
        if not slots:
            return "[]"
        m = None
        for token in slots["feedback"].split(";"):
            token = token.strip()
            if token.startswith("variant="):
                m = token[len("variant=") :]
        try:
            index = (int(m) - 1) % len(_GEN_PATTERNS) if m else 0
        except ValueError:
            index = 0
        text = _GEN_PATTERNS[index].format(
            a=slots["entity_a"],
            rel=relation_gloss(slots["relation"]),
            b=slots["entity_b"],
        )
        return json.dumps([{"watermark_text": text}])

    def _handle_judge(self, system, user) -> str:
        slots = prompts.parse_judge_prompt(user)
        if not slots:
            return "no"
        a, b = slots["a"], slots["b"]
        if self.behavior.judge_mode == "exact":
            return "yes" if a.strip() == b.strip() else "no"
        ta, tb = set(a.lower().split()), set(b.lower().split())
        union = ta | tb
        overlap = len(ta & tb) / len(union) if union else 1.0
        return "yes" if overlap >= 0.6 else "no"

    def _handle_coherence(self, system, user) -> str:
        return "yes"

    def _handle_paraphrase(self, system, user) -> str:
        slots = prompts.parse_paraphrase_prompt(user)
        return slots.get("text", "")

    def _handle_removal(self, system, user) -> str:
        slots = prompts.parse_removal_prompt(user)
        return slots.get("text", "")

    def _handle_extract(self, system, user) -> str:
        """Naive offline extraction: pair up salient words, pick a relation
        deterministically from a fixed vocabulary."""
        slots = prompts.parse_extract_prompt(user)
        if not slots:
            return "[]"
        import zlib as _zlib

        words = re.findall(r"[A-Za-z][a-z]{3,}", slots["text"])
        relations = (
            "USES", "CAUSES", "ASSOCIATION", "INVOLVES",
            "PART_OF", "LOCATED_IN", "SUPPORTS", "TREATS",
        )
        triples = []
        for i in range(0, min(len(words) - 1, 6), 2):
            a, b = words[i], words[i + 1]
            rel = relations[_zlib.crc32(f"{a}|{b}".encode()) % len(relations)]
            triples.append({"subject": a, "relation": rel, "object": b})
        return json.dumps(triples)


class ScriptedChatClient(ChatClient):
    """Returns a fixed sequence of replies; raises when the script runs out."""

    def __init__(self, replies: list[str], **kwargs):
        super().__init__(**kwargs)
        self.replies = list(replies)
        self.calls = 0

    def _complete(self, system, user, temperature, max_tokens) -> str:
        if self.calls >= len(self.replies):
            raise GatewayError("scripted client exhausted")
        reply = self.replies[self.calls]
        self.calls += 1
        return reply


def answer_with_context(
    client: ChatClient, question: str, contexts: list[str]
) -> str:
    """Eq.-2-style answer generation: question plus retrieved texts."""
    if not contexts:
        raise ValidationError("contexts must be non-empty")
    system, user = prompts.build_shadow_prompt(question, contexts)
    return client.complete(system, user)


def judge_same_meaning(client: ChatClient, a: str, b: str) -> bool:
    if not a or not b:
        raise ValidationError("both sentences must be non-empty")
    system, user = prompts.build_judge_prompt(a, b)
    reply = client.complete(system, user).strip().lower()
    if reply == "yes":
        return True
    if reply == "no":
        return False
    raise IndeterminateReplyError(f"judge replied {reply!r}")
