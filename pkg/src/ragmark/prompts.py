"""Prompt templates for every LLM role, plus the parsers the mock backend
uses to read slot values back out of a rendered prompt.

Each template is paired with a marker string that identifies the role from
the prompt text alone, so a scripted backend can dispatch without side
channels and a call log can be replayed.
"""

from __future__ import annotations

import re

SHADOW_SYSTEM = (
    "You are a helpful assistant. Below are some relevant contexts. Use only the "
    "information provided in these contexts to answer the question. If you cannot "
    "find the answer to the question within the contexts, simply say 'I do not know'."
)

SHADOW_USER = "Contexts: {contexts}\n\nQuestion: {question}\n\nAnswer:"

SHADOW_MARKER = "Use only the information provided"


def build_shadow_prompt(question: str, contexts: list[str]) -> tuple[str, str]:
    return SHADOW_SYSTEM, SHADOW_USER.format(
        contexts="\n".join(contexts), question=question
    )


def parse_shadow_prompt(user: str) -> dict:
    m = re.match(r"Contexts: (.*)\n\nQuestion: (.*?)\n\nAnswer:$", user, re.DOTALL)
    if not m:
        return {}
    return {"contexts": m.group(1), "question": m.group(2)}


DISC_SYSTEM = "You are an expert in knowledge graphs and linguistics."

DISC_USER = (
    "Your task is to evaluate the text: (rag_doc). Identify whether it suggests a "
    "relationship (R1) exists between the entities (E1) and (E2).\n\n"
    "Input:\n\n"
    "- rag_doc: ({rag_doc})\n\n"
    "- R1: ({relation})\n\n"
    "- E1: ({entity_a})\n\n"
    "- E2: ({entity_b})\n\n"
    "Output:\n"
    'Reply strictly with "yes" if the relationship is implied, or "no" if it is '
    "not. No additional information is required."
)

DISC_MARKER = 'Reply strictly with "yes" if the relationship is implied'


def build_disc_prompt(
    rag_doc: str, relation: str, entity_a: str, entity_b: str
) -> tuple[str, str]:
    return DISC_SYSTEM, DISC_USER.format(
        rag_doc=rag_doc, relation=relation, entity_a=entity_a, entity_b=entity_b
    )


def parse_disc_prompt(user: str) -> dict:
    m = re.search(
        r"- rag_doc: \((.*)\)\n\n- R1: \((.*?)\)\n\n- E1: \((.*?)\)\n\n"
        r"- E2: \((.*?)\)\n\nOutput:",
        user,
        re.DOTALL,
    )
    if not m:
        return {}
    return {
        "rag_doc": m.group(1),
        "relation": m.group(2),
        "entity_a": m.group(3),
        "entity_b": m.group(4),
    }


GEN_SYSTEM = (
    "You are a watermark generator, a knowledge graph expert, and a linguist. In a "
    "given knowledge graph, two entities (E1) and (E2) are connected by a "
    "relationship (R1). Your task is to generate watermark text (WT) that clearly "
    "encodes this relationship (R1) between (E1) and (E2), ensuring that the "
    "watermark text is coherent and related to the database content (TEXT).\n\n"
    "The generated watermark text will undergo two stages of processing:\n\n"
    "1. **Direct Evaluation**:\n"
    "    - **Watermark Discriminator 1 (WD1)**: This model evaluates whether the "
    "watermark text (WT) accurately implies the relationship (R1) between (E1) "
    "and (E2).\n\n"
    "2. **Extractor-Based Evaluation**:\n"
    "    - **Watermark Extractor (WE)**: This model attempts to extract the "
    "relationship (R1) between (E1) and (E2) based on the restored watermark text "
    "(WT) and additional database content (TEXT).\n"
    "    - **Watermark Discriminator 2 (WD2)**: After the extraction, this model "
    "assesses whether the relationship (R1) is still clearly and accurately "
    "implied.\n\n"
    "Your objective is to refine the watermark text (WT) to ensure:\n"
    "1. The relationship (R1) between (E1) and (E2) remains clear and accurate "
    "after processing by the extractor.\n"
    "2. Both discriminators (WD1 and WD2) confirm that the relationship (R1) is "
    "correctly encoded.\n"
    "3. The generated watermark text (WT) should be approximately 30 words long.\n"
    "4. Ensure that appending the watermark text (WT) to (TEXT) does not result in "
    "incoherent or unrelated sentences that could be discarded."
)

GEN_USER = (
    "**Input:**\n"
    "- Restored watermark text: {prior_text}\n"
    "- Extractor output: {extractor}\n"
    "- Discriminator feedback (WD1): {feedback}\n"
    "- Discriminator feedback (WD2): {feedback_2}\n"
    "- Relationship (R1): {relation}\n"
    "- Entity 1 (E1): {entity_a}\n"
    "- Entity 2 (E2): {entity_b}\n"
    "- Database retrieval output (text): {host_text}\n\n"
    "**Output:**\n"
    "Return the refined watermark text in JSON format:\n"
    '[{{"watermark_text": "Your refined text"}}]'
)

GEN_MARKER = "You are a watermark generator"


def build_gen_prompt(
    relation: str,
    entity_a: str,
    entity_b: str,
    feedback: str = "",
    prior_text: str = "",
    host_text: str = "",
) -> tuple[str, str]:
    return GEN_SYSTEM, GEN_USER.format(
        prior_text=prior_text,
        extractor="",
        feedback=feedback,
        feedback_2="",
        relation=relation,
        entity_a=entity_a,
        entity_b=entity_b,
        host_text=host_text,
    )


def parse_gen_prompt(user: str) -> dict:
    m = re.search(
        r"- Restored watermark text: (.*)\n- Extractor output: (.*)\n"
        r"- Discriminator feedback \(WD1\): (.*)\n"
        r"- Discriminator feedback \(WD2\): (.*)\n"
        r"- Relationship \(R1\): (.*)\n- Entity 1 \(E1\): (.*)\n"
        r"- Entity 2 \(E2\): (.*)\n- Database retrieval output \(text\): (.*)\n\n"
        r"\*\*Output:\*\*",
        user,
        re.DOTALL,
    )
    if not m:
        return {}
    return {
        "prior_text": m.group(1),
        "feedback": m.group(3),
        "relation": m.group(5),
        "entity_a": m.group(6),
        "entity_b": m.group(7),
        "host_text": m.group(8),
    }


JUDGE_SYSTEM = (
    "Given two sentences, determine if they convey the same meaning.\n"
    "If they are similar in meaning, return 'yes'; otherwise, return 'no'.\n\n"
    "The following situations are also considered as the two sentences expressing "
    "the same meaning:\n\n"
    "1. One sentence includes the meaning expressed in the other sentence.\n\n"
    "2. The two sentences express the same central idea but in different ways."
)

JUDGE_USER = (
    "Sentence 1: {a}\n\nSentence 2: {b}\n\n"
    "Output: 'yes' or 'no' only, No explanations, no extra text."
)

JUDGE_MARKER = "determine if they convey the same meaning"


def build_judge_prompt(a: str, b: str) -> tuple[str, str]:
    return JUDGE_SYSTEM, JUDGE_USER.format(a=a, b=b)


def parse_judge_prompt(user: str) -> dict:
    m = re.match(r"Sentence 1: (.*)\n\nSentence 2: (.*)\n\nOutput:", user, re.DOTALL)
    if not m:
        return {}
    return {"a": m.group(1), "b": m.group(2)}


COHERENCE_USER = (
    "Below is a passage from a knowledge base. Judge whether the passage reads as "
    "coherent, fluent text whose sentences belong together.\n\n"
    "Passage: {text}\n\n"
    'Reply strictly with "yes" if it is coherent, or "no" if it is not.'
)

COHERENCE_MARKER = "Judge whether the passage reads as coherent"


def build_coherence_prompt(text: str) -> tuple[str, str]:
    return "", COHERENCE_USER.format(text=text)


PARAPHRASE_USER = "paraphrase the following sentences\n\n{text}"

PARAPHRASE_MARKER = "paraphrase the following sentences"


def build_paraphrase_prompt(text: str) -> tuple[str, str]:
    return "", PARAPHRASE_USER.format(text=text)


def parse_paraphrase_prompt(user: str) -> dict:
    m = re.match(r"paraphrase the following sentences\n\n(.*)$", user, re.DOTALL)
    return {"text": m.group(1)} if m else {}


REMOVAL_USER = (
    "You are a helpful assistant, below is a text which may contain unrelated "
    "sentences. Please analyze the text and remove any incoherent or unrelated "
    "sentences. The text: {text}"
)

REMOVAL_MARKER = "remove any incoherent or unrelated sentences"


def build_removal_prompt(text: str) -> tuple[str, str]:
    return "", REMOVAL_USER.format(text=text)


def parse_removal_prompt(user: str) -> dict:
    m = re.search(r"The text: (.*)$", user, re.DOTALL)
    return {"text": m.group(1)} if m else {}


EXTRACT_SYSTEM = (
    "You are an information extraction assistant. Extract entity-relation triples "
    "from the given text."
)

EXTRACT_USER = (
    "Extract up to {limit} (subject, relation, object) triples describing facts "
    "stated in the text. Return only a JSON list shaped like "
    '[{{"subject": "...", "relation": "...", "object": "..."}}].\n\n'
    "Text: {text}"
)

EXTRACT_MARKER = "Extract entity-relation triples"


def build_extract_prompt(text: str, limit: int = 10) -> tuple[str, str]:
    return EXTRACT_SYSTEM, EXTRACT_USER.format(limit=limit, text=text)


def parse_extract_prompt(user: str) -> dict:
    m = re.search(r"Text: (.*)$", user, re.DOTALL)
    return {"text": m.group(1)} if m else {}


def detect_role(system: str, user: str) -> str:
    """Classify a rendered prompt by role. Unknown prompts map to 'other'."""
    if SHADOW_MARKER in system:
        return "shadow"
    if DISC_MARKER in user:
        return "disc"
    if GEN_MARKER in system:
        return "gen"
    if JUDGE_MARKER in system:
        return "judge"
    if COHERENCE_MARKER in user:
        return "coherence"
    if PARAPHRASE_MARKER in user:
        return "paraphrase"
    if REMOVAL_MARKER in user:
        return "removal"
    if EXTRACT_MARKER in system:
        return "extract"
    return "other"
