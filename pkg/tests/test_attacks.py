from __future__ import annotations

import hashlib
import random

import pytest

from ragmark.attacks import (
    AttackOutcome,
    UnigramPerplexityScorer,
    duplicate_filter,
    expand_k,
    insert_knowledge,
    kg_distill,
    paraphrase_responses,
    paraphrase_transform,
    perplexity_detect,
    remove_unrelated,
    removal_transform,
)
from ragmark.errors import ValidationError
from ragmark.extraction import ExtractedTriple
from ragmark.gateway import ChatClient, MockChatClient
from ragmark.injection import InjectionConfig, inject_all
from ragmark.kb import KnowledgeBase, TextRecord, add_record
from ragmark.prompts import parse_paraphrase_prompt, parse_removal_prompt
from ragmark.retrieval import HashEmbedder, Retriever
from ragmark.verification import InProcessSuspect, run_verification
from ragmark.watermark import OwnerKey, build_graph

from conftest import (
    filler_sentence,
    ideal_mock,
    make_entities,
    make_relations,
    synth_corpus,
)


class TransformClient(ChatClient):
    """Adversarial paraphraser/remover driven by a text -> text function."""

    def __init__(self, fn, **kwargs):
        super().__init__(**kwargs)
        self.fn = fn

    def _complete(self, system, user, temperature, max_tokens):
        slots = parse_paraphrase_prompt(user) or parse_removal_prompt(user)
        return self.fn(slots["text"]) if slots else "I do not know"


def kb_hash_set(kb: KnowledgeBase) -> set[bytes]:
    return {r.content_hash for r in kb}


@pytest.fixture(scope="module")
def injected():
    entities = make_entities(60)
    relations = make_relations(10)
    key = OwnerKey(hashlib.sha256(b"attack-key-2").digest())
    graph = build_graph(key, entities, relations, tuple_count=8, p=0.4)
    kb = synth_corpus(300, entities=entities, seed=21)
    client = ideal_mock(graph)
    config = InjectionConfig(
        gen_client=client, shadow_client=client, disc_client=client, n_wm=3
    )
    retriever = Retriever(HashEmbedder(128))
    kb_wm, report = inject_all(config, retriever, kb, graph)
    assert report.failures == 0
    return graph, kb_wm, report, retriever, client


def verify_under(graph, kb, retriever, client, *, transform=None, n=8, seed=5,
                 placements=None, k=1, width=None, record_filter=None):
    suspect = InProcessSuspect(
        kb, retriever, client, k=k,
        candidate_width=width, record_filter=record_filter,
        context_transform=transform,
    )
    return run_verification(
        graph, suspect, client, n=n, p0=0.01, alpha=0.05, seed=seed,
        wm_records=placements,
    )


# --- paraphrasing ----------------------------------------------------------


def test_identity_paraphrase_changes_nothing(injected):
    graph, kb_wm, report, retriever, client = injected
    texts = ["one sentence.", "another sentence."]
    assert paraphrase_responses(MockChatClient(), texts) == texts
    base = verify_under(graph, kb_wm, retriever, client,
                        placements=report.placements_by_tuple())
    attacked = verify_under(
        graph, kb_wm, retriever, client,
        transform=paraphrase_transform(MockChatClient()),
        placements=report.placements_by_tuple(),
    )
    assert attacked.c_wm == base.c_wm
    assert attacked.wirr == base.wirr


def test_word_shuffle_paraphrase_keeps_relation(injected):
    """Rewording that preserves entity tokens and the relation gloss cannot
    erase the watermark knowledge."""
    graph, kb_wm, report, retriever, client = injected

    def shuffle_words(text):
        words = text.split()
        rng = random.Random(1)
        rng.shuffle(words)
        return "so " + " ".join(words)

    attacked = verify_under(
        graph, kb_wm, retriever, client,
        transform=lambda texts: [shuffle_words(t) for t in texts],
    )
    assert attacked.c_wm == 8
    assert attacked.verdict is True


def test_entity_deleting_paraphrase_kills_discrimination(injected):
    graph, kb_wm, report, retriever, client = injected
    entities = {t.entity_a for t in graph.tuples} | {t.entity_b for t in graph.tuples}

    def strip_entities(text):
        for e in entities:
            text = text.replace(e, "xxxx")
        return text

    attacked = verify_under(
        graph, kb_wm, retriever, client,
        transform=lambda texts: [strip_entities(t) for t in texts],
    )
    assert attacked.c_wm == 0
    assert attacked.verdict is False


def test_paraphrase_requires_texts():
    with pytest.raises(ValidationError):
        paraphrase_responses(MockChatClient(), [])


# --- unrelated content removal ---------------------------------------------


def test_single_sentence_text_unchanged():
    assert remove_unrelated(MockChatClient(), "just one sentence.") == "just one sentence."


def test_overlap_removal_keeps_entangled_watermark(injected):
    """A filter that drops sentences with no content-token overlap against
    the rest keeps appended watermark sentences that reuse host entities."""
    graph, kb_wm, report, retriever, client = injected

    def drop_nonoverlapping(text):
        sentences = [s.strip() for s in text.split(".") if s.strip()]
        kept = []
        for i, s in enumerate(sentences):
            tokens = set(s.lower().split())
            rest = set()
            for j, other in enumerate(sentences):
                if j != i:
                    rest |= set(other.lower().split())
            if tokens & rest:
                kept.append(s)
        return ". ".join(kept) + "."

    remover = TransformClient(drop_nonoverlapping)
    attacked = verify_under(
        graph, kb_wm, retriever, client, transform=removal_transform(remover),
        placements=report.placements_by_tuple(),
    )
    # watermark sentences share entity tokens with each other and the host
    assert attacked.c_wm == 8


def test_last_sentence_removal_hurts_concat_watermarks(injected):
    graph, kb_wm, report, retriever, client = injected

    def drop_last_sentence(text):
        sentences = [s.strip() for s in text.split(".") if s.strip()]
        return ". ".join(sentences[:-1]) + "."

    remover = TransformClient(drop_last_sentence)
    base = verify_under(graph, kb_wm, retriever, client)
    attacked = verify_under(
        graph, kb_wm, retriever, client, transform=removal_transform(remover)
    )
    assert attacked.c_wm <= base.c_wm


def test_remove_unrelated_requires_text():
    with pytest.raises(ValidationError):
        remove_unrelated(MockChatClient(), "")


# --- knowledge insertion ----------------------------------------------------


def test_insert_zero_is_identity(small_kb):
    attacked = insert_knowledge(small_kb, 0, seed=4)
    assert attacked.ids() == small_kb.ids()
    assert kb_hash_set(attacked) == kb_hash_set(small_kb)


def test_insert_count_exact(small_kb):
    attacked = insert_knowledge(small_kb, 2500, seed=4)
    assert len(attacked) == len(small_kb) + 2500


def test_insert_matches_seeded_oracle(small_kb):
    attacked = insert_knowledge(small_kb, 3, seed=99)
    originals = [r.text for r in small_kb]
    rng = random.Random(99)
    for new in attacked.records[len(small_kb):]:
        first = originals[rng.randrange(len(originals))]
        second = originals[rng.randrange(len(originals))]
        assert new.text == first + " " + second


def test_insert_prefix_property(small_kb):
    """Same seed: the 50-insertion attack is a prefix of the 500-insertion one."""
    a50 = insert_knowledge(small_kb, 50, seed=7)
    a500 = insert_knowledge(small_kb, 500, seed=7)
    texts50 = [r.text for r in a50.records[len(small_kb):]]
    texts500 = [r.text for r in a500.records[len(small_kb):]]
    assert texts500[:50] == texts50


def test_insert_copy_on_attack(small_kb):
    before = kb_hash_set(small_kb)
    insert_knowledge(small_kb, 10, seed=1)
    assert kb_hash_set(small_kb) == before
    assert len(small_kb) == 3


def test_insert_validation(small_kb):
    with pytest.raises(ValidationError):
        insert_knowledge(small_kb, -1, seed=0)
    with pytest.raises(ValidationError):
        insert_knowledge(KnowledgeBase(), 1, seed=0)


# --- knowledge expansion ----------------------------------------------------


def test_expand_k_copies_config():
    config = InjectionConfig(
        gen_client=MockChatClient(),
        shadow_client=MockChatClient(),
        disc_client=MockChatClient(),
        k=1,
    )
    widened = expand_k(config, 3)
    assert widened.k == 3
    assert config.k == 1
    assert expand_k(config, 1).k == 1
    with pytest.raises(ValidationError):
        expand_k(config, 0)
    with pytest.raises(ValidationError):
        expand_k(config, 51)


def test_context_length_grows_with_k(injected):
    graph, kb_wm, report, retriever, client = injected
    lengths = []

    def measure(texts):
        lengths.append(sum(len(t) for t in texts))
        return texts

    for k in (1, 3, 5):
        verify_under(graph, kb_wm, retriever, client, transform=measure, n=1, k=k)
    assert lengths[0] < lengths[1] < lengths[2]


# --- duplicate filtering ----------------------------------------------------


def _record(text, i=0):
    return TextRecord(f"d{i}", text)


def test_duplicate_filter_drops_second_copy():
    records = [_record("same text", 0), _record("same text", 1), _record("other", 2)]
    kept = duplicate_filter(records)
    assert [r.id for r in kept] == ["d0", "d2"]


def test_duplicate_filter_keeps_distinct_variants():
    records = [_record(f"variant {i} of the same fact", i) for i in range(5)]
    assert duplicate_filter(records) == records


def test_duplicate_filter_idempotent_and_collapses():
    records = [_record("x", i) for i in range(8)]
    once = duplicate_filter(records)
    assert len(once) == 1
    assert duplicate_filter(once) == once


def test_duplicate_filter_preserves_wsn_wirr(injected):
    graph, kb_wm, report, retriever, client = injected
    placements = report.placements_by_tuple()
    plain = verify_under(graph, kb_wm, retriever, client, placements=placements)
    filtered = verify_under(
        graph, kb_wm, retriever, client, placements=placements,
        width=50, record_filter=duplicate_filter,
    )
    assert filtered.c_wm == plain.c_wm
    assert filtered.wirr == plain.wirr


# --- perplexity detection ---------------------------------------------------


def test_separable_scores_perfect_f1():
    clean = [TextRecord(f"c{i}", "clean") for i in range(50)]
    wm = [TextRecord(f"w{i}", "mark", source_tuple="t") for i in range(5)]
    scorer = lambda text: 1000.0 if text == "mark" else 10.0
    result = perplexity_detect(scorer, clean, wm)
    assert result.f1 == 1.0
    assert sorted(result.flagged_ids) == sorted(r.id for r in wm)


def test_bimodal_kmeans_recovers_partition():
    rng = random.Random(0)
    clean = [TextRecord(f"c{i}", f"c{i}") for i in range(40)]
    wm = [TextRecord(f"w{i}", f"w{i}", source_tuple="t") for i in range(10)]
    scores = {r.id: rng.gauss(10, 1) for r in clean}
    scores.update({r.id: rng.gauss(1000, 1) for r in wm})
    by_text = {r.text: scores[r.id] for r in clean + wm}
    result = perplexity_detect(lambda t: by_text[t], clean, wm)
    assert result.f1 == 1.0


def test_degenerate_equal_scores():
    clean = [TextRecord(f"c{i}", "a") for i in range(10)]
    wm = [TextRecord("w0", "a", source_tuple="t")]
    result = perplexity_detect(lambda t: 5.0, clean, wm)
    assert result.flagged_ids == []
    assert result.f1 == 0.0
    assert "degenerate" in result.notes


def test_scorer_must_be_finite_positive():
    clean = [TextRecord("c0", "a"), TextRecord("c1", "b")]
    with pytest.raises(ValidationError):
        perplexity_detect(lambda t: -1.0, clean, [])


def test_same_distribution_low_f1():
    """Watermark texts drawn from the clean generator stay undetectable."""
    rng = random.Random(13)
    clean = [TextRecord(f"c{i}", filler_sentence(rng)) for i in range(400)]
    wm = [
        TextRecord(f"w{i}", filler_sentence(rng), source_tuple="t")
        for i in range(40)
    ]
    scorer = UnigramPerplexityScorer().fit([r.text for r in clean])
    result = perplexity_detect(scorer, clean, wm)
    assert result.f1 <= 0.25


def test_unigram_scorer_orders_texts():
    rng = random.Random(3)
    sample = [filler_sentence(rng) for _ in range(200)]
    scorer = UnigramPerplexityScorer().fit(sample)
    in_dist = scorer(sample[0])
    out_dist = scorer("QQQQ ]]]] #### 0123 QQQQ ]]]]")
    assert out_dist > in_dist > 1.0


# --- knowledge graph distillation -------------------------------------------


def _triples_for(kb, mapping):
    """mapping: record id -> list of (subject, relation, object)."""
    out = []
    for rid, rows in mapping.items():
        for s, r, o in rows:
            out.append(ExtractedTriple(s, r, o, rid))
    return out


def test_distill_rate_one_keeps_everything(small_kb):
    triples = _triples_for(
        small_kb, {"r0000001": [("Alpha", "USES", "Gold")],
                   "r0000002": [("Beta", "CAUSES", "Decay")]}
    )
    distilled = kg_distill(small_kb, triples, 1.0)
    assert distilled.ids() == small_kb.ids()
    assert kb_hash_set(distilled) == kb_hash_set(small_kb)


def test_distill_monotone_in_rate():
    rng = random.Random(2)
    kb = KnowledgeBase()
    triples = []
    for i in range(40):
        rid = add_record(kb, filler_sentence(rng))
        # degree skew: entity index grows slower than record index
        entity = f"E{i % 12}"
        other = f"E{(i * 7) % 12}"
        triples.append(ExtractedTriple(entity, "USES", other, rid))
    previous: set[str] = set()
    for rate in (0.05, 0.1, 0.2, 0.4, 0.8, 1.0):
        kept = set(kg_distill(kb, triples, rate).ids())
        assert previous <= kept
        previous = kept
    assert previous == set(kb.ids())


def test_distill_hand_built_degree_fixture():
    """Watermark entities sit at the top of the degree ranking, so their
    hosts survive a 0.2-rate distillation while most clean records drop."""
    kb = KnowledgeBase()
    clean_ids = [add_record(kb, f"clean record {i} text") for i in range(10)]
    wm_ids = [add_record(kb, f"hub record {i} text") for i in range(2)]
    triples = []
    # twenty distinct degree-1 entities spread over the clean records
    for i, rid in enumerate(clean_ids):
        triples.append(ExtractedTriple(f"RareA{i}", "USES", f"RareB{i}", rid))
    # two hub entities with degree 6 apiece on the watermark hosts
    for i, rid in enumerate(wm_ids):
        for j in range(6):
            triples.append(ExtractedTriple(f"Hub{i}", "USES", f"Aux{i}{j}", rid))
    # 34 entities, rate 0.2 -> ceil(6.8) = 7 kept: Hub0/Hub1 by degree, then
    # five degree-1 ties resolved lexicographically, all of them Aux names
    distilled = kg_distill(kb, triples, 0.2)
    kept = set(distilled.ids())
    assert set(wm_ids) <= kept
    dropped_clean = [rid for rid in clean_ids if rid not in kept]
    assert len(dropped_clean) >= 6  # at least 60% of clean records gone


def test_distill_records_without_triples_survive(small_kb):
    triples = _triples_for(small_kb, {"r0000001": [("Alpha", "USES", "Gold")]})
    distilled = kg_distill(small_kb, triples, 0.5)
    # r2/r3 have no extracted entities: outside the graph view, retained
    assert "r0000002" in distilled
    assert "r0000003" in distilled


def test_distill_validation(small_kb):
    with pytest.raises(ValidationError):
        kg_distill(small_kb, [], 0.0)
    with pytest.raises(ValidationError):
        kg_distill(small_kb, [], 1.5)


def test_attack_outcome_dataclass():
    outcome = AttackOutcome(attack="insert", params={"count": 5}, inserted=5)
    assert outcome.attack == "insert"
    assert outcome.kb_after is None
