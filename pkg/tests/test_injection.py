from __future__ import annotations

import hashlib
import json

import pytest

from ragmark.errors import GenerationError, ValidationError
from ragmark.gateway import MockChatClient, ScriptedChatClient
from ragmark.injection import (
    InjectionConfig,
    InjectionReport,
    discriminate,
    generate_wt,
    inject_all,
    interaction_loop,
    shadow_answer,
    watermark_share,
)
from ragmark.kb import KnowledgeBase, add_record
from ragmark.retrieval import HashEmbedder, Retriever
from ragmark.watermark import OwnerKey, WatermarkGraph, WatermarkTuple, build_graph

from conftest import ideal_mock, make_entities, make_relations, synth_corpus

TUPLE = WatermarkTuple("t0001", "Alpha", "USES", "Beta")


def make_config(client, **kwargs):
    defaults = dict(gen_client=client, shadow_client=client, disc_client=client)
    defaults.update(kwargs)
    return InjectionConfig(**defaults)


def gen_reply(text: str) -> str:
    return json.dumps([{"watermark_text": text}])


def small_graph():
    return WatermarkGraph(
        key_fingerprint="deadbeef",
        p=1.0,
        chain=["Alpha", "Beta"],
        tuples=[TUPLE],
    )


def host_kb() -> KnowledgeBase:
    kb = KnowledgeBase()
    add_record(kb, "Alpha is studied together with Beta in many reports.")
    add_record(kb, "unrelated filler text about something else entirely.")
    return kb


def test_generate_wt_scripted_echo():
    client = ScriptedChatClient([gen_reply("Alpha uses Beta.")])
    assert generate_wt(client, TUPLE) == "Alpha uses Beta."


def test_generate_wt_mock_contains_entities_and_gloss():
    text = generate_wt(MockChatClient(), TUPLE, feedback="variant=2; distinct.")
    assert "Alpha" in text and "Beta" in text and "uses" in text


def test_generate_wt_malformed_reply():
    with pytest.raises(GenerationError):
        generate_wt(ScriptedChatClient(["oops"]), TUPLE)
    with pytest.raises(GenerationError):
        generate_wt(ScriptedChatClient(["[]"]), TUPLE)


def test_shadow_answer_single_record_base():
    kb = KnowledgeBase()
    add_record(kb, "Alpha and Beta appear here.")
    client = ideal_mock(small_graph())
    retriever = Retriever(HashEmbedder(64))
    answer, ids = shadow_answer(
        client, retriever, kb, "What is the relationship between Alpha and Beta?"
    )
    assert ids == ["r0000001"]
    assert "USES" in answer


def test_shadow_answer_id_count_tracks_k(small_kb):
    client = MockChatClient()
    retriever = Retriever(HashEmbedder(64))
    _, ids = shadow_answer(client, retriever, small_kb, "anything", k=2)
    assert len(ids) == 2
    _, ids = shadow_answer(client, retriever, small_kb, "anything", k=9)
    assert len(ids) == 3  # min(k, |kb|)


def test_discriminate_yes_no_and_protocol():
    counters = {}
    assert discriminate(
        ScriptedChatClient(["yes"]), "Alpha uses Beta to do things", TUPLE, counters
    )
    assert not discriminate(ScriptedChatClient(["no"]), "I do not know", TUPLE, counters)
    assert counters == {}
    assert not discriminate(ScriptedChatClient(["dunno"]), "answer", TUPLE, counters)
    assert counters["indeterminate"] == 1


def test_discriminate_relation_mismatch():
    client = MockChatClient()
    assert not discriminate(client, "Alpha CAUSES Beta in this passage.", TUPLE)
    assert discriminate(client, "Alpha USES Beta in this passage.", TUPLE)


def test_ideal_mock_single_epoch_per_variant():
    kb = host_kb()
    client = ideal_mock(small_graph())
    config = make_config(client, n_wm=3)
    placed = interaction_loop(config, Retriever(HashEmbedder(64)), kb, TUPLE)
    assert len(placed) == 3
    assert all(wt.epochs_used == 1 for wt in placed)
    assert all(wt.placement.mode == "concat" for wt in placed)
    # all texts landed on the Alpha/Beta host and are distinct
    assert {wt.placement.record_id for wt in placed} == {"r0000001"}
    assert len({wt.text for wt in placed}) == 3
    host = kb.get("r0000001")
    assert host.is_watermark and host.source_tuple == "t0001"


def test_scripted_disc_schedule_consumes_epochs():
    """disc says no, no, then yes -> epochs_used == 3."""
    kb = host_kb()
    gen = MockChatClient()
    shadow = MockChatClient()  # answers "I do not know"; disc is scripted anyway
    disc = ScriptedChatClient(["no", "no", "yes", "yes"])  # last "yes" = coherence
    config = make_config(gen, gen_client=gen, shadow_client=shadow, disc_client=disc, n_wm=1)
    placed = interaction_loop(config, Retriever(HashEmbedder(64)), kb, TUPLE)
    assert len(placed) == 1
    assert placed[0].epochs_used == 3


def test_rollback_on_total_failure_leaves_base_identical():
    kb = host_kb()
    before = [(r.id, r.text, r.content_hash, r.is_watermark) for r in kb]
    gen = MockChatClient()
    disc = ScriptedChatClient(["no"] * 40)
    config = make_config(gen, disc_client=disc, n_wm=2, max_epochs=4)
    report = InjectionReport()
    placed = interaction_loop(config, Retriever(HashEmbedder(64)), kb, TUPLE, report)
    assert placed == []
    assert report.failures == 2
    assert [(r.id, r.text, r.content_hash, r.is_watermark) for r in kb] == before


def test_direct_mode_adds_records():
    kb = host_kb()
    client = ideal_mock(small_graph())
    config = make_config(client, n_wm=3, mode="direct")
    placed = interaction_loop(config, Retriever(HashEmbedder(64)), kb, TUPLE)
    assert len(placed) == 3
    assert len(kb) == 5
    for wt in placed:
        record = kb.get(wt.placement.record_id)
        assert record.is_watermark and record.source_tuple == "t0001"
        assert record.text == wt.text


def test_duplicate_variant_regenerated_once():
    """A generated text equal to an earlier variant triggers exactly one
    regeneration before placement."""
    kb = host_kb()
    gen = ScriptedChatClient([
        gen_reply("Alpha uses Beta."),   # variant 1
        gen_reply("Alpha uses Beta."),   # variant 2, duplicate
        gen_reply("Beta is used by Alpha."),  # the single regeneration
    ])
    shadow = ideal_mock(small_graph())
    disc = MockChatClient()
    config = make_config(gen, gen_client=gen, shadow_client=shadow,
                         disc_client=disc, n_wm=2)
    placed = interaction_loop(config, Retriever(HashEmbedder(64)), kb, TUPLE)
    assert [wt.text for wt in placed] == [
        "Alpha uses Beta.",
        "Beta is used by Alpha.",
    ]
    assert gen.calls == 3
    assert all(wt.epochs_used == 1 for wt in placed)


def test_direct_mode_skips_coherence_check():
    """In direct mode a single discriminator yes suffices per epoch: there is
    no host text for a coherence judgement."""
    kb = host_kb()
    gen = MockChatClient()
    shadow = ideal_mock(small_graph())
    disc = ScriptedChatClient(["yes"])  # would raise on a second call
    config = make_config(gen, shadow_client=shadow, disc_client=disc,
                         n_wm=1, mode="direct")
    placed = interaction_loop(config, Retriever(HashEmbedder(64)), kb, TUPLE)
    assert len(placed) == 1
    assert disc.calls == 1


def test_coherence_failure_consumes_epoch():
    kb = host_kb()
    gen = MockChatClient()
    shadow = ideal_mock(small_graph())
    # epoch 1: disc yes then coherence no; epoch 2: disc yes, coherence yes
    disc = ScriptedChatClient(["yes", "no", "yes", "yes"])
    config = make_config(gen, shadow_client=shadow, disc_client=disc, n_wm=1)
    placed = interaction_loop(config, Retriever(HashEmbedder(64)), kb, TUPLE)
    assert placed[0].epochs_used == 2


def test_inject_all_concat_keeps_record_count():
    entities = make_entities(30)
    relations = make_relations(8)
    key = OwnerKey(hashlib.sha256(b"inject-all-key-0").digest())
    graph = build_graph(key, entities, relations, tuple_count=6, p=1.0)
    kb = synth_corpus(120, entities=entities, seed=3)
    client = ideal_mock(graph)
    config = make_config(client, n_wm=2)
    kb_wm, report = inject_all(config, Retriever(HashEmbedder(128)), kb, graph)
    assert len(kb_wm) == len(kb)
    assert report.successes == 12
    assert report.failures == 0
    # untouched records are byte-identical
    hosts = {e["placement"]["record_id"] for e in report.entries if e["status"] == "ok"}
    for r in kb:
        if r.id not in hosts:
            assert kb_wm.get(r.id).text == r.text
            assert kb_wm.get(r.id).content_hash == r.content_hash
    # every placed text contains both tuple entities
    by_id = {t.tuple_id: t for t in graph.tuples}
    for e in report.entries:
        host_text = kb_wm.get(e["placement"]["record_id"]).text
        t = by_id[e["tuple_id"]]
        assert t.entity_a in host_text and t.entity_b in host_text


def test_inject_all_direct_grows_base():
    entities = make_entities(30)
    relations = make_relations(8)
    key = OwnerKey(hashlib.sha256(b"inject-all-key-0").digest())
    graph = build_graph(key, entities, relations, tuple_count=6, p=1.0)
    kb = synth_corpus(120, entities=entities, seed=3)
    client = ideal_mock(graph)
    config = make_config(client, n_wm=2, mode="direct")
    kb_wm, report = inject_all(config, Retriever(HashEmbedder(128)), kb, graph)
    assert len(kb_wm) == len(kb) + report.successes
    assert kb_wm.watermark_text_count() == report.successes


def test_watermark_share_ratio():
    # reported corpus shares are plain ratios of texts to records
    assert watermark_share(246, 3633) == pytest.approx(0.067713, abs=5e-7)
    assert round(100 * watermark_share(246, 3633), 4) == 6.7713


def test_config_validation():
    client = MockChatClient()
    with pytest.raises(ValidationError):
        make_config(client, n_wm=0)
    with pytest.raises(ValidationError):
        make_config(client, n_wm=11)
    with pytest.raises(ValidationError):
        make_config(client, max_epochs=0)
    with pytest.raises(ValidationError):
        make_config(client, mode="sideways")


def test_interaction_loop_requires_records():
    config = make_config(MockChatClient())
    with pytest.raises(ValidationError):
        interaction_loop(config, Retriever(HashEmbedder(64)), KnowledgeBase(), TUPLE)


def test_inject_all_requires_tuples():
    config = make_config(MockChatClient())
    graph = WatermarkGraph("fp", 1.0, [], [])
    with pytest.raises(ValidationError):
        inject_all(config, Retriever(HashEmbedder(64)), host_kb(), graph)
