"""Operator command line: extract -> tuples -> inject -> verify -> attack -> report.

Every command writes a deterministic JSON artifact (stable key order, no
timestamps) plus a `.meta.json` sidecar carrying the creation time, so
identical configs and seeds reproduce byte-identical artifacts.

Exit codes: 0 success (for `verify`: infringement detected), 3 verification
ran but found no infringement, 2 usage or missing-input error, 1 anything
else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .attacks import (
    duplicate_filter,
    insert_knowledge,
    kg_distill,
    paraphrase_transform,
    removal_transform,
)
from .config import RunConfig, load_config
from .errors import RagmarkError, ValidationError
from .extraction import (
    ExtractedTriple,
    RankedList,
    parse_er,
    reduce_by_frequency,
    sample_records,
)
from .gateway import (
    CallLog,
    ChatClient,
    HttpChatClient,
    MockBehavior,
    MockChatClient,
    answer_with_context,
)
from .injection import InjectionConfig, inject_all
from .kb import load as load_kb, save as save_kb
from .retrieval import HashEmbedder, Retriever
from .verification import (
    InProcessSuspect,
    RemoteSuspect,
    cdpa,
    cira,
    run_verification,
)
from .watermark import OwnerKey, WatermarkGraph, build_graph

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_NOT_DETECTED = 3


def write_artifact(path: str | Path, obj: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n")
    with open(f"{path}.meta.json", "w", encoding="utf-8") as fh:
        fh.write(
            json.dumps(
                {
                    "artifact": path.name,
                    "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                    "tool_version": __version__,
                },
                indent=2,
            )
            + "\n"
        )


def read_json(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def build_backend(
    cfg: RunConfig,
    graph: WatermarkGraph | None = None,
    call_log: CallLog | None = None,
) -> ChatClient:
    """Instantiate the chat backend named by the config.

    `mock:` takes an optional behavior JSON after the colon; its
    relation_knowledge may be the literal string "from-graph" to cover the
    current watermark tuples.
    """
    descriptor = cfg.backend
    if descriptor.startswith("mock:"):
        behavior_path = descriptor[len("mock:") :]
        return MockChatClient(_load_behavior(behavior_path, graph), call_log=call_log)
    if descriptor.startswith(("http://", "https://")):
        return HttpChatClient(
            descriptor, model=cfg.model, api_key=cfg.api_key or None,
            call_log=call_log,
        )
    raise ValidationError(f"unknown backend descriptor {descriptor!r}")


def _load_behavior(path: str, graph: WatermarkGraph | None) -> MockBehavior:
    if not path:
        spec = {"leak_probability": 1.0, "relation_knowledge": "from-graph"}
    else:
        spec = read_json(path)
    knowledge = spec.get("relation_knowledge", {})
    if knowledge == "from-graph":
        pairs = (
            {(t.entity_a, t.entity_b): t.relation for t in graph.tuples}
            if graph
            else {}
        )
    else:
        pairs = {(a, b): rel for a, b, rel in knowledge}
    return MockBehavior(
        leak_probability=spec.get("leak_probability", 1.0),
        relation_knowledge=pairs,
        judge_mode=spec.get("judge_mode", "exact"),
        seed=spec.get("seed", 0),
    )


def _retriever(cfg: RunConfig) -> Retriever:
    return Retriever(HashEmbedder(cfg.dim), metric=cfg.metric)


def _load_graph(path: str) -> WatermarkGraph:
    return WatermarkGraph.from_json(read_json(path))


def _placements(path: str | None) -> dict[str, set] | None:
    if not path:
        return None
    report = read_json(path)
    out: dict[str, set] = {}
    for entry in report["entries"]:
        if entry["status"] == "ok":
            out.setdefault(entry["tuple_id"], set()).add(
                entry["placement"]["record_id"]
            )
    return out


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {
        name: getattr(args, name)
        for name in (
            "kb_path", "key_hex", "e_size", "r_size", "tuple_count", "p",
            "n_wm", "max_epochs", "k", "metric", "dim", "n", "alpha", "p0",
            "template", "seed", "sample_size", "mode", "backend", "model",
        )
        if hasattr(args, name)
    }
    return load_config(getattr(args, "config", None), overrides)


# ---------------------------------------------------------------------------
# commands


def cmd_extract(args) -> int:
    cfg = _config_from_args(args)
    kb = load_kb(cfg.kb_path)
    d = cfg.sample_size or len(kb)
    ids = sample_records(kb, d, cfg.seed)
    client = build_backend(cfg)
    stats: dict = {}
    triples = parse_er(
        client, [kb.get(i).text for i in ids], record_ids=ids, stats=stats
    )
    entities, relations = reduce_by_frequency(triples, cfg.e_size, cfg.r_size)
    observed_entities = len({t.subject for t in triples} | {t.object for t in triples})
    observed_relations = len({t.relation for t in triples})
    write_artifact(
        args.out,
        {
            "kind": "er_lists",
            "entities": entities.to_json(),
            "relations": relations.to_json(),
            "triples": [
                {"subject": t.subject, "relation": t.relation,
                 "object": t.object, "source_record": t.source_record}
                for t in triples
            ],
            "sampled_records": d,
            "skipped": stats.get("skipped", 0),
            "observed_entities": observed_entities,
            "observed_relations": observed_relations,
            "config": cfg.to_json(),
        },
    )
    print(
        f"extracted {len(triples)} triples from {d} records -> "
        f"{len(entities)} entities, {len(relations)} relations "
        f"({observed_entities}/{observed_relations} observed)"
    )
    return EXIT_OK


def _ranked_from_file(path: str, key_name: str) -> RankedList:
    """Read a ranked list from a combined extract artifact or a bare file."""
    obj = read_json(path)
    if isinstance(obj, dict) and key_name in obj:
        obj = obj[key_name]
    if not isinstance(obj, list):
        raise ValidationError(f"{path} does not hold a {key_name} list")
    return RankedList.from_json(obj)


def cmd_tuples(args) -> int:
    cfg = _config_from_args(args)
    if args.er:
        entities = _ranked_from_file(args.er, "entities")
        relations = _ranked_from_file(args.er, "relations")
    elif args.entities and args.relations:
        entities = _ranked_from_file(args.entities, "entities")
        relations = _ranked_from_file(args.relations, "relations")
    else:
        raise ValidationError("give --er, or both --entities and --relations")
    key = OwnerKey.from_hex(cfg.key_hex)
    graph = build_graph(key, entities, relations, cfg.tuple_count, cfg.p)
    payload = graph.to_json()
    payload["kind"] = "watermark_graph"
    payload["config"] = cfg.to_json()
    write_artifact(args.out, payload)
    print(
        f"generated {len(graph)} watermark tuples "
        f"(key fingerprint {graph.key_fingerprint})"
    )
    return EXIT_OK


def _call_log_for(args) -> CallLog | None:
    return CallLog() if getattr(args, "call_log", None) else None


def _save_call_log(args, log: CallLog | None) -> None:
    if log is not None:
        log.save_jsonl(args.call_log)


def cmd_inject(args) -> int:
    cfg = _config_from_args(args)
    kb = load_kb(cfg.kb_path)
    graph = _load_graph(args.tuples)
    log = _call_log_for(args)
    client = build_backend(cfg, graph, call_log=log)
    injection = InjectionConfig(
        gen_client=client,
        shadow_client=client,
        disc_client=client,
        n_wm=cfg.n_wm,
        max_epochs=cfg.max_epochs,
        mode=cfg.mode,
        k=cfg.k,
        query_template=cfg.template,
    )
    kb_wm, report = inject_all(injection, _retriever(cfg), kb, graph)
    save_kb(kb_wm, args.out_kb)
    _save_call_log(args, log)
    payload = report.to_json(kb_size=len(kb_wm))
    payload["kind"] = "injection_report"
    payload["config"] = cfg.to_json()
    write_artifact(args.out_report, payload)
    print(
        f"placed {report.successes} watermark texts "
        f"({report.failures} failures) into {len(kb_wm)} records"
    )
    return EXIT_OK


def _build_suspect(args, cfg: RunConfig, graph: WatermarkGraph):
    descriptor = args.suspect
    if descriptor.startswith(("http://", "https://")):
        return RemoteSuspect(
            HttpChatClient(descriptor, model=cfg.model, api_key=cfg.api_key or None)
        )
    if descriptor.startswith("mock:"):
        if not getattr(args, "suspect_kb", None):
            raise ValidationError("--suspect-kb is required for a mock suspect")
        behavior = _load_behavior(descriptor[len("mock:") :], graph)
        return InProcessSuspect(
            kb=load_kb(args.suspect_kb),
            retriever=_retriever(cfg),
            client=MockChatClient(behavior),
            k=cfg.k,
        )
    raise ValidationError(f"unknown suspect descriptor {descriptor!r}")


def _observed_relations(args) -> int | None:
    er_path = getattr(args, "er", None)
    if not er_path:
        return None
    return read_json(er_path).get("observed_relations")


def cmd_verify(args) -> int:
    cfg = _config_from_args(args)
    graph = _load_graph(args.tuples)
    suspect = _build_suspect(args, cfg, graph)
    log = _call_log_for(args)
    disc_client = build_backend(cfg, graph, call_log=log)
    report = run_verification(
        graph,
        suspect,
        disc_client,
        n=cfg.n,
        p0=cfg.resolved_p0(_observed_relations(args)),
        alpha=cfg.alpha,
        template=cfg.template,
        seed=cfg.seed,
        wm_records=_placements(getattr(args, "injection_report", None)),
    )
    payload = report.to_json()
    payload["kind"] = "verification"
    payload["config"] = cfg.to_json()
    write_artifact(args.out, payload)
    _save_call_log(args, log)
    wirr = "n/a" if report.wirr is None else f"{report.wirr:.2%}"
    print(
        f"hits {report.c_wm}/{report.n}, p-value {report.p_value:.3g}, "
        f"retrieval ratio {wirr} -> "
        + ("infringement detected" if report.verdict else "no infringement")
    )
    return EXIT_OK if report.verdict else EXIT_NOT_DETECTED


def _verify_point(cfg, graph, suspect, disc_client, placements, p0):
    report = run_verification(
        graph,
        suspect,
        disc_client,
        n=cfg.n,
        p0=p0,
        alpha=cfg.alpha,
        template=cfg.template,
        seed=cfg.seed,
        wm_records=placements,
    )
    return {
        "c_wm": report.c_wm,
        "wirr": report.wirr,
        "p_value": report.p_value,
        "verdict": report.verdict,
        "report": report.to_json(),
    }


def cmd_attack(args) -> int:
    cfg = _config_from_args(args)
    graph = _load_graph(args.tuples)
    kb = load_kb(cfg.kb_path)
    placements = _placements(getattr(args, "injection_report", None))
    log = _call_log_for(args)
    client = build_backend(cfg, graph, call_log=log)
    retriever = _retriever(cfg)
    p0 = cfg.resolved_p0(_observed_relations(args))
    points = []
    attack = args.attack
    last_kb = kb

    def suspect_for(base, **kwargs):
        return InProcessSuspect(base, retriever, client, k=cfg.k, **kwargs)

    def point_for(suspect):
        return _verify_point(cfg, graph, suspect, client, placements, p0)

    if attack == "insert":
        param = "inserted"
        for count in args.counts:
            attacked = insert_knowledge(kb, count, cfg.seed)
            points.append({"value": count, **point_for(suspect_for(attacked))})
            last_kb = attacked
    elif attack == "expand-k":
        param = "k"
        for k in args.k_values:
            suspect = InProcessSuspect(kb, retriever, client, k=k)
            points.append({"value": k, **point_for(suspect)})
    elif attack == "duplicate-filter":
        param = "filter"
        plain = suspect_for(kb)
        filtered = suspect_for(
            kb, candidate_width=50, record_filter=duplicate_filter
        )
        for value, suspect in ((0, plain), (1, filtered)):
            points.append({"value": value, **point_for(suspect)})
    elif attack == "paraphrase":
        param = "paraphrased"
        suspect = suspect_for(kb, context_transform=paraphrase_transform(client))
        points.append({"value": 1, **point_for(suspect)})
    elif attack == "remove-unrelated":
        param = "filtered"
        suspect = suspect_for(kb, context_transform=removal_transform(client))
        points.append({"value": 1, **point_for(suspect)})
    elif attack == "distill":
        param = "rate"
        er = read_json(args.er)
        triples = [
            ExtractedTriple(t["subject"], t["relation"], t["object"],
                            t["source_record"])
            for t in er["triples"]
        ]
        for rate in args.rates:
            attacked = kg_distill(kb, triples, rate)
            points.append({"value": rate, **point_for(suspect_for(attacked))})
            last_kb = attacked
    else:
        raise ValidationError(f"unknown attack {attack!r}")

    if getattr(args, "out_kb", None):
        save_kb(last_kb, args.out_kb)
    write_artifact(
        args.out,
        {
            "kind": "attack_sweep",
            "attack": attack,
            "param": param,
            "points": points,
            "config": cfg.to_json(),
        },
    )
    _save_call_log(args, log)
    for pt in points:
        print(f"{param}={pt['value']}: hits {pt['c_wm']}, p {pt['p_value']:.3g}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    cfg = _config_from_args(args)
    clean_kb = load_kb(args.clean_kb)
    wm_kb = load_kb(args.wm_kb)
    with open(args.questions, "r", encoding="utf-8") as fh:
        questions = [line.strip() for line in fh if line.strip()]
    if not questions:
        raise ValidationError("questions file is empty")
    client = build_backend(cfg)
    retriever = _retriever(cfg)
    clean_ids, wm_ids, clean_answers, wm_answers = [], [], [], []
    for q in questions:
        c_hits = retriever.top_k(clean_kb, q, cfg.k)
        w_hits = retriever.top_k(wm_kb, q, cfg.k)
        clean_ids.append([rid for rid, _ in c_hits])
        wm_ids.append([rid for rid, _ in w_hits])
        clean_answers.append(
            answer_with_context(client, q, [clean_kb.get(r).text for r in clean_ids[-1]])
        )
        wm_answers.append(
            answer_with_context(client, q, [wm_kb.get(r).text for r in wm_ids[-1]])
        )
    stats: dict = {}
    cdpa_value = cdpa(clean_answers, wm_answers, client, stats=stats)
    cira_value = cira(clean_ids, wm_ids)
    write_artifact(
        args.out,
        {
            "kind": "metrics",
            "cdpa": cdpa_value,
            "cira": cira_value,
            "questions": len(questions),
            "indeterminate": stats.get("indeterminate", 0),
            "config": cfg.to_json(),
        },
    )
    print(f"CDPA {cdpa_value:.2%}, CIRA {cira_value:.2%} over {len(questions)} questions")
    return EXIT_OK


def cmd_report(args) -> int:
    from .reporting import render_artifact

    written = []
    for artifact in args.artifacts:
        written.extend(render_artifact(artifact, args.outdir))
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _int_list(raw: str) -> list[int]:
    return [int(v) for v in raw.split(",") if v]


def _float_list(raw: str) -> list[float]:
    return [float(v) for v in raw.split(",") if v]


def _add_common(parser, *names):
    flags = {
        "config": lambda p: p.add_argument("--config", help="TOML config file"),
        "kb": lambda p: p.add_argument("--kb", dest="kb_path", help="knowledge base JSONL"),
        "backend": lambda p: p.add_argument(
            "--backend", help="mock:[behavior.json] or http(s)://chat-endpoint"
        ),
        "seed": lambda p: p.add_argument("--seed", type=int),
        "k": lambda p: p.add_argument("--k", type=int),
        "metric": lambda p: p.add_argument(
            "--metric", choices=("cosine", "inner_product", "euclidean")
        ),
        "dim": lambda p: p.add_argument("--dim", type=int),
        "template": lambda p: p.add_argument("--template", type=int, choices=(1, 2, 3)),
        "verify": lambda p: (
            p.add_argument("--n", type=int),
            p.add_argument("--alpha", type=float),
            p.add_argument("--p0", type=float),
            p.add_argument("--r-size", dest="r_size", type=int),
        ),
    }
    for name in names:
        flags[name](parser)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragmark",
        description="Keyed knowledge watermarks for RAG knowledge bases.",
    )
    parser.add_argument("--version", action="version", version=f"ragmark {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="harvest entity/relation lists from a base")
    _add_common(p, "config", "kb", "backend", "seed")
    p.add_argument("--sample-size", dest="sample_size", type=int)
    p.add_argument("--e-size", dest="e_size", type=int)
    p.add_argument("--r-size", dest="r_size", type=int)
    p.add_argument("--out", default="er.json")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("tuples", help="derive keyed watermark tuples")
    _add_common(p, "config")
    p.add_argument("--key", dest="key_hex", help="owner key hex or ${ENV_NAME}")
    p.add_argument("--er", help="combined extract artifact")
    p.add_argument("--entities", help="entity list file (alternative to --er)")
    p.add_argument("--relations", help="relation list file (alternative to --er)")
    p.add_argument("--tuple-count", dest="tuple_count", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--out", default="tuples.json")
    p.set_defaults(func=cmd_tuples)

    p = sub.add_parser("inject", help="place watermark texts into a base")
    _add_common(p, "config", "kb", "backend", "k", "metric", "dim", "template")
    p.add_argument("--tuples", required=True)
    p.add_argument("--mode", choices=("concat", "direct"))
    p.add_argument("--n-wm", dest="n_wm", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--out-kb", default="kb_wm.jsonl")
    p.add_argument("--out-report", default="injection_report.json")
    p.add_argument("--call-log", dest="call_log", help="write exchanges as JSONL")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("verify", help="probe a suspect system for the watermark")
    _add_common(p, "config", "backend", "seed", "k", "metric", "dim", "template", "verify")
    p.add_argument("--tuples", required=True)
    p.add_argument("--suspect", required=True, help="mock:[behavior.json] or http(s) URL")
    p.add_argument("--suspect-kb", dest="suspect_kb", help="base for a mock suspect")
    p.add_argument("--injection-report", dest="injection_report")
    p.add_argument("--er", help="extract artifact; derives p0 from the observed "
                               "relation vocabulary when --p0 is not given")
    p.add_argument("--call-log", dest="call_log", help="write exchanges as JSONL")
    p.add_argument("--out", default="verification.json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("attack", help="run an attack sweep and re-verify")
    _add_common(p, "config", "kb", "backend", "seed", "k", "metric", "dim", "template", "verify")
    p.add_argument(
        "--attack",
        required=True,
        choices=("insert", "expand-k", "duplicate-filter", "paraphrase",
                 "remove-unrelated", "distill"),
    )
    p.add_argument("--tuples", required=True)
    p.add_argument("--injection-report", dest="injection_report")
    p.add_argument("--counts", type=_int_list, default=[0, 50, 500])
    p.add_argument("--call-log", dest="call_log", help="write exchanges as JSONL")
    p.add_argument("--k-values", dest="k_values", type=_int_list, default=[1, 3, 5])
    p.add_argument("--rates", type=_float_list,
                   default=[0.05, 0.1, 0.2, 0.4, 0.8, 1.0])
    p.add_argument("--er", help="extract artifact (distill attack)")
    p.add_argument("--out", default="attack.json")
    p.add_argument("--out-kb", dest="out_kb")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("metrics", help="fidelity of the watermarked base")
    _add_common(p, "config", "backend", "k", "metric", "dim")
    p.add_argument("--clean-kb", dest="clean_kb", required=True)
    p.add_argument("--wm-kb", dest="wm_kb", required=True)
    p.add_argument("--questions", required=True, help="one question per line")
    p.add_argument("--out", default="metrics.json")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("report", help="render artifacts to CSV and figures")
    p.add_argument("artifacts", nargs="+")
    p.add_argument("--outdir", default="report")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RagmarkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
