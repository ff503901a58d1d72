"""Render verification, metrics, and attack-sweep artifacts to CSV and PNG.

Every renderer writes a delimited table next to its figure so results can be
consumed by both humans and scripts.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

FIG_SIZE = (6.4, 3.6)
FIG_DPI = 150


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _new_axes(title: str):
    fig, ax = plt.subplots(figsize=FIG_SIZE, dpi=FIG_DPI)
    ax.set_title(title)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return fig, ax


def render_verification(artifact: dict, outdir: Path, stem: str) -> list[Path]:
    rows = [
        [q["tuple_id"], q["question"], q["hit"], q["retrieved_watermark"]]
        for q in artifact["per_query"]
    ]
    csv_path = outdir / f"{stem}.csv"
    _write_csv(csv_path, ["tuple_id", "question", "hit", "retrieved_watermark"], rows)

    fig, ax = _new_axes("Watermark verification")
    labels = ["hits", "misses"]
    counts = [artifact["c_wm"], artifact["n"] - artifact["c_wm"]]
    ax.bar(labels, counts, color=["#2a6f97", "#bbbbbb"])
    ax.set_ylabel("queries")
    verdict = "infringement detected" if artifact["verdict"] else "no infringement"
    ax.text(
        0.98,
        0.95,
        f"p = {artifact['p_value']:.3g}\n{verdict}",
        transform=ax.transAxes,
        ha="right",
        va="top",
    )
    fig_path = outdir / f"{stem}.png"
    fig.tight_layout()
    fig.savefig(fig_path)
    plt.close(fig)
    return [csv_path, fig_path]


def render_metrics(artifact: dict, outdir: Path, stem: str) -> list[Path]:
    csv_path = outdir / f"{stem}.csv"
    _write_csv(
        csv_path,
        ["metric", "value"],
        [["cdpa", artifact["cdpa"]], ["cira", artifact["cira"]]],
    )
    fig, ax = _new_axes("Fidelity against the clean base")
    ax.bar(["CDPA", "CIRA"], [artifact["cdpa"], artifact["cira"]], color="#2a6f97")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("alignment")
    fig_path = outdir / f"{stem}.png"
    fig.tight_layout()
    fig.savefig(fig_path)
    plt.close(fig)
    return [csv_path, fig_path]


def render_attack_sweep(artifact: dict, outdir: Path, stem: str) -> list[Path]:
    param = artifact["param"]
    points = artifact["points"]
    rows = [
        [pt["value"], pt["c_wm"], pt["wirr"], pt["p_value"], pt["verdict"]]
        for pt in points
    ]
    csv_path = outdir / f"{stem}.csv"
    _write_csv(csv_path, [param, "c_wm", "wirr", "p_value", "verdict"], rows)

    fig, ax = _new_axes(f"{artifact['attack']} attack")
    xs = [pt["value"] for pt in points]
    ax.plot(xs, [pt["c_wm"] for pt in points], "o-", label="hit count", color="#2a6f97")
    ax.set_xlabel(param)
    ax.set_ylabel("hit count")
    if any(pt["wirr"] is not None for pt in points):
        twin = ax.twinx()
        twin.plot(
            xs,
            [pt["wirr"] for pt in points],
            "s--",
            label="retrieval ratio",
            color="#c44536",
        )
        twin.set_ylabel("retrieval ratio")
        twin.set_ylim(-0.05, 1.05)
    fig_path = outdir / f"{stem}.png"
    fig.tight_layout()
    fig.savefig(fig_path)
    plt.close(fig)
    return [csv_path, fig_path]


_RENDERERS = {
    "verification": render_verification,
    "metrics": render_metrics,
    "attack_sweep": render_attack_sweep,
}


def render_artifact(path: str | Path, outdir: str | Path) -> list[Path]:
    """Dispatch on the artifact's `kind` field and render it."""
    path = Path(path)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(path, "r", encoding="utf-8") as fh:
        artifact = json.load(fh)
    kind = artifact.get("kind")
    renderer = _RENDERERS.get(kind)
    if renderer is None:
        raise ValueError(f"don't know how to render artifact kind {kind!r}")
    return renderer(artifact, outdir, path.stem)
