"""Report rendering: JSON, delimited tables, and figures.

Every writer returns the paths it produced. JSON is dumped with sorted
keys and a trailing newline so identical results serialize to identical
bytes. Figures render through the Agg backend and never open a window.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["write_json", "write_delimited", "eval_report", "bench_report"]


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def write_delimited(path: str | Path, rows: list[dict], fieldnames: list[str]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    return path


def eval_report(out_dir: str | Path, result: dict) -> list[Path]:
    """Write eval.json, episodes.csv, and the per-episode figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_json(out / "eval.json", result)]

    rows = [
        {**ep, "categories": "|".join(str(c) for c in ep["categories"])}
        for ep in result["episodes"]
    ]
    paths.append(
        write_delimited(
            out / "episodes.csv",
            rows,
            ["index", "categories", "query_id", "tp", "fp", "fn",
             "precision", "recall", "f1"],
        )
    )

    f1s = [ep["f1"] for ep in result["episodes"]]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(f1s, bins=np.linspace(0, 1, 21), color="#4878cf", edgecolor="white")
    ax.axvline(result["micro"]["f1"], color="#d1495b", linestyle="--",
               label=f"micro F1 = {result['micro']['f1']:.3f}")
    ax.set_xlabel("episode F1")
    ax.set_ylabel("episodes")
    ax.legend(loc="upper left", frameon=False)
    fig.tight_layout()
    f1_path = out / "episode_f1.png"
    fig.savefig(f1_path, dpi=120)
    plt.close(fig)
    paths.append(f1_path)

    fig, ax = plt.subplots(figsize=(4.2, 4))
    ps = [ep["precision"] for ep in result["episodes"]]
    rs = [ep["recall"] for ep in result["episodes"]]
    ax.scatter(rs, ps, s=18, alpha=0.6, color="#4878cf")
    ax.set_xlim(-0.05, 1.05)
    ax.set_ylim(-0.05, 1.05)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    fig.tight_layout()
    pr_path = out / "precision_recall.png"
    fig.savefig(pr_path, dpi=120)
    plt.close(fig)
    paths.append(pr_path)
    return paths


def bench_report(out_dir: str | Path, result: dict) -> list[Path]:
    """Write bench.json, scenarios.csv, and the ops/timing figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_json(out / "bench.json", result)]

    scenarios = result.get("kernels", {}).get("scenarios", [])
    rows = [
        {
            "m_query": sc["m_query"],
            "support_total": sum(sc["support_sizes"]),
            "top_e": sc["top_e"],
            "ops_exact": sc["ops"]["exact"],
            "ops_accel": sc["ops"]["accel"],
            "seconds_exact": sc["seconds"]["exact"],
            "seconds_accel": sc["seconds"]["accel"],
            "speedup": sc["seconds"]["speedup"],
        }
        for sc in scenarios
    ]
    paths.append(
        write_delimited(
            out / "scenarios.csv",
            rows,
            ["m_query", "support_total", "top_e", "ops_exact", "ops_accel",
             "seconds_exact", "seconds_accel", "speedup"],
        )
    )

    if scenarios:
        ms = [sc["m_query"] for sc in scenarios]
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(8.5, 3.4))
        ax0.plot(ms, [sc["ops"]["exact"] for sc in scenarios], "o-",
                 color="#d1495b", label="exhaustive")
        ax0.plot(ms, [sc["ops"]["accel"] for sc in scenarios], "s-",
                 color="#4878cf", label="accelerated")
        ax0.set_yscale("log")
        ax0.set_xlabel("query length")
        ax0.set_ylabel("pair sums")
        ax0.legend(frameon=False)
        ax1.plot(ms, [sc["seconds"]["speedup"] for sc in scenarios], "d-",
                 color="#3b7a57")
        ax1.axhline(1.0, color="gray", linewidth=0.8)
        ax1.set_xlabel("query length")
        ax1.set_ylabel("speedup (x)")
        fig.tight_layout()
        ops_path = out / "kernel_scaling.png"
        fig.savefig(ops_path, dpi=120)
        plt.close(fig)
        paths.append(ops_path)
    return paths
