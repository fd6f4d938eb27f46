"""Result aggregation, the completion-rate table, and optional bar-chart figures."""
from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

SPLITS = ("seen", "unseen")


def aggregate(episodes: Iterable[Mapping], row_order: Sequence[str]) -> list[dict]:
    """Per (config row, split): episodes, successes, completion percent, mean steps, per-task counts."""
    buckets: dict[tuple[str, str], list[Mapping]] = defaultdict(list)
    for ep in episodes:
        buckets[(ep["config"], ep["split"])].append(ep)
    rows = []
    for label in row_order:
        splits = {}
        for split in SPLITS:
            eps = buckets.get((label, split))
            if not eps:
                continue
            n = len(eps)
            ok = sum(1 for e in eps if e["success"])
            by_task: dict[str, list[int]] = {}
            for e in eps:
                t = by_task.setdefault(e["task_type"], [0, 0])
                t[0] += int(e["success"])
                t[1] += 1
            splits[split] = {
                "episodes": n,
                "successes": ok,
                "completion": round(100.0 * ok / n, 4),
                "mean_steps": round(sum(e["steps_taken"] for e in eps) / n, 4),
                "by_task": {k: {"successes": v[0], "episodes": v[1]} for k, v in sorted(by_task.items())},
            }
        rows.append({"config": label, "splits": splits})
    return rows


def format_table(rows: Sequence[Mapping]) -> str:
    """Aligned text table: completion percent and mean steps per split."""
    splits = [s for s in SPLITS if any(s in r["splits"] for r in rows)]
    header = ["config"] + [f"{s} %" for s in splits] + [f"{s} steps" for s in splits]
    body = []
    for r in rows:
        line = [r["config"]]
        for s in splits:
            st = r["splits"].get(s)
            line.append(f"{st['completion']:.1f} ({st['successes']}/{st['episodes']})" if st else "-")
        for s in splits:
            st = r["splits"].get(s)
            line.append(f"{st['mean_steps']:.2f}" if st else "-")
        body.append(line)
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(b) for b in body]
    return "\n".join(lines)


def write_json(path: str | Path, payload: Mapping) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def plot_results(rows: Sequence[Mapping], out_dir: str | Path) -> list[Path]:
    """Grouped bar charts of completion rate and mean steps; returns the written PNG paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = [r["config"] for r in rows]
    splits = [s for s in SPLITS if any(s in r["splits"] for r in rows)]
    x = np.arange(len(labels))
    width = 0.8 / max(1, len(splits))
    written = []
    for key, ylabel, fname in (
        ("completion", "completion rate (%)", "completion.png"),
        ("mean_steps", "mean steps", "mean_steps.png"),
    ):
        fig, ax = plt.subplots(figsize=(1.6 + 1.3 * len(labels), 3.6))
        for k, split in enumerate(splits):
            vals = [r["splits"].get(split, {}).get(key, 0.0) for r in rows]
            bars = ax.bar(x + (k - (len(splits) - 1) / 2) * width, vals, width, label=split)
            ax.bar_label(bars, fmt="%.1f", fontsize=8)
        ax.set_xticks(x, labels, rotation=15)
        ax.set_ylabel(ylabel)
        if key == "completion":
            ax.set_ylim(0, 105)
        ax.legend(frameon=False)
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)
        written.append(path)
    return written
