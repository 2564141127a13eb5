"""Result rows to CSV and a plain-text mean±stderr table."""
from __future__ import annotations

import csv
import io
from collections import OrderedDict

import numpy as np

from ..evalkit import summarize

ROW_FIELDS = [
    "variant", "system", "dataset", "cost", "repetition", "seed", "n_test",
    "total", "raw", "cost_paid", "human_fraction", "routed_algorithm", "routed_experts",
]
SUMMARY_FIELDS = ["variant", "system", "n", "mean", "stderr", "raw_mean", "human_fraction_mean", "cell"]


def fmt_cell(mean: float, stderr: float | None) -> str:
    """``423.3±5.2``; the mean alone when there is a single repetition."""
    if stderr is None or not np.isfinite(stderr):
        return f"{mean:.1f}"
    return f"{mean:.1f}±{stderr:.1f}"


def _num(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in rows:
        w.writerow([_num(r[k]) for k in ROW_FIELDS])
    return buf.getvalue()


def summarize_rows(rows: list[dict]) -> list[dict]:
    """One summary record per (variant, system), in first-seen order."""
    groups: OrderedDict[tuple[str, str], list[dict]] = OrderedDict()
    for r in rows:
        groups.setdefault((r["variant"], r["system"]), []).append(r)
    out = []
    for (variant, system), rs in groups.items():
        totals = [r["total"] for r in rs]
        if len(totals) >= 2:
            s = summarize(totals)
            mean, stderr = s.mean, s.stderr
        else:
            mean, stderr = float(totals[0]), None
        out.append({
            "variant": variant,
            "system": system,
            "n": len(rs),
            "mean": mean,
            "stderr": stderr,
            "raw_mean": float(np.mean([r["raw"] for r in rs])),
            "human_fraction_mean": float(np.mean([r["human_fraction"] for r in rs])),
            "cell": fmt_cell(mean, stderr),
        })
    return out


def summary_to_csv(summary: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for s in summary:
        w.writerow([
            s["variant"], s["system"], s["n"], f"{s['mean']:.4f}",
            "" if s["stderr"] is None else f"{s['stderr']:.4f}",
            f"{s['raw_mean']:.4f}", f"{s['human_fraction_mean']:.4f}", s["cell"],
        ])
    return buf.getvalue()


def summary_to_text(summary: list[dict]) -> str:
    """Variants as rows, systems as columns."""
    variants = list(OrderedDict.fromkeys(s["variant"] for s in summary))
    systems = list(OrderedDict.fromkeys(s["system"] for s in summary))
    cells = {(s["variant"], s["system"]): s["cell"] for s in summary}
    header = [""] + systems
    body = [[v] + [cells.get((v, s), "---") for s in systems] for v in variants]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = []
    for row in [header] + body:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))).rstrip())
    return "\n".join(lines) + "\n"


def emit_tables(rows: list[dict]) -> tuple[str, str, str]:
    """Return ``(results_csv, summary_csv, summary_text)``."""
    if not rows:
        raise ValueError("no result rows to emit")
    summary = summarize_rows(rows)
    return rows_to_csv(rows), summary_to_csv(summary), summary_to_text(summary)
