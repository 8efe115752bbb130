"""Accuracy-vs-data summaries as CSV, text tables and a standalone SVG chart."""

from __future__ import annotations

import csv
import io
import math
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CSV_COLUMNS = ("mode", "n_disambig", "mean_acc", "std_acc", "n_seeds")
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def summarize(records: Iterable) -> list[dict]:
    """Mean and sample std of test accuracy per (mode, size) over ok trials."""
    groups: "OrderedDict[tuple[str, int], list[float]]" = OrderedDict()
    for r in records:
        if getattr(r, "status", "ok") != "ok" or r.test_acc is None:
            continue
        groups.setdefault((r.mode, r.n_disambig), []).append(float(r.test_acc))
    rows = []
    for (mode, n), accs in sorted(groups.items(), key=lambda kv: (_mode_order(kv[0][0]), kv[0][1])):
        a = np.asarray(accs)
        rows.append({"mode": mode, "n_disambig": n, "mean_acc": float(a.mean()),
                     "std_acc": float(a.std(ddof=1)) if a.size > 1 else 0.0,
                     "n_seeds": int(a.size)})
    return rows


_ORDER = ("induction", "induction-trainable", "full-transfer", "random-subnet",
          "complement-subnet", "scratch")


def _mode_order(mode: str) -> int:
    return _ORDER.index(mode) if mode in _ORDER else len(_ORDER)


def curves(rows: Sequence[dict]) -> "OrderedDict[str, list[tuple[int, float, float]]]":
    out: OrderedDict[str, list] = OrderedDict()
    for r in rows:
        out.setdefault(r["mode"], []).append((r["n_disambig"], r["mean_acc"], r["std_acc"]))
    return out


def to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "mean_acc": f"{r['mean_acc']:.6f}", "std_acc": f"{r['std_acc']:.6f}"})
    return buf.getvalue()


def table(rows: Sequence[dict]) -> str:
    """Mode x size grid of mean accuracy (percent)."""
    sizes = sorted({r["n_disambig"] for r in rows})
    by = {(r["mode"], r["n_disambig"]): r for r in rows}
    modes = list(curves(rows))
    width = max([len(m) for m in modes] + [4])
    head = "mode".ljust(width) + "".join(f"{n:>9}" for n in sizes)
    lines = [head, "-" * len(head)]
    for m in modes:
        cells = []
        for n in sizes:
            r = by.get((m, n))
            cells.append(f"{100 * r['mean_acc']:>8.1f}%" if r else f"{'-':>9}")
        lines.append(m.ljust(width) + "".join(cells))
    return "\n".join(lines)


def _esc(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def svg_chart(rows: Sequence[dict], title: str = "Test accuracy vs disambiguation samples") -> str:
    """Line chart with a log-scaled x axis; a size of 0 sits one decade left
    of the smallest positive size, behind an axis break."""
    series = curves(rows)
    if not series:
        raise ValueError("nothing to plot")
    sizes = sorted({r["n_disambig"] for r in rows})
    positive = [n for n in sizes if n > 0]
    lo = math.floor(math.log10(min(positive))) if positive else 0
    hi = math.ceil(math.log10(max(positive))) if positive else 1
    if hi == lo:
        hi = lo + 1
    zero_pos = lo - 1 if 0 in sizes else lo

    def xval(n):
        return zero_pos if n == 0 else math.log10(n)

    W, H = 760, 460
    left, right, top, bottom = 70, 190, 50, 60
    pw, ph = W - left - right, H - top - bottom
    x0, x1 = zero_pos, hi

    def px(n):
        return left + (xval(n) - x0) / (x1 - x0) * pw

    def py(acc):
        return top + (1.0 - acc) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="Helvetica, Arial, sans-serif">',
           f'<rect width="{W}" height="{H}" fill="#ffffff"/>',
           f'<text x="{left + pw / 2:.1f}" y="26" text-anchor="middle" font-size="16">{_esc(title)}</text>']
    for k in range(6):
        acc = k / 5
        y = py(acc)
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + pw}" y2="{y:.1f}" stroke="#e5e5e5"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="11">{acc:.1f}</text>')
    ticks = ([0] if 0 in sizes else []) + [10 ** e for e in range(lo, hi + 1)]
    for n in ticks:
        x = px(n)
        label = "0" if n == 0 else f"10^{int(round(math.log10(n)))}"
        out.append(f'<line x1="{x:.1f}" y1="{top}" x2="{x:.1f}" y2="{top + ph}" stroke="#f0f0f0"/>')
        out.append(f'<text x="{x:.1f}" y="{top + ph + 18}" text-anchor="middle" font-size="11">{label}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    if 0 in sizes:
        xb = (px(0) + left + (lo - x0) / (x1 - x0) * pw) / 2
        out.append(f'<path d="M{xb - 4:.1f},{top + ph + 5} l4,-10 M{xb:.1f},{top + ph + 5} l4,-10" stroke="#333"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{H - 18}" text-anchor="middle" font-size="12">'
               f'disambiguation samples (log scale)</text>')
    out.append(f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 18 {top + ph / 2:.1f})">test accuracy</text>')
    for i, (mode, pts) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        pts = sorted(pts)
        path = " ".join(f"{'M' if j == 0 else 'L'}{px(n):.1f},{py(m):.1f}" for j, (n, m, _) in enumerate(pts))
        out.append(f'<path d="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for n, m, s in pts:
            if s > 0:
                out.append(f'<line x1="{px(n):.1f}" y1="{py(min(1, m + s)):.1f}" x2="{px(n):.1f}" '
                           f'y2="{py(max(0, m - s)):.1f}" stroke="{color}" stroke-opacity="0.5"/>')
            out.append(f'<circle cx="{px(n):.1f}" cy="{py(m):.1f}" r="3" fill="{color}"/>')
        ly = top + 14 + 20 * i
        out.append(f'<line x1="{left + pw + 16}" y1="{ly - 4}" x2="{left + pw + 40}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 46}" y="{ly}" font-size="12">{_esc(mode)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_report(records, out_dir: str | Path, stem: str = "summary") -> dict:
    rows = summarize(records)
    if not rows:
        raise ValueError("no successful records to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.svg"
    csv_path.write_text(to_csv(rows))
    svg_path.write_text(svg_chart(rows))
    return {"rows": rows, "csv": csv_path, "svg": svg_path, "table": table(rows)}
