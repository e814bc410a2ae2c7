"""Shared plumbing for the figure scripts.

Every script reads only the simulator's CSV/JSON artifacts, applies the
checked-in style file, and writes one image deterministically, so a rerun
over the same inputs is byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

STYLE_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                          "style.mplstyle")

METRICS_COLUMNS = ["slot", "active_gpus", "migrations", "deferred",
                   "forced", "used_bytes", "capacity_bytes"]


class InputError(Exception):
    """An input file does not match the expected schema."""


def apply_style() -> None:
    plt.style.use(STYLE_PATH)


def load_comparison(path: str) -> List[Dict[str, object]]:
    """Rows of a ``compare`` run: one dict per scheduler."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read comparison table {path!r}: {exc}")
    rows = doc.get("rows")
    if not isinstance(rows, list) or not rows:
        raise InputError(f"{path!r} has no comparison rows")
    for row in rows:
        for key in ("scheduler", "peak_gpus", "total_migrations",
                    "mean_utilization"):
            if key not in row:
                raise InputError(f"{path!r} row missing {key!r}")
    return rows


def load_summary(path: str) -> Dict[str, object]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read summary {path!r}: {exc}")
    for key in ("scheduler", "batching", "total_migrations"):
        if key not in doc:
            raise InputError(f"summary {path!r} missing {key!r}")
    return doc


def load_metrics(path: str) -> Dict[str, List[int]]:
    """Columns of a metrics CSV, keyed by header name."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != METRICS_COLUMNS:
                raise InputError(
                    f"{path!r} header {header!r} != {METRICS_COLUMNS!r}")
            columns: Dict[str, List[int]] = {c: [] for c in METRICS_COLUMNS}
            for line, row in enumerate(reader, start=2):
                if len(row) != len(METRICS_COLUMNS):
                    raise InputError(f"{path!r} line {line}: bad row {row!r}")
                for col, value in zip(METRICS_COLUMNS, row):
                    columns[col].append(int(value))
    except OSError as exc:
        raise InputError(f"cannot read metrics {path!r}: {exc}")
    except ValueError as exc:
        raise InputError(f"non-integer cell in {path!r}: {exc}")
    return columns


def annotate_bars(ax, bars, labels) -> None:
    """Write one short label above each bar."""
    for bar, label in zip(bars, labels):
        if label is None:
            continue
        ax.annotate(label, (bar.get_x() + bar.get_width() / 2,
                            bar.get_height()),
                    ha="center", va="bottom", fontsize=8)


def baseline_deltas(values, base_index):
    """Percent delta of each bar vs the reference bar, for annotation."""
    base = values[base_index]
    labels = []
    for i, value in enumerate(values):
        if i == base_index or not base:
            labels.append(None)
            continue
        labels.append(f"{100.0 * (value - base) / base:+.0f}%")
    return labels


def save(fig, out_path: str) -> None:
    out_dir = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(out_dir, exist_ok=True)
    fig.savefig(out_path)
    plt.close(fig)


def run_script(description: str, add_args, render) -> int:
    """Entry-point boilerplate: parse args, render, map errors to exit 1."""
    parser = argparse.ArgumentParser(description=description)
    add_args(parser)
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args()
    try:
        apply_style()
        render(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0
