#!/usr/bin/env python3
"""Peak-GPU-count bars, one per scheduler, annotated vs the first row."""
import sys

import matplotlib.pyplot as plt

from common import annotate_bars, baseline_deltas, load_comparison, \
    run_script, save


def add_args(parser):
    parser.add_argument("--comparison", required=True,
                        help="comparison.json from a compare run")


def render(args):
    rows = load_comparison(args.comparison)
    kinds = [str(r["scheduler"]) for r in rows]
    peaks = [int(r["peak_gpus"]) for r in rows]
    fig, ax = plt.subplots()
    bars = ax.bar(kinds, peaks)
    annotate_bars(ax, bars, baseline_deltas(peaks, 0))
    ax.set_xlabel("scheduler")
    ax.set_ylabel("peak GPUs")
    ax.set_title("GPUs needed per scheduler")
    save(fig, args.out)


if __name__ == "__main__":
    sys.exit(run_script(__doc__, add_args, render))
