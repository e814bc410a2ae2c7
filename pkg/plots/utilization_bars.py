#!/usr/bin/env python3
"""Mean-memory-utilization bars per scheduler, annotated vs the first."""
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
    utils = [100.0 * float(r["mean_utilization"]) for r in rows]
    fig, ax = plt.subplots()
    bars = ax.bar(kinds, utils)
    annotate_bars(ax, bars, baseline_deltas(utils, 0))
    ax.set_xlabel("scheduler")
    ax.set_ylabel("mean GPU memory in use (%)")
    ax.set_ylim(0, 100)
    ax.set_title("Memory utilization per scheduler")
    save(fig, args.out)


if __name__ == "__main__":
    sys.exit(run_script(__doc__, add_args, render))
