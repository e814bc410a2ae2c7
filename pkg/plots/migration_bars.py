#!/usr/bin/env python3
"""Total-migration bars, one per scheduler, from a comparison table."""
import sys

import matplotlib.pyplot as plt

from common import annotate_bars, load_comparison, run_script, save


def add_args(parser):
    parser.add_argument("--comparison", required=True,
                        help="comparison.json from a compare run")


def render(args):
    rows = load_comparison(args.comparison)
    kinds = [str(r["scheduler"]) for r in rows]
    totals = [int(r["total_migrations"]) for r in rows]
    fig, ax = plt.subplots()
    bars = ax.bar(kinds, totals)
    annotate_bars(ax, bars, [str(t) for t in totals])
    ax.set_xlabel("scheduler")
    ax.set_ylabel("migrations over the run")
    ax.set_title("Migration volume per scheduler")
    save(fig, args.out)


if __name__ == "__main__":
    sys.exit(run_script(__doc__, add_args, render))
