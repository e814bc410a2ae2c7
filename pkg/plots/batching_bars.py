#!/usr/bin/env python3
"""Two-bar ablation: migrations with and without operation batching."""
import sys

import matplotlib.pyplot as plt

from common import InputError, annotate_bars, load_summary, run_script, save


def add_args(parser):
    parser.add_argument("--batched", required=True,
                        help="summary.json of the batched run")
    parser.add_argument("--unbatched", required=True,
                        help="summary.json of the unbatched run")


def render(args):
    batched = load_summary(args.batched)
    unbatched = load_summary(args.unbatched)
    if not batched["batching"] or unbatched["batching"]:
        raise InputError("summaries do not form a batched/unbatched pair")
    values = [int(unbatched["total_migrations"]),
              int(batched["total_migrations"])]
    fig, ax = plt.subplots(figsize=(4.0, 3.6))
    bars = ax.bar(["unbatched", "batched"], values)
    labels = [str(values[0]), str(values[1])]
    if values[0]:
        saved = 100.0 * (values[0] - values[1]) / values[0]
        labels[1] = f"{values[1]} (-{saved:.0f}%)"
    annotate_bars(ax, bars, labels)
    ax.set_ylabel("migrations over the run")
    ax.set_title("Effect of operation batching")
    save(fig, args.out)


if __name__ == "__main__":
    sys.exit(run_script(__doc__, add_args, render))
