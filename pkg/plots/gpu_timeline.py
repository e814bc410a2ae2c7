#!/usr/bin/env python3
"""Active-GPU count over time: one line per scheduler metrics CSV.

Each input is a ``metrics_<scheduler>.csv`` written by the compare
subcommand; the legend label is taken from the file name.
"""
import os
import re
import sys

import matplotlib.pyplot as plt

from common import InputError, load_metrics, run_script, save


def add_args(parser):
    parser.add_argument("--metrics", required=True, nargs="+",
                        help="one or more metrics CSV files")


def label_for(path: str) -> str:
    stem = os.path.splitext(os.path.basename(path))[0]
    match = re.match(r"metrics_(.+)", stem)
    return match.group(1) if match else stem


def render(args):
    fig, ax = plt.subplots()
    for path in args.metrics:
        columns = load_metrics(path)
        if not columns["slot"]:
            raise InputError(f"{path!r} contains no samples")
        ax.plot(columns["slot"], columns["active_gpus"], label=label_for(path))
    ax.set_xlabel("slot")
    ax.set_ylabel("active GPUs")
    ax.set_title("GPU count over time")
    ax.legend()
    save(fig, args.out)


if __name__ == "__main__":
    sys.exit(run_script(__doc__, add_args, render))
