"""Plot running-average reward and constraint curves from an aggregate.csv.

usage: python3 scripts/plot_curves.py out/queue/aggregate.csv [more aggregate.csv ...] -o curves.png
"""
import argparse
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return {k: [float(r[k]) for r in rows] for k in rows[0]}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("aggregates", nargs="+")
    parser.add_argument("-o", "--output", default="curves.png")
    args = parser.parse_args()

    data = [(p, load(p)) for p in args.aggregates]
    n_costs = sum(1 for k in data[0][1] if k.startswith("avg_cost_") and k.endswith("_mean"))
    columns = ["avg_reward"] + [f"avg_cost_{i}" for i in range(1, n_costs + 1)]
    fig, axes = plt.subplots(1, len(columns), figsize=(5 * len(columns), 4), squeeze=False)
    axes = axes[0]
    for ax, col in zip(axes, columns):
        for label, d in data:
            t, mean, std = d["t"], d[f"{col}_mean"], d[f"{col}_std"]
            ax.plot(t, mean, label=label)
            ax.fill_between(t, [m - s for m, s in zip(mean, std)], [m + s for m, s in zip(mean, std)], alpha=0.2)
        if col != "avg_reward":
            ax.axhline(0.0, color="k", lw=0.8, ls="--")
        ax.set_xlabel("t")
        ax.set_title(col)
    axes[0].legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)


if __name__ == "__main__":
    main()
