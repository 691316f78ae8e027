"""Plot a sweep CSV (fig4/fig5/fig6) to a PNG next to it.

Usable directly or as ``beamalign sweep ... --plot-hook "python scripts/plot_sweep.py"``.
"""
import argparse
import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

XLABEL = {"fig4": "test SNR [dB]", "fig5": "sensing steps T", "fig6": "sensing steps T"}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv", type=Path)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    series = defaultdict(list)
    with open(args.csv, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            series[row["scheme_or_variant"]].append((float(row["x_value"]), float(row["mean_gain_db"])))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, pts in series.items():
        xs, ys = zip(*sorted(pts))
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel(XLABEL.get(args.csv.stem, "x"))
    ax.set_ylabel("mean beamforming gain [dB]")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    out = args.out or args.csv.with_suffix(".png")
    fig.savefig(out, dpi=120)
    print(out)


if __name__ == "__main__":
    main()
