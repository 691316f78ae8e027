"""Polar plots of the BS and UE beampatterns written by ``beamalign beampattern``."""
import argparse
import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv", type=Path)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    pats = defaultdict(lambda: ([], []))
    with open(args.csv, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            phi, gain = pats[(row["side"], int(row["t"]))]
            phi.append(float(row["phi"]))
            gain.append(float(row["gain"]))
    steps = sorted({t for _, t in pats})
    fig, axes = plt.subplots(2, len(steps), subplot_kw={"projection": "polar"},
                             figsize=(1.8 * len(steps), 4), squeeze=False)
    for r, side in enumerate(("bs", "ue")):
        for c, t in enumerate(steps):
            ax = axes[r][c]
            phi, gain = pats[(side, t)]
            ax.plot(phi, gain, lw=1)
            ax.set_thetamin(-90)
            ax.set_thetamax(90)
            ax.set_xticklabels([])
            ax.set_yticklabels([])
            ax.set_title(f"{side} {'final' if t == steps[-1] else f't={t}'}", fontsize=8)
    fig.tight_layout()
    out = args.out or args.csv.with_suffix(".png")
    fig.savefig(out, dpi=120)
    print(out)


if __name__ == "__main__":
    main()
