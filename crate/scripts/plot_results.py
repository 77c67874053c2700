#!/usr/bin/env python3
"""Plot pipeline report CSVs.

Reads only the CSV files written by `segre-cpd rating-pipeline` and
`segre-cpd mask-pipeline`; all plotting stays out of the core tool.

Usage:
    plot_results.py rating  OUT_DIR   # rmse_by_rank.csv -> rmse_by_rank.png
    plot_results.py mask    OUT_DIR   # relerr_by_rank.csv, phi_sweep.csv -> PNGs
    plot_results.py factors FIT_DIR   # factor_mode*.csv -> factors.png
"""

import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        sys.exit(f"{path}: no data rows")
    return rows


def plot_rating(out_dir: Path):
    rows = read_csv(out_dir / "rmse_by_rank.csv")
    ranks = [int(r["rank"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in rows[0]:
        if key.startswith("val_rmse_rule"):
            ax.plot(ranks, [float(r[key]) for r in rows], marker="o",
                    label=key.replace("val_rmse_", ""))
    ax.set_xlabel("rank")
    ax.set_ylabel("RMSE (validation split)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / "rmse_by_rank.png", dpi=150)
    print(out_dir / "rmse_by_rank.png")


def plot_mask(out_dir: Path):
    rows = read_csv(out_dir / "relerr_by_rank.csv")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy([int(r["rank"]) for r in rows],
                [float(r["relative_error"]) for r in rows], marker="o")
    ax.set_xlabel("rank")
    ax.set_ylabel("relative error")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / "relerr_by_rank.png", dpi=150)
    print(out_dir / "relerr_by_rank.png")

    phi_path = out_dir / "phi_sweep.csv"
    if phi_path.exists():
        rows = read_csv(phi_path)
        phis = [float(r["phi"]) for r in rows]
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
        ax1.semilogy(phis, [float(r["relative_error"]) for r in rows], marker="o")
        ax1.set_xlabel("phi")
        ax1.set_ylabel("relative error vs full tensor")
        ax1.grid(True, alpha=0.3)
        ax2.plot(phis, [float(r["corcondia"]) for r in rows], marker="o")
        ax2.set_xlabel("phi")
        ax2.set_ylabel("core consistency (%)")
        ax2.set_ylim(top=105)
        ax2.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(out_dir / "phi_sweep.png", dpi=150)
        print(out_dir / "phi_sweep.png")


def plot_factors(fit_dir: Path):
    files = sorted(fit_dir.glob("factor_mode*.csv"))
    if not files:
        sys.exit(f"no factor_mode*.csv under {fit_dir}")
    fig, axes = plt.subplots(1, len(files), figsize=(4 * len(files), 3.2))
    if len(files) == 1:
        axes = [axes]
    for ax, path in zip(axes, files):
        with open(path, newline="") as f:
            cols = list(zip(*[[float(v) for v in row] for row in csv.reader(f)]))
        for j, col in enumerate(cols):
            ax.plot(range(1, len(col) + 1), col, label=f"component {j + 1}")
        ax.set_title(path.stem)
        ax.set_xlabel("index")
        ax.grid(True, alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(fit_dir / "factors.png", dpi=150)
    print(fit_dir / "factors.png")


def main():
    if len(sys.argv) != 3 or sys.argv[1] not in {"rating", "mask", "factors"}:
        sys.exit(__doc__)
    kind, target = sys.argv[1], Path(sys.argv[2])
    if kind == "rating":
        plot_rating(target)
    elif kind == "mask":
        plot_mask(target)
    else:
        plot_factors(target)


if __name__ == "__main__":
    main()
