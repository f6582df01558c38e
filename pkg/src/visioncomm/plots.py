"""SVG figures built from the metric CSVs of a run directory."""

from __future__ import annotations

import csv
import glob
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "visioncomm"  # stable element ids across runs


def read_csv(path: str) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _save(fig, path: str):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    tmp = path + ".tmp"
    fig.savefig(tmp, format="svg", metadata={"Date": None})
    plt.close(fig)
    os.replace(tmp, path)


def plot_umac(metrics_csv: str, path: str):
    rows = read_csv(metrics_csv)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ours = sorted((int(r["M"]), float(r["umac"])) for r in rows if r["method"] == "3DUMM")
    ax.plot([m for m, _ in ours], [u for _, u in ours], "o-", label="3DUMM")
    for r in rows:
        if r["method"] == "MCUMM":
            ax.plot([int(r["M"])], [float(r["umac"])], "s", label=f"MCUMM (M={r['M']})")
        elif r["method"] == "RUMM":
            ax.axhline(float(r["umac"]), ls="--", color="gray", label="RUMM")
        elif r["method"] == "RUMM-expected":
            ax.axhline(float(r["umac"]), ls=":", color="black", label="RUMM expectation")
    ax.set_xlabel("sequence length M")
    ax.set_ylabel("UMAC")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_atrr(metrics_csv: str, path: str):
    rows = read_csv(metrics_csv)
    methods = list(dict.fromkeys(r["method"] for r in rows))
    groups = list(dict.fromkeys(r["U"] for r in rows))
    value = {(r["method"], r["U"]): float(r["atrr"]) for r in rows}
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / len(methods)
    for k, name in enumerate(methods):
        xs = [g + k * width for g in range(len(groups))]
        ax.bar(xs, [value[(name, u)] for u in groups], width, label=name)
    ax.set_xticks([g + 0.4 - width / 2 for g in range(len(groups))], [f"U={u}" for u in groups])
    ax.set_ylabel("ATRR")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8, ncol=len(methods))
    fig.tight_layout()
    _save(fig, path)


def plot_curves(models_dir: str, path: str):
    files = sorted(glob.glob(os.path.join(models_dir, "*_curve.csv")))
    if not files:
        raise FileNotFoundError(f"no loss curves in {models_dir}")
    fig, axes = plt.subplots(1, len(files), figsize=(3 * len(files), 3), squeeze=False)
    for ax, f in zip(axes[0], files):
        rows = read_csv(f)
        ep = [int(r["epoch"]) for r in rows]
        ax.plot(ep, [float(r["train_loss"]) for r in rows], "o-", label="train")
        ax.plot(ep, [float(r["valid_loss"]) for r in rows], "s--", label="valid")
        ax.set_title(os.path.basename(f).replace("_curve.csv", ""), fontsize=9)
        ax.set_xlabel("epoch")
    axes[0][0].set_ylabel("loss")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
