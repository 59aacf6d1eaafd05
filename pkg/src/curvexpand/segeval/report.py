"""Per-method comparison tables and plots."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .segmenter import EvalReport

# Full-scale Crack500 UNet mIoU (original vs 5x expansion with the SPADE control branch),
# kept as static context next to toy-scale tables.
CRACK500_REFERENCE = {"original": 73.2, "scp": 78.4}

COLUMNS = ("method", "ratio", "runs", "seeds", "miou_mean", "miou_std", "f1_mean", "f1_std")


@dataclass(frozen=True)
class ComparisonRow:
    method: str
    ratio: int | None
    seeds: tuple[int, ...]
    miou_mean: float
    miou_std: float
    f1_mean: float
    f1_std: float

    @property
    def runs(self) -> int:
        return len(self.seeds)


def _std(values: list[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def compare_methods(reports: list[EvalReport]) -> list[ComparisonRow]:
    """One row per (method, ratio), in first-appearance order, aggregating seeds."""
    groups: dict[tuple[str, int | None], list[EvalReport]] = {}
    for r in reports:
        groups.setdefault((r.method, r.ratio), []).append(r)
    rows = []
    for (method, ratio), runs in groups.items():
        m = [r.best_miou for r in runs]
        f = [r.best_f1 for r in runs]
        rows.append(ComparisonRow(method, ratio, tuple(r.seed for r in runs), float(np.mean(m)), _std(m), float(np.mean(f)), _std(f)))
    return rows


def _cells(row: ComparisonRow) -> list[str]:
    return [
        row.method,
        "" if row.ratio is None else str(row.ratio),
        str(row.runs),
        " ".join(map(str, row.seeds)),
        f"{row.miou_mean:.2f}",
        f"{row.miou_std:.2f}",
        f"{row.f1_mean:.2f}",
        f"{row.f1_std:.2f}",
    ]


def to_csv(rows: list[ComparisonRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow(_cells(row))
    return buf.getvalue()


def to_markdown(rows: list[ComparisonRow], reference: bool = True) -> str:
    lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
    lines += ["| " + " | ".join(_cells(r)) + " |" for r in rows]
    if reference:
        lines += [
            "",
            f"Full-scale reference (Crack500, UNet, 5x): original {CRACK500_REFERENCE['original']} mIoU, "
            f"SPADE control branch {CRACK500_REFERENCE['scp']} mIoU.",
        ]
    return "\n".join(lines) + "\n"


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_ratio_curves(rows: list[ComparisonRow], path: str | Path) -> None:
    """Best mIoU against expansion ratio per method; the original run is a horizontal line."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for method in dict.fromkeys(r.method for r in rows):
        pts = sorted((r.ratio, r.miou_mean, r.miou_std) for r in rows if r.method == method and r.ratio is not None)
        if pts:
            x, y, e = zip(*pts)
            ax.errorbar(x, y, yerr=e, marker="o", capsize=3, label=method)
        else:
            base = next(r for r in rows if r.method == method)
            ax.axhline(base.miou_mean, linestyle="--", color="gray", label=method)
    ax.set_xlabel("expansion ratio")
    ax.set_ylabel("best mIoU (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_trajectories(reports: list[EvalReport], path: str | Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for r in reports:
        label = r.method if r.ratio is None else f"{r.method} x{r.ratio}"
        ax.plot(r.miou, label=f"{label} s{r.seed}", linewidth=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation mIoU (%)")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_losses(losses: list[float], path: str | Path, window: int = 50) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(losses, alpha=0.3, linewidth=0.5)
    if len(losses) >= window:
        smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
        ax.plot(np.arange(window - 1, len(losses)), smooth)
    ax.set_xlabel("step")
    ax.set_ylabel("noise MSE")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
