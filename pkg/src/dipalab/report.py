"""Aggregate CSV and metric-versus-shots plots."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "dipalab"  # stable element ids across runs
import matplotlib.pyplot as plt  # noqa: E402

from .results import ALL, METRICS, AggregateRow, ResultTable, aggregate_csv, k_key  # noqa: E402

LABELS = {"accuracy": "accuracy", "kappa": "Cohen's kappa", "macro_f1": "macro F1"}


def x_positions(shots) -> dict:
    """Plot abscissa per shot value; "all" sits one decade past the largest k."""
    numeric = [k for k in shots if k != ALL]
    pos = {k: float(k) for k in numeric}
    if ALL in shots:
        pos[ALL] = 10.0 * max(numeric) if numeric else 1.0
    return pos


def metric_figure(rows: list[AggregateRow], metric: str, title: str = ""):
    """One line per (loss, dipa) variant with a mean +- std band, log-scaled k axis."""
    shots = sorted({r.k for r in rows if r.n_runs}, key=k_key)
    pos = x_positions(shots)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    variants = sorted({(r.loss, r.dipa) for r in rows})
    for loss, dipa in variants:
        pts = sorted((r for r in rows if (r.loss, r.dipa) == (loss, dipa) and r.n_runs), key=lambda r: k_key(r.k))
        if not pts:
            continue
        x = [pos[r.k] for r in pts]
        mean = [r.mean[metric] for r in pts]
        std = [r.std[metric] for r in pts]
        label = f"{loss.upper()}{' + DiPA' if dipa else ''}"
        (line,) = ax.plot(x, mean, marker="o", linestyle="--" if dipa else "-", label=label)
        ax.fill_between(x, [m - s for m, s in zip(mean, std)], [m + s for m, s in zip(mean, std)],
                        color=line.get_color(), alpha=0.2, linewidth=0)
    ax.set_xscale("log")
    ax.set_xticks([pos[k] for k in shots])
    ax.set_xticklabels([str(k) for k in shots])
    ax.minorticks_off()
    ax.set_xlabel("shots per class (k)")
    ax.set_ylabel(LABELS[metric])
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return fig, ax


def report(table: ResultTable, out_dir) -> list[Path]:
    """Write ``aggregate.csv`` and one SVG per metric (per regime when several)."""
    if not table.rows and not table.failures:
        raise ValueError("cannot report on an empty result table")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = table.aggregate()
    written = [out_dir / "aggregate.csv"]
    written[0].write_text(aggregate_csv(rows))
    regimes = sorted({r.regime for r in rows})
    for regime in regimes:
        sub = [r for r in rows if r.regime == regime]
        if not any(r.n_runs for r in sub):
            continue
        for metric in METRICS:
            fig, _ = metric_figure(sub, metric, title=regime)
            name = f"{metric}.svg" if len(regimes) == 1 else f"{regime}_{metric}.svg"
            path = out_dir / name
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)
    return written
