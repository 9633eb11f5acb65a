"""Per-run result rows, their aggregation over seeds, and CSV persistence."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

ALL = "all"
METRICS = ("accuracy", "kappa", "macro_f1")
RAW_COLUMNS = ("regime", "loss", "dipa", "k", "seed", "accuracy", "kappa", "macro_f1", "best_epoch", "epochs_run")
FAILURE_COLUMNS = ("regime", "loss", "dipa", "k", "seed", "error")
_AGG_FIELDS = METRICS + ("best_epoch", "epochs_run")
AGGREGATE_COLUMNS = (
    ("regime", "loss", "dipa", "k", "n_runs", "n_failed")
    + tuple(f"{m}_{s}" for m in _AGG_FIELDS for s in ("mean", "std"))
    + ("best",)
)


def k_key(k) -> tuple[int, int]:
    """Sort key placing numeric shots in order and "all" last."""
    return (1, 0) if k == ALL else (0, int(k))


def parse_k(text: str):
    return ALL if text == ALL else int(text)


def _dipa_text(on: bool) -> str:
    return "on" if on else "off"


def _parse_dipa(text: str) -> bool:
    if text not in ("on", "off"):
        raise ValueError(f"dipa column must be 'on' or 'off', got {text!r}")
    return text == "on"


@dataclass(frozen=True)
class RunKey:
    regime: str
    loss: str
    dipa: bool
    k: object
    seed: int

    def sort_key(self):
        return (self.regime, self.loss, self.dipa, k_key(self.k), self.seed)

    def cell(self):
        return (self.regime, self.loss, self.dipa, self.k)

    @property
    def run_id(self) -> str:
        return f"{self.regime}-{self.loss}-{_dipa_text(self.dipa)}-k{self.k}-s{self.seed}"


@dataclass(frozen=True)
class RunResult:
    key: RunKey
    accuracy: float
    kappa: float
    macro_f1: float
    best_epoch: int
    epochs_run: int

    def __post_init__(self):
        # plain Python scalars, so repr() in the CSV is a float literal
        for name in METRICS:
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("best_epoch", "epochs_run"):
            object.__setattr__(self, name, int(getattr(self, name)))


@dataclass(frozen=True)
class RunFailure:
    key: RunKey
    error: str


@dataclass(frozen=True)
class AggregateRow:
    regime: str
    loss: str
    dipa: bool
    k: object
    n_runs: int
    n_failed: int
    mean: dict[str, float]
    std: dict[str, float]
    best: tuple[str, ...] = ()


@dataclass
class ResultTable:
    rows: list[RunResult] = field(default_factory=list)
    failures: list[RunFailure] = field(default_factory=list)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.key.sort_key())
        self.failures = sorted(self.failures, key=lambda f: f.key.sort_key())

    def __eq__(self, other):
        return isinstance(other, ResultTable) and self.rows == other.rows and self.failures == other.failures

    def aggregate(self) -> list[AggregateRow]:
        """Mean and sample standard deviation per cell, over successful seeds only.

        Rows are sorted by seed before reduction, so the result does not
        depend on the order runs finished in. A single seed gets std 0.
        """
        cells: dict[tuple, list[RunResult]] = {}
        failed: dict[tuple, int] = {}
        for r in self.rows:
            cells.setdefault(r.key.cell(), []).append(r)
        for f in self.failures:
            failed[f.key.cell()] = failed.get(f.key.cell(), 0) + 1
            cells.setdefault(f.key.cell(), [])
        out = []
        for cell in sorted(cells, key=lambda c: (c[0], c[1], c[2], k_key(c[3]))):
            runs = sorted(cells[cell], key=lambda r: r.key.seed)
            mean, std = {}, {}
            for name in _AGG_FIELDS:
                v = np.array([getattr(r, name) for r in runs], dtype=np.float64)
                mean[name] = float(v.mean()) if v.size else float("nan")
                std[name] = float(v.std(ddof=1)) if v.size > 1 else (0.0 if v.size else float("nan"))
            out.append(AggregateRow(*cell, n_runs=len(runs), n_failed=failed.get(cell, 0), mean=mean, std=std))
        return _flag_best(out)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RAW_COLUMNS)
        for r in self.rows:
            k = r.key
            w.writerow(
                [k.regime, k.loss, _dipa_text(k.dipa), k.k, k.seed, repr(r.accuracy), repr(r.kappa),
                 repr(r.macro_f1), r.best_epoch, r.epochs_run]
            )
        return buf.getvalue()

    def failures_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FAILURE_COLUMNS)
        for f in self.failures:
            k = f.key
            w.writerow([k.regime, k.loss, _dipa_text(k.dipa), k.k, k.seed, f.error])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, failures_text: str | None = None) -> "ResultTable":
        rows = []
        for rec in _records(text, RAW_COLUMNS):
            rows.append(
                RunResult(
                    _key(rec),
                    accuracy=float(rec["accuracy"]),
                    kappa=float(rec["kappa"]),
                    macro_f1=float(rec["macro_f1"]),
                    best_epoch=int(rec["best_epoch"]),
                    epochs_run=int(rec["epochs_run"]),
                )
            )
        failures = []
        if failures_text:
            failures = [RunFailure(_key(rec), rec["error"]) for rec in _records(failures_text, FAILURE_COLUMNS)]
        return cls(rows, failures)


def _records(text: str, columns) -> list[dict[str, str]]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != tuple(columns):
        raise ValueError(f"expected CSV columns {','.join(columns)}, got {reader.fieldnames}")
    return list(reader)


def _key(rec: dict[str, str]) -> RunKey:
    return RunKey(rec["regime"], rec["loss"], _parse_dipa(rec["dipa"]), parse_k(rec["k"]), int(rec["seed"]))


def _flag_best(rows: list[AggregateRow]) -> list[AggregateRow]:
    """Flag, per (regime, k) and metric, every variant that attains the highest mean."""
    groups: dict[tuple, list[int]] = {}
    for i, r in enumerate(rows):
        if r.n_runs:
            groups.setdefault((r.regime, k_key(r.k)), []).append(i)
    flags: dict[int, list[str]] = {}
    for members in groups.values():
        for m in METRICS:
            top = max(rows[i].mean[m] for i in members)
            for i in members:
                if rows[i].mean[m] == top:
                    flags.setdefault(i, []).append(m)
    return [
        AggregateRow(r.regime, r.loss, r.dipa, r.k, r.n_runs, r.n_failed, r.mean, r.std, tuple(flags.get(i, ())))
        for i, r in enumerate(rows)
    ]


def aggregate_csv(rows: list[AggregateRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    for r in rows:
        stats = []
        for name in _AGG_FIELDS:
            stats += ["" if r.n_runs == 0 else repr(r.mean[name]), "" if r.n_runs == 0 else repr(r.std[name])]
        w.writerow([r.regime, r.loss, _dipa_text(r.dipa), r.k, r.n_runs, r.n_failed, *stats, ";".join(r.best)])
    return buf.getvalue()


def parse_aggregate(text: str) -> list[AggregateRow]:
    out = []
    for rec in _records(text, AGGREGATE_COLUMNS):
        n = int(rec["n_runs"])
        mean = {m: float(rec[f"{m}_mean"]) if n else float("nan") for m in _AGG_FIELDS}
        std = {m: float(rec[f"{m}_std"]) if n else float("nan") for m in _AGG_FIELDS}
        best = tuple(rec["best"].split(";")) if rec["best"] else ()
        out.append(
            AggregateRow(rec["regime"], rec["loss"], _parse_dipa(rec["dipa"]), parse_k(rec["k"]), n,
                         int(rec["n_failed"]), mean, std, best)
        )
    return out
