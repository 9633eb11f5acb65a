"""Grid execution: every (loss, dipa, k, seed) run of an experiment spec.

Runs are independent. Each one builds its episode, trains one model per
hyperparameter candidate, keeps the candidate with the best validation
accuracy and scores it on the full test split. Artifacts go under
``<out>/runs/<run id>/``; the raw and aggregate tables sit at ``<out>``.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentSpec
from .data import SplitDataset, generate, read_split, sample_few_shot, split, validation_subset
from .model import ModelConfig, Parameters, init_parameters, save_checkpoint
from .results import ALL, ResultTable, RunFailure, RunKey, RunResult, aggregate_csv
from .trainer import TrainingDiverged, evaluate, pretrain_then_finetune, train

log = logging.getLogger(__name__)

# fixed seed for the validation subsample shared by every run
VALIDATION_SEED = 0


def build_split(spec: ExperimentSpec) -> SplitDataset:
    """The target split: read from ``spec.data_dir`` or generated from ``spec.generator``."""
    if spec.data_dir is not None:
        return read_split(spec.data_dir)
    gen = spec.generator
    rng = np.random.default_rng([gen.seed, 7])
    return split(generate(gen), test_only=gen.test_only_classes, rng=rng)


def build_source(spec: ExperimentSpec) -> SplitDataset:
    """Source-domain data for pre-training, sharing the target's channels."""
    pre = spec.pretrain
    if pre.source_dir is not None:
        return read_split(pre.source_dir)
    gen = spec.generator.source_domain(total_samples=pre.total_samples)
    return split(generate(gen), fractions=(0.8, 0.2, 0.0), rng=np.random.default_rng([gen.seed, 8]))


@dataclass
class GridContext:
    spec: ExperimentSpec
    data: SplitDataset
    validation: list
    model: ModelConfig
    pretrained: Parameters | None = None


@dataclass
class RunOutcome:
    key: RunKey
    result: RunResult | None
    failure: RunFailure | None
    trace_csv: str = ""
    confusion_csv: str = ""
    selection_csv: str = ""
    seconds: float = 0.0


def prepare(spec: ExperimentSpec) -> GridContext:
    data = build_split(spec)
    model = replace(spec.model, channels=data.channels, num_classes=data.num_classes)
    val = validation_subset(data.validation, spec.train.validation_subsample, seed=VALIDATION_SEED)
    ctx = GridContext(spec, data, val, model)
    if spec.regime == "pretrain-finetune":
        ctx.pretrained = pretrain(spec, model.channels)
    return ctx


def pretrain(spec: ExperimentSpec, channels: int) -> Parameters:
    """One supervised source-domain run, shared by every fine-tuning run."""
    source = build_source(spec)
    if source.channels != channels:
        raise ValueError(f"channel mismatch: source has {source.channels}, target {channels}")
    src_model = replace(spec.model, channels=channels, num_classes=source.num_classes)
    cfg = spec.pretrain.train_config(spec.train.batch_size, spec.train.validation_subsample)
    log.info("pre-training on %d source samples", len(source.train))
    init = init_parameters(src_model, np.random.default_rng([cfg.seed, 0]))
    val = validation_subset(source.validation, cfg.validation_subsample, seed=VALIDATION_SEED)
    params, trace = train(init, source.train, val, cfg, src_model)
    log.info("pre-training stopped after %d epochs (%s)", trace.epochs_run, trace.stop_reason)
    return params


def grid_keys(spec: ExperimentSpec) -> list[RunKey]:
    keys = [
        RunKey(spec.regime, loss, dipa, k, seed)
        for loss in spec.losses
        for dipa in spec.dipa
        for k in spec.shots
        for seed in spec.seeds
    ]
    return sorted(keys, key=RunKey.sort_key)


def episode_for(data: SplitDataset, k, seed: int) -> list:
    if k == ALL:
        return list(data.train)
    return sample_few_shot(data.train, k, np.random.default_rng([seed, 4, k]))


def _confusion_csv(cm: np.ndarray, labels) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred", *labels])
    for label, row in zip(labels, cm):
        w.writerow([label, *row.tolist()])
    return buf.getvalue()


def run_one(ctx: GridContext, key: RunKey) -> RunOutcome:
    """Train every candidate for one grid run and score the selected model."""
    start = time.perf_counter()
    episode = episode_for(ctx.data, key.k, key.seed)
    candidates = ctx.spec.train.candidates(key.loss, key.dipa, key.seed)
    selection = ["learning_rate,focal_gamma,dipa_alpha,dipa_tau,val_acc,best_epoch,status"]
    best = None
    for cfg in candidates:
        point = f"{cfg.learning_rate!r},{cfg.focal_gamma!r},{cfg.dipa.alpha!r},{cfg.dipa.tau!r}"
        try:
            if ctx.pretrained is None:
                init = init_parameters(ctx.model, np.random.default_rng([key.seed, 0]))
                params, trace = train(init, episode, ctx.validation, cfg, ctx.model)
            else:
                params, trace, _ = pretrain_then_finetune(
                    [], [], episode, ctx.validation, replace(ctx.model, num_classes=ctx.pretrained.num_classes()),
                    ctx.model.num_classes, cfg, cfg, pretrained=ctx.pretrained,
                )
        except (TrainingDiverged, FloatingPointError) as exc:
            selection.append(f"{point},,,failed: {exc}")
            continue
        acc = trace.val_acc[trace.best_epoch - 1]
        selection.append(f"{point},{acc!r},{trace.best_epoch},ok")
        if best is None or acc > best[0]:
            best = (acc, params, trace)
    seconds = time.perf_counter() - start
    if best is None:
        failure = RunFailure(key, "every hyperparameter candidate diverged")
        return RunOutcome(key, None, failure, selection_csv="\n".join(selection) + "\n", seconds=seconds)
    _, params, trace = best
    cm, labels, m = evaluate(params, ctx.model, ctx.data.test)
    result = RunResult(key, m["accuracy"], m["kappa"], m["macro_f1"], trace.best_epoch, trace.epochs_run)
    seconds = time.perf_counter() - start
    return RunOutcome(
        key, result, None, trace.to_csv(), _confusion_csv(cm, labels), "\n".join(selection) + "\n", seconds
    )


def _safe_run(ctx: GridContext, key: RunKey) -> RunOutcome:
    try:
        return run_one(ctx, key)
    except Exception as exc:  # recorded, not raised: one bad run must not sink the grid
        log.exception("run %s failed", key.run_id)
        return RunOutcome(key, None, RunFailure(key, f"{type(exc).__name__}: {exc}"))


_WORKER_CTX: GridContext | None = None


def _init_worker(ctx: GridContext) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker_run(key: RunKey) -> RunOutcome:
    return _safe_run(_WORKER_CTX, key)


def write_outcome(out_dir: Path, outcome: RunOutcome) -> None:
    run_dir = out_dir / "runs" / outcome.key.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    if outcome.trace_csv:
        (run_dir / "trace.csv").write_text(outcome.trace_csv)
    if outcome.confusion_csv:
        (run_dir / "confusion.csv").write_text(outcome.confusion_csv)
    if outcome.selection_csv:
        (run_dir / "selection.csv").write_text(outcome.selection_csv)
    if outcome.failure:
        (run_dir / "error.txt").write_text(outcome.failure.error + "\n")


def write_tables(out_dir: Path, table: ResultTable) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "results.csv").write_text(table.to_csv())
    (out_dir / "failures.csv").write_text(table.failures_csv())
    (out_dir / "aggregate.csv").write_text(aggregate_csv(table.aggregate()))


def run_grid(spec: ExperimentSpec, out_dir, workers: int = 1, ctx: GridContext | None = None) -> ResultTable:
    """Execute every run of ``spec`` and write artifacts and tables under ``out_dir``.

    Results are collected in sorted key order whatever the worker count,
    so the tables on disk depend only on the spec.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = ctx or prepare(spec)
    if ctx.pretrained is not None:
        save_checkpoint(ctx.pretrained, out_dir / "pretrained.ckpt")
    keys = grid_keys(spec)
    log.info("running %d runs with %d worker(s)", len(keys), workers)
    outcomes: dict[RunKey, RunOutcome] = {}
    if workers == 1:
        for i, key in enumerate(keys, start=1):
            outcomes[key] = _safe_run(ctx, key)
            log.info("[%d/%d] %s %.1fs", i, len(keys), key.run_id, outcomes[key].seconds)
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ctx,)) as pool:
            futures = {pool.submit(_worker_run, key): key for key in keys}
            for fut in as_completed(futures):
                outcomes[futures[fut]] = fut.result()
                log.info("done %s", futures[fut].run_id)
    rows, failures = [], []
    for key in keys:
        o = outcomes[key]
        write_outcome(out_dir, o)
        if o.result is not None:
            rows.append(o.result)
        else:
            failures.append(o.failure)
    table = ResultTable(rows, failures)
    write_tables(out_dir, table)
    return table


def load_table(in_dir) -> ResultTable:
    in_dir = Path(in_dir)
    failures = in_dir / "failures.csv"
    return ResultTable.from_csv(
        (in_dir / "results.csv").read_text(), failures.read_text() if failures.exists() else None
    )
