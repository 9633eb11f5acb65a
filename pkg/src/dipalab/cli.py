"""Command-line entry point.

    dipalab generate --config exp.toml --out data/
    dipalab run --config exp.toml --out results/ [--workers N]
    dipalab report --in results/ --out figures/
    dipalab gradcheck

Exit codes: 0 success, 1 run failure(s), 2 invalid config or input.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2

log = logging.getLogger("dipalab")


def _load(path: str, seed: int | None):
    from .config import load_spec

    spec = load_spec(path)
    return spec if seed is None else spec.with_seed(seed)


def cmd_generate(args) -> int:
    from .data import write_split
    from .experiment import build_source, build_split

    spec = _load(args.config, args.seed)
    if spec.data_dir is not None:
        log.warning("ignoring [data] dir; generating from [generator]")
        spec = replace(spec, data_dir=None)
    out = Path(args.out)
    data = build_split(spec)
    write_split(out, data)
    log.info("wrote %d/%d/%d samples to %s; test-only classes %s",
             len(data.train), len(data.validation), len(data.test), out, list(data.test_only))
    if spec.regime == "pretrain-finetune" and spec.pretrain.source_dir is None:
        source = build_source(spec)
        write_split(out / "source", source)
        log.info("wrote %d source samples to %s", len(source.train) + len(source.validation), out / "source")
    return EXIT_OK


def cmd_run(args) -> int:
    from .experiment import run_grid

    spec = _load(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(args.config, out / "config.toml")
    table = run_grid(spec, out, workers=args.workers)
    log.info("%d runs ok, %d failed; tables in %s", len(table.rows), len(table.failures), out)
    for f in table.failures:
        log.error("run %s failed: %s", f.key.run_id, f.error)
    return EXIT_FAILED if table.failures else EXIT_OK


def cmd_report(args) -> int:
    from .experiment import load_table
    from .report import report

    try:
        table = load_table(args.in_dir)
    except (OSError, ValueError, KeyError) as exc:
        log.error("cannot read results from %s: %s", args.in_dir, exc)
        return EXIT_INVALID
    try:
        paths = report(table, args.out)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_FAILED if table.failures else EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import standard_suite

    reports = standard_suite(seed=args.seed or 0)
    ok = True
    for r in reports:
        status = "ok" if r.passed() else "FAIL"
        ok &= r.passed()
        print(f"{r.loss_kind:<3} gamma={r.gamma:<4} adjusted={str(r.adjusted):<5} "
              f"coords={sum(r.checked.values()):<4} max_rel_error={r.worst:.3e}  {status}")
    return EXIT_OK if ok else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the data-generation seed (gradcheck: the check seed)")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="only log warnings and errors")

    parser = argparse.ArgumentParser(prog="dipalab", description=__doc__.split("\n\n")[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write the synthetic benchmark split to disk")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", parents=[common], help="run the experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes (default 1)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", parents=[common], help="aggregate CSV and SVG plots from a run directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the model gradients")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.seed = getattr(args, "seed", None)
    quiet = getattr(args, "quiet", False)
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO, format="%(levelname)s %(message)s")
    log.setLevel(logging.WARNING if quiet else logging.INFO)
    if getattr(args, "workers", 1) < 1:
        log.error("--workers must be >= 1")
        return EXIT_INVALID
    from .config import ConfigError

    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("invalid config: %s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
