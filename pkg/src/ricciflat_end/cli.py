"""Command line entry point: ``ricciflat-end {solve,sweep,lemmas,fit}``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, ExperimentConfig, parse_config
from .experiment import (
    emit_manifest,
    fit_table,
    manifest_text,
    read_csv,
    run_experiment,
    run_fixed_eps,
    run_lemmas,
    sweep_configs,
    write_outputs,
)

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_ACCEPTANCE = 0, 1, 2, 3


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat section.key = value file (defaults if omitted)")
    common.add_argument("--seed", type=_u64, help="override analysis.seed")
    common.add_argument("--out", type=Path, help="override outputs.dir")

    p = argparse.ArgumentParser(prog="ricciflat-end", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve one model; write CSV and manifest")
    sw = sub.add_parser("sweep", parents=[common], help="sweep eps or the forcing exponent N")
    sw.add_argument("--over", choices=("eps", "N"), required=True)
    sw.add_argument("--values", type=float, nargs="+", required=True)
    sub.add_parser("lemmas", parents=[common], help="run the property suites only")
    fit = sub.add_parser("fit", parents=[common], help="re-fit decay exponents from a solution CSV")
    fit.add_argument("csv", type=Path)
    return p


def _load(args) -> ExperimentConfig:
    text = args.config.read_text(encoding="utf-8") if args.config else ""
    cfg = parse_config(text)
    if args.seed is not None:
        cfg = replace(cfg, analysis=replace(cfg.analysis, seed=args.seed))
    if args.out is not None:
        cfg = replace(cfg, outputs=replace(cfg.outputs, dir=str(args.out)))
    return cfg


def _status(man) -> int:
    if man.status != "ok":
        return EXIT_SOLVER
    return EXIT_OK if man.passed else EXIT_ACCEPTANCE


def _finish(man, out_dir, formats) -> int:
    write_outputs(man, out_dir, formats)
    if man.status != "ok":
        print(f"{man.failed_stage} failed: {man.error}", file=sys.stderr)
    return _status(man)


def cmd_solve(cfg: ExperimentConfig) -> int:
    man = run_experiment(cfg)
    return _finish(man, cfg.outputs.dir, cfg.outputs.formats)


def cmd_sweep(cfg: ExperimentConfig, over: str, values) -> int:
    root = Path(cfg.outputs.dir)
    if over == "N":
        runs = [(f"N={v!r}", run_experiment(c)) for v, c in zip(values, sweep_configs(cfg, values))]
    else:
        runs = [(f"eps={v!r}", run_fixed_eps(cfg, v)) for v in values]
    codes = [_finish(man, root / name, cfg.outputs.formats) for name, man in runs]
    return max(codes)


def cmd_lemmas(cfg: ExperimentConfig) -> int:
    man = run_lemmas(cfg)
    write_outputs(man, cfg.outputs.dir, tuple(f for f in cfg.outputs.formats if f == "json"))
    for r in man.results["lemmas"]:
        print(f"{r['name']:<18} n={r['n']}  worst={r['worst_ratio']:.6f}  {'PASS' if r['pass'] else 'FAIL'}")
    return _status(man)


def cmd_fit(cfg: ExperimentConfig, csv_path: Path) -> int:
    cols = read_csv(csv_path)
    fields = {name: cols[name] for name in ("u", "laplacian_u")}
    for name in ("lambda_base", "lambda_fiber"):
        fields[name + "_minus_1"] = cols[name] - 1.0
    doc = {"source": str(csv_path),
           "exponents": fit_table(cols["t"], fields, cfg.analysis.window_factor, cfg.analysis.min_window_nodes)}
    if "json" in cfg.outputs.formats:
        emit_manifest(doc, Path(cfg.outputs.dir) / "fit.json")
    sys.stdout.write(manifest_text(doc))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"invalid config:\n{exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.over, args.values)
        if args.command == "lemmas":
            return cmd_lemmas(cfg)
        return cmd_fit(cfg, args.csv)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
