"""``tailguard`` command line: synth, calibrate, evaluate, sweep, suggest-alpha, candidates.

Exit codes: 0 success, 2 bad flags, 3 bad input data, 4 semantic error.
Errors are also reported on stderr as one JSON object.  Each output file is
accompanied by ``<output>.manifest.json``.  Its timestamp honours
``SOURCE_DATE_EPOCH`` so re-runs can be byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .calibrate import METHODS, CalibrationConfig, calibrate
from .candidates import GenerationConfig, MockLanguageModel, PoolSampler, generate_candidate_set, read_pool, score_candidates
from .empirical import spearman
from .envelopes import PrecisionError
from .evaluation import RECORD_FIELDS, SUMMARY_FIELDS, evaluate, run_sweep, suggest_alpha, write_rows
from .induce import LambdaGrid, ScoreTable, TableFormatError, build_grid, induce_scores, parse_grid_policy
from .risk_measures import WeightMeasure
from .synth import SynthConfig, generate_scores

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SEMANTIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code, self.kind, self.extra = code, kind, extra


def _emit_error(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("usage", message)
        raise SystemExit(EXIT_USAGE)


# -- flag helpers ------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pair(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected a,b, got {text!r}")
    return vals[0], vals[1]


def _methods(text: str) -> list[str]:
    out = [m.strip().lower() for m in text.split(",") if m.strip()]
    bad = [m for m in out if m not in METHODS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"methods must be drawn from {','.join(METHODS)}")
    return out


def _grid(text: str) -> str:
    try:
        parse_grid_policy(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _add_measure(p: argparse.ArgumentParser, beta_default: float | None = 0.9) -> None:
    p.add_argument("--measure", choices=("cvar", "var", "mean"), default="cvar")
    p.add_argument("--beta", type=float, default=beta_default)


def _measure(args) -> WeightMeasure:
    try:
        return WeightMeasure.from_name(args.measure, args.beta)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, "usage", str(exc)) from None


# -- I/O ---------------------------------------------------------------------


def _sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch and epoch.strip().isdigit() else time.time()
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _dump_json(obj, path: str | Path | None) -> None:
    text = json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_manifest(out: str | Path, command: str, config: dict, seed, inputs: Sequence[str] = (), **extra) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "version": __version__,
        "timestamp": _timestamp(),
        **extra,
    }
    _dump_json(manifest, f"{out}.manifest.json")


def _read_table(path: str) -> ScoreTable:
    try:
        return ScoreTable.read_csv(path)
    except FileNotFoundError:
        raise CliError(EXIT_DATA, "data", f"cannot read {path}", path=path) from None
    except TableFormatError as exc:
        raise CliError(EXIT_DATA, "data", str(exc), path=path, line=exc.line) from None
    except UnicodeDecodeError as exc:
        raise CliError(EXIT_DATA, "data", f"not UTF-8 text: {exc}", path=path) from None


def _config_dict(args, skip: Sequence[str] = ("func", "command")) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# -- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        config = SynthConfig(
            n_prompts=args.prompts,
            target_spearman=args.rho,
            set_size=args.set_size,
            human_marginal=args.human_beta,
            machine_marginal=args.machine_beta,
            seed=args.seed,
        )
    except ValueError as exc:
        raise CliError(EXIT_USAGE, "usage", str(exc)) from None
    table = generate_scores(config)
    table.write_csv(args.out)
    realized = spearman(table.machine, table.human) if len(table) > 1 else float("nan")
    _write_manifest(args.out, "synth", config.to_dict(), args.seed, realized_spearman=realized)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    psi = _measure(args)
    try:
        config = CalibrationConfig(
            psi=psi,
            alpha=args.alpha,
            delta=args.delta,
            method=args.method,
            bootstrap_B=args.bootstrap_b,
            seed=args.seed,
            grid=args.grid,
            score_max=args.score_max,
        )
    except ValueError as exc:
        raise CliError(EXIT_USAGE, "usage", str(exc)) from None
    table = _read_table(args.data)
    policy, m = parse_grid_policy(args.grid)
    try:
        grid = build_grid(table, policy, m or 0)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, "usage", str(exc)) from None
    if float(table.human.max()) > config.score_max:
        raise CliError(EXIT_DATA, "data", f"human scores exceed --score-max {config.score_max}")
    matrix = induce_scores(table, grid)
    progress = None
    if args.progress:
        def progress(j, total):
            print(f"lambda {j + 1}/{total}", file=sys.stderr, flush=True)
    try:
        result = calibrate(matrix, config, progress=progress)
    except PrecisionError as exc:
        raise CliError(EXIT_SEMANTIC, "precision", str(exc)) from None
    _dump_json(result.to_dict(), args.out)
    _write_manifest(args.out, "calibrate", config.to_dict(), args.seed, [args.data])
    return EXIT_OK


def _load_calibration(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        CalibrationConfig.from_dict(data["config"])
        [float(p["lambda"]) for p in data["curve"]]
        float(data["lambda_hat"])
        return data
    except FileNotFoundError:
        raise CliError(EXIT_DATA, "data", f"cannot read {path}", path=path) from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_DATA, "data", f"malformed calibration result: {exc}", path=path) from None


def cmd_evaluate(args) -> int:
    inputs = [args.data]
    if args.calibration:
        cal = _load_calibration(args.calibration)
        inputs.append(args.calibration)
        config = CalibrationConfig.from_dict(cal["config"])
        lam = cal["lambda_hat"] if args.lambda_hat is None else args.lambda_hat
        grid = LambdaGrid(np.array([p["lambda"] for p in cal["curve"]], dtype=float))
    else:
        if args.lambda_hat is None:
            raise CliError(EXIT_USAGE, "usage", "--lambda-hat is required without --calibration")
        config = CalibrationConfig(psi=_measure(args), alpha=0.5, grid=args.grid)
        lam = args.lambda_hat
        grid = None
    table = _read_table(args.data)
    try:
        report = evaluate(table, lam, config, grid=grid)
    except KeyError:
        raise CliError(EXIT_SEMANTIC, "semantic", f"lambda_hat {lam!r} is not on the evaluation grid") from None
    _dump_json(report.to_dict(), args.out)
    _write_manifest(args.out, "evaluate", {**config.to_dict(), "lambda_hat": lam}, config.seed, inputs)
    return EXIT_OK


def cmd_sweep(args) -> int:
    inputs: list[str] = []
    if args.data:
        table = _read_table(args.data)
        inputs.append(args.data)
        source = {"data": args.data}
    else:
        if args.prompts is None:
            raise CliError(EXIT_USAGE, "usage", "give --data or --prompts")
        try:
            synth = SynthConfig(n_prompts=args.prompts, target_spearman=args.rho, set_size=args.set_size, seed=args.seed)
        except ValueError as exc:
            raise CliError(EXIT_USAGE, "usage", str(exc)) from None
        table = generate_scores(synth)
        source = {"synth": synth.to_dict()}
    caps = {"bj": args.repeats_bj} if args.repeats_bj is not None else {}
    try:
        records, summary = run_sweep(
            table,
            alphas=args.alphas,
            betas=args.betas,
            methods=args.methods,
            repeats=args.repeats,
            split_fraction=args.split,
            base_seed=args.seed,
            measure=args.measure,
            method_repeats=caps,
            delta=args.delta,
            grid=args.grid,
            bootstrap_B=args.bootstrap_b,
            score_max=args.score_max,
        )
    except TableFormatError as exc:
        raise CliError(EXIT_DATA, "data", str(exc)) from None
    except ValueError as exc:
        raise CliError(EXIT_USAGE, "usage", str(exc)) from None
    summary_path = args.summary or str(Path(args.out).with_suffix("")) + ".summary.csv"
    write_rows(args.out, RECORD_FIELDS, records)
    write_rows(summary_path, SUMMARY_FIELDS, summary)
    config = {**_config_dict(args), **source, "summary": summary_path}
    for path in (args.out, summary_path):
        _write_manifest(path, "sweep", config, args.seed, inputs)
    return EXIT_OK


def cmd_suggest_alpha(args) -> int:
    psi = _measure(args)
    table = _read_table(args.data)
    try:
        out = {repr(q): suggest_alpha(table.human, q, psi) for q in args.q}
    except ValueError as exc:
        raise CliError(EXIT_USAGE, "usage", str(exc)) from None
    _dump_json(out, args.out)
    if args.out:
        _write_manifest(args.out, "suggest-alpha", _config_dict(args), None, [args.data])
    return EXIT_OK


def cmd_candidates(args) -> int:
    try:
        gen = GenerationConfig(
            quality_threshold=args.quality_threshold,
            similarity_threshold=args.similarity_threshold,
            confidence_threshold=args.confidence_threshold,
            k_max=args.k_max,
            seed=args.seed,
            temperature=args.temperature,
            top_p=args.top_p,
        )
    except ValueError as exc:
        raise CliError(EXIT_USAGE, "usage", str(exc)) from None
    lm = MockLanguageModel(temperature=gen.temperature, top_p=gen.top_p)
    inputs: list[str] = []
    if args.pool:
        try:
            pool = read_pool(args.pool)
        except FileNotFoundError:
            raise CliError(EXIT_DATA, "data", f"cannot read {args.pool}", path=args.pool) from None
        except TableFormatError as exc:
            raise CliError(EXIT_DATA, "data", str(exc), path=args.pool, line=exc.line) from None
        inputs.append(args.pool)
        sampler = PoolSampler(pool)
        prompts = list(pool)
    else:
        if args.prompts is None or args.prompts < 1:
            raise CliError(EXIT_USAGE, "usage", "give --pool or a positive --prompts")
        sampler = None
        width = len(str(args.prompts - 1))
        prompts = [f"p{i:0{width}d}" for i in range(args.prompts)]
    sets: dict[str, list[tuple[str, str]]] = {}
    for prompt in prompts:
        if sampler is None:
            kept = generate_candidate_set(prompt, lm.sample, lm.quality, config=gen)
            sets[prompt] = [(f"r{c}", text) for c, text in enumerate(kept)]
        else:
            budget = GenerationConfig(**{**gen.to_dict(), "k_max": min(gen.k_max, sampler.budget(prompt))})
            kept = generate_candidate_set(prompt, sampler, lm.quality, config=budget)
            ids = {text: rid for rid, text in reversed(pool[prompt])}
            sets[prompt] = [(ids[text], text) for text in kept]
    try:
        table = score_candidates(sets, rho=args.rho, seed=args.seed)
    except ValueError as exc:
        raise CliError(EXIT_SEMANTIC, "semantic", str(exc)) from None
    table.write_csv(args.out)
    extra = {"set_sizes": {p: len(v) for p, v in sets.items()}}
    if args.texts:
        import csv

        with open(args.texts, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("prompt_id", "response_id", "text"))
            for prompt, items in sets.items():
                for rid, text in items:
                    writer.writerow((prompt, rid, text))
        _write_manifest(args.texts, "candidates", {**gen.to_dict(), "rho": args.rho}, args.seed, inputs)
    _write_manifest(args.out, "candidates", {**gen.to_dict(), "rho": args.rho}, args.seed, inputs, **extra)
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tailguard", description="Distortion-risk calibration of filtered generation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a copula-based score table")
    p.add_argument("--prompts", type=int, required=True)
    p.add_argument("--set-size", type=int, default=40)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--human-beta", type=_pair, default=(0.4, 3.0))
    p.add_argument("--machine-beta", type=_pair, default=(0.4, 3.0))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="select a threshold on a calibration table")
    p.add_argument("--data", required=True)
    _add_measure(p)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--method", choices=METHODS, default="lstat")
    p.add_argument("--grid", type=_grid, default="uniform:101")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bootstrap-b", type=int, default=1000)
    p.add_argument("--score-max", type=float, default=1.0)
    p.add_argument("--progress", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="deploy a threshold on held-out data")
    p.add_argument("--data", required=True)
    p.add_argument("--calibration")
    p.add_argument("--lambda-hat", type=float)
    _add_measure(p)
    p.add_argument("--grid", type=_grid, default="uniform:101")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="repeated split / calibrate / evaluate")
    p.add_argument("--data")
    p.add_argument("--prompts", type=int)
    p.add_argument("--set-size", type=int, default=40)
    p.add_argument("--rho", type=float, default=0.57)
    p.add_argument("--alphas", type=_floats, default=[0.15, 0.2, 0.25, 0.3, 0.35])
    p.add_argument("--betas", type=_floats, default=[0.5, 0.75, 0.9])
    p.add_argument("--methods", type=_methods, default=list(METHODS))
    p.add_argument("--repeats", type=int, default=15)
    p.add_argument("--repeats-bj", type=int)
    p.add_argument("--split", type=float, default=0.6)
    p.add_argument("--measure", choices=("cvar", "var", "mean"), default="cvar")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--grid", type=_grid, default="uniform:101")
    p.add_argument("--bootstrap-b", type=int, default=1000)
    p.add_argument("--score-max", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("suggest-alpha", help="risk of the pooled human scores after trimming the top q")
    p.add_argument("--data", required=True)
    p.add_argument("--q", type=_floats, default=[0.01, 0.05, 0.1, 0.15, 0.2])
    _add_measure(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_suggest_alpha)

    p = sub.add_parser("candidates", help="build and score candidate sets (mock model or --pool)")
    p.add_argument("--pool")
    p.add_argument("--prompts", type=int)
    p.add_argument("--quality-threshold", type=float, default=2.61)
    p.add_argument("--similarity-threshold", type=float, default=0.26)
    p.add_argument("--confidence-threshold", type=float, default=32)
    p.add_argument("--k-max", type=int, default=40)
    p.add_argument("--temperature", type=float, default=0.8)
    p.add_argument("--top-p", type=float, default=0.95)
    p.add_argument("--rho", type=float, default=0.57)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--texts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_candidates)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        _emit_error(exc.kind, str(exc), **exc.extra)
        return exc.code
    except OSError as exc:
        _emit_error("io", str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
