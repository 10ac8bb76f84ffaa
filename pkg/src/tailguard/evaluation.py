"""Held-out evaluation, cost estimation, alpha suggestion and repeated sweeps."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .calibrate import BJ, DKW, LSTAT, CalibrationConfig, select_lambda, ucb_curve
from .empirical import sort_sample
from .induce import InducedMatrix, LambdaGrid, ScoreTable, build_grid, induce_rect, induce_scores, parse_grid_policy
from .risk_measures import WeightMeasure, estimate_risk, lstat_weights
from .synth import SynthConfig, generate_arrays

__all__ = [
    "EvalReport",
    "RECORD_FIELDS",
    "SUMMARY_FIELDS",
    "estimate_cost",
    "evaluate",
    "oracle_curve",
    "oracle_risk",
    "realized_risk",
    "run_sweep",
    "split_prompts",
    "suggest_alpha",
    "summarize",
    "worker_count",
]

RECORD_FIELDS = ("alpha", "beta", "method", "repeat", "lambda_hat", "realized_risk", "cost_mean", "abstention_rate")
SUMMARY_FIELDS = ("alpha", "beta", "method", "metric", "mean", "stderr")
METRICS = ("lambda_hat", "realized_risk", "cost_mean", "abstention_rate")


def worker_count() -> int:
    """Worker cap from ``TAILGUARD_THREADS`` (unset or 0 means one per CPU)."""
    raw = os.environ.get("TAILGUARD_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"TAILGUARD_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("TAILGUARD_THREADS must be nonnegative")
    return n or (os.cpu_count() or 1)


@dataclass(frozen=True)
class EvalReport:
    realized_risk: float
    cost_mean: float
    abstention_rate: float
    n_heldout: int
    lambda_hat: float
    method: str
    measure: dict
    alpha: float
    delta: float
    seed: int

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isnan(d["cost_mean"]):
            d["cost_mean"] = None
        return d


def realized_risk(heldout: InducedMatrix, lambda_hat: float, psi: WeightMeasure) -> float:
    j = heldout.grid.index_of(lambda_hat)
    return estimate_risk(sort_sample(heldout.column(j)), psi)


def _pass_rates(machine: np.ndarray, lambda_hat: float) -> np.ndarray:
    counts = np.isfinite(machine).sum(axis=1)
    return (machine < lambda_hat).sum(axis=1) / counts


def _cost_from_rates(rates: np.ndarray) -> tuple[float, float]:
    passing = rates > 0
    abstention = (~passing).mean()
    cost = float(np.mean(1.0 / rates[passing])) if passing.any() else float("nan")
    return cost, float(abstention)


def estimate_cost(heldout: ScoreTable, lambda_hat: float) -> tuple[float, float]:
    """Mean of ``1 / P(machine < lambda_hat | x)`` and the abstention rate.

    Prompts with no passing candidate count as abstentions and are left out
    of the cost mean (their geometric cost is unbounded).
    """
    _, machine, _ = heldout.padded()
    return _cost_from_rates(_pass_rates(machine, lambda_hat))


def suggest_alpha(pooled_human_scores: Sequence[float], q: float, psi: WeightMeasure) -> float:
    """Risk of the pooled human scores after discarding the top ``q`` fraction."""
    if not 0.0 <= q < 1.0:
        raise ValueError("q must lie in [0, 1)")
    values = np.sort(np.asarray(pooled_human_scores, dtype=float))
    drop = math.floor(q * values.size + 1e-9)
    kept = values[: values.size - drop]
    if kept.size == 0:
        raise ValueError("no scores left after trimming")
    return estimate_risk(sort_sample(kept), psi)


def evaluate(
    heldout: ScoreTable,
    lambda_hat: float,
    config: CalibrationConfig,
    grid: LambdaGrid | None = None,
) -> EvalReport:
    """Deploy ``lambda_hat`` on a held-out table and report risk, cost and abstention.

    ``grid`` defaults to ``config.grid`` built from the held-out table; pass
    the calibration grid when the policy is data dependent.  ``KeyError``
    signals a ``lambda_hat`` that is not a grid point.
    """
    if grid is None:
        policy, m = parse_grid_policy(config.grid)
        grid = build_grid(heldout, policy, m or 0)
    matrix = induce_scores(heldout, grid)
    risk = realized_risk(matrix, lambda_hat, config.psi)
    cost, abstention = estimate_cost(heldout, lambda_hat)
    return EvalReport(
        realized_risk=risk,
        cost_mean=cost,
        abstention_rate=abstention,
        n_heldout=matrix.n,
        lambda_hat=float(lambda_hat),
        method=config.method,
        measure=config.psi.to_dict(),
        alpha=config.alpha,
        delta=config.delta,
        seed=config.seed,
    )


# ---------------------------------------------------------------------------
# Large-sample oracle


def oracle_curve(config: SynthConfig, lambdas: Sequence[float], psi: WeightMeasure, n_large: int = 50_000) -> np.ndarray:
    """Plug-in risk on a fresh ``n_large``-prompt table at each lambda."""
    if n_large < 10_000:
        raise ValueError("n_large must be at least 10,000")
    machine, human = generate_arrays(replace(config, n_prompts=n_large))
    values = induce_rect(machine, human, np.asarray(lambdas, dtype=float))
    return lstat_weights(psi, n_large) @ np.sort(values, axis=0)


def oracle_risk(config: SynthConfig, lam: float, psi: WeightMeasure, n_large: int = 50_000) -> float:
    return float(oracle_curve(config, [lam], psi, n_large)[0])


# ---------------------------------------------------------------------------
# Sweeps


def split_prompts(prompts: Sequence[str], fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random prompt-level split into (calibration, held-out)."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("split fraction must lie in (0, 1)")
    prompts = np.asarray(prompts, dtype=object)
    if prompts.size < 2:
        raise ValueError("need at least two prompts to split")
    perm = np.random.default_rng(seed).permutation(prompts.size)
    n_cal = min(max(int(round(fraction * prompts.size)), 1), prompts.size - 1)
    return prompts[np.sort(perm[:n_cal])], prompts[np.sort(perm[n_cal:])]


def _measures(measure: str, betas: Sequence[float | None]) -> list[tuple[float | None, WeightMeasure]]:
    if measure == "mean":
        return [(None, WeightMeasure.mean())]
    return [(b, WeightMeasure.from_name(measure, b)) for b in betas]


def _one_repeat(
    table: ScoreTable,
    repeat: int,
    *,
    alphas: Sequence[float],
    measures: list,
    methods: Sequence[str],
    method_repeats: Mapping[str, int],
    split_fraction: float,
    base_seed: int,
    delta: float,
    grid: str,
    bootstrap_B: int,
    score_max: float,
) -> list[dict]:
    seed = base_seed + repeat
    cal_ids, held_ids = split_prompts(table.unique_prompts(), split_fraction, seed)
    cal = table.subset(cal_ids)
    held = table.subset(held_ids)
    policy, m = parse_grid_policy(grid)
    lam_grid = build_grid(cal, policy, m or 0)
    cal_matrix = induce_scores(cal, lam_grid, cal_ids)
    _, held_machine, held_human = held.padded(held_ids)
    held_values = induce_rect(held_machine, held_human, lam_grid.values)

    records = []
    for method in methods:
        if repeat >= method_repeats.get(method, math.inf):
            continue
        for beta, psi in measures:
            config = CalibrationConfig(
                psi=psi,
                alpha=max(alphas),
                delta=delta,
                method=method,
                bootstrap_B=bootstrap_B,
                seed=seed,
                grid=grid,
                score_max=score_max,
            )
            curve = ucb_curve(cal_matrix, config)
            for alpha in alphas:
                lam_hat = select_lambda(curve, alpha)
                j = lam_grid.index_of(lam_hat)
                risk = estimate_risk(sort_sample(held_values[:, j]), psi)
                cost, abstention = _cost_from_rates(_pass_rates(held_machine, lam_hat))
                records.append(
                    {
                        "alpha": float(alpha),
                        "beta": beta,
                        "method": method,
                        "repeat": repeat,
                        "lambda_hat": lam_hat,
                        "realized_risk": risk,
                        "cost_mean": cost,
                        "abstention_rate": abstention,
                    }
                )
    return records


def run_sweep(
    table: ScoreTable,
    alphas: Sequence[float] = (0.15, 0.2, 0.25, 0.3, 0.35),
    betas: Sequence[float] = (0.5, 0.75, 0.9),
    methods: Sequence[str] = (LSTAT, DKW, BJ),
    repeats: int = 15,
    split_fraction: float = 0.6,
    base_seed: int = 0,
    *,
    measure: str = "cvar",
    method_repeats: Mapping[str, int] | None = None,
    delta: float = 0.05,
    grid: str = "uniform:101",
    bootstrap_B: int = 1000,
    score_max: float = 1.0,
    workers: int | None = None,
) -> tuple[list[dict], list[dict]]:
    """Repeat split / calibrate / evaluate and return ``(records, summary)``.

    Repeat ``r`` uses seed ``base_seed + r`` for the prompt split and for any
    bootstrap draws, so results do not depend on scheduling.
    ``method_repeats`` caps the repeat count per method (e.g. ``{"bj": 3}``).
    """
    if repeats < 1:
        raise ValueError("repeats must be positive")
    for method in methods:
        if method not in (LSTAT, DKW, BJ):
            raise ValueError(f"unknown method {method!r}")
    kwargs = dict(
        alphas=list(alphas),
        measures=_measures(measure, betas),
        methods=list(methods),
        method_repeats=dict(method_repeats or {}),
        split_fraction=split_fraction,
        base_seed=base_seed,
        delta=delta,
        grid=grid,
        bootstrap_B=bootstrap_B,
        score_max=score_max,
    )
    workers = worker_count() if workers is None else workers
    if workers > 1 and repeats > 1:
        with ThreadPoolExecutor(max_workers=min(workers, repeats)) as pool:
            chunks = list(pool.map(lambda r: _one_repeat(table, r, **kwargs), range(repeats)))
    else:
        chunks = [_one_repeat(table, r, **kwargs) for r in range(repeats)]
    records = [rec for chunk in chunks for rec in chunk]
    order = {m: i for i, m in enumerate(methods)}
    records.sort(key=lambda r: (r["alpha"], -1.0 if r["beta"] is None else r["beta"], order[r["method"]], r["repeat"]))
    return records, summarize(records)


def summarize(records: Iterable[dict]) -> list[dict]:
    """Mean and standard error (divisor ``repeats - 1``) per cell and metric."""
    cells: dict[tuple, list[dict]] = {}
    for rec in records:
        cells.setdefault((rec["alpha"], rec["beta"], rec["method"]), []).append(rec)
    out = []
    for (alpha, beta, method), recs in cells.items():
        for metric in METRICS:
            vals = np.array([r[metric] for r in recs], dtype=float)
            vals = vals[~np.isnan(vals)]
            mean = float(vals.mean()) if vals.size else float("nan")
            stderr = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else None
            out.append({"alpha": alpha, "beta": beta, "method": method, "metric": metric, "mean": mean, "stderr": stderr})
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_rows(path: str | Path, fields: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row[f]) for f in fields])
