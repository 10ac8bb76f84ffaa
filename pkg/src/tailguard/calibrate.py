"""Per-lambda upper confidence bounds and the monotone threshold scan."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import envelopes
from .empirical import sort_sample
from .induce import InducedMatrix
from .risk_measures import (
    CVAR,
    DEFAULT_BOOTSTRAP,
    VAR,
    WeightMeasure,
    estimate_risk,
    ucb,
    variance_cvar,
    variance_general,
    variance_var_bootstrap,
)

__all__ = [
    "METHODS",
    "CalibrationConfig",
    "CalibrationResult",
    "CurvePoint",
    "calibrate",
    "select_lambda",
    "ucb_curve",
]

LSTAT = "lstat"
DKW = "dkw"
BJ = "bj"
METHODS = (LSTAT, DKW, BJ)


@dataclass(frozen=True)
class CalibrationConfig:
    psi: WeightMeasure
    alpha: float
    delta: float = 0.05
    method: str = LSTAT
    bootstrap_B: int = DEFAULT_BOOTSTRAP
    seed: int = 0
    grid: str = "uniform:101"
    # declared upper bound of human scores; envelopes fall back to it past their last level
    score_max: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.delta <= 0.5:
            raise ValueError(f"delta must lie in (0, 0.5], got {self.delta}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.bootstrap_B < 2:
            raise ValueError("bootstrap_B must be at least 2")

    def to_dict(self) -> dict:
        return {
            "measure": self.psi.to_dict(),
            "alpha": self.alpha,
            "delta": self.delta,
            "method": self.method,
            "bootstrap_B": self.bootstrap_B,
            "seed": self.seed,
            "grid": self.grid,
            "score_max": self.score_max,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationConfig":
        return cls(
            psi=WeightMeasure.from_dict(data["measure"]),
            alpha=data["alpha"],
            delta=data["delta"],
            method=data["method"],
            bootstrap_B=data.get("bootstrap_B", DEFAULT_BOOTSTRAP),
            seed=data.get("seed", 0),
            grid=data.get("grid", "uniform:101"),
            score_max=data.get("score_max", 1.0),
        )


@dataclass(frozen=True)
class CurvePoint:
    lam: float
    r_hat: float
    sigma_hat: float | None
    ucb: float

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "r_hat": self.r_hat, "sigma_hat": self.sigma_hat, "ucb": self.ucb}


@dataclass(frozen=True)
class CalibrationResult:
    lambda_hat: float
    curve: list[CurvePoint]
    config: CalibrationConfig
    n: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "lambda_hat": self.lambda_hat,
            "curve": [p.to_dict() for p in self.curve],
            "config": self.config.to_dict(),
            "n": self.n,
        }
        out.update(self.extra)
        return out


def _lstat_sd(s, psi: WeightMeasure, config: CalibrationConfig, j: int) -> float:
    if psi.kind == CVAR:
        var = variance_cvar(s, psi.beta)
    elif psi.kind == VAR:
        var = variance_var_bootstrap(s, psi.beta, config.bootstrap_B, seed=(config.seed, j))
    else:
        var = variance_general(s, psi)
    return math.sqrt(max(var, 0.0))


def ucb_curve(matrix: InducedMatrix, config: CalibrationConfig, progress=None) -> list[CurvePoint]:
    """Point estimate and UCB at every grid lambda.

    At ``lambda <= 0`` no candidate can pass (scores are nonnegative), so the
    induced loss is identically 0 and the bound is exact.  Bootstrap draws for
    column ``j`` use the entropy ``(config.seed, j)``.
    """
    if matrix.n == 0:
        raise ValueError("empty induced matrix")
    psi = config.psi
    curve = []
    for j, lam in enumerate(matrix.grid.values):
        if progress is not None:
            progress(j, len(matrix.grid))
        if lam <= 0.0:
            curve.append(CurvePoint(float(lam), 0.0, 0.0 if config.method == LSTAT else None, 0.0))
            continue
        s = sort_sample(matrix.column(j), 0.0, config.score_max)
        r_hat = estimate_risk(s, psi)
        if config.method == LSTAT:
            sd = _lstat_sd(s, psi, config, j)
            bound = ucb(r_hat, sd, s.n, config.delta)
            curve.append(CurvePoint(float(lam), r_hat, sd, bound))
            continue
        env = envelopes.dkw_envelope(s, config.delta) if config.method == DKW else envelopes.bj_envelope(s, config.delta)
        curve.append(CurvePoint(float(lam), r_hat, None, envelopes.envelope_risk_ucb(env, psi)))
    return curve


def select_lambda(curve: Sequence[CurvePoint] | Sequence[tuple[float, float]], alpha: float) -> float:
    """Largest grid lambda whose UCB, and every UCB before it, is at most ``alpha``.

    Accepts :class:`CurvePoint` records or ``(lambda, ucb)`` pairs ordered by
    lambda.  The scan stops at the first violation even if later bounds dip
    back under ``alpha``.
    """
    pairs = [(p.lam, p.ucb) if isinstance(p, CurvePoint) else (float(p[0]), float(p[1])) for p in curve]
    if not pairs:
        raise ValueError("empty curve")
    lams = np.array([p[0] for p in pairs])
    if np.any(np.diff(lams) <= 0):
        raise ValueError("curve must be ordered by increasing lambda")
    chosen = pairs[0][0]
    for lam, bound in pairs:
        if bound > alpha:
            break
        chosen = lam
    return float(chosen)


def calibrate(matrix: InducedMatrix, config: CalibrationConfig, progress=None) -> CalibrationResult:
    curve = ucb_curve(matrix, config, progress=progress)
    return CalibrationResult(select_lambda(curve, config.alpha), curve, config, matrix.n)
