"""Semi-synthetic (machine, human) score pairs with a controlled rank correlation.

Scores come from a Gaussian copula with Beta marginals.  For a bivariate
normal with correlation ``r`` the Spearman correlation is
``(6 / pi) * arcsin(r / 2)``, so a target Spearman maps to ``r`` in closed form.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import betaincinv, ndtr, ndtri

from .induce import ScoreTable

__all__ = ["SynthConfig", "copula_param", "generate_arrays", "generate_scores"]

DEFAULT_MARGINAL = (0.4, 3.0)


@dataclass(frozen=True)
class SynthConfig:
    n_prompts: int
    target_spearman: float
    set_size: int = 40
    human_marginal: tuple[float, float] = DEFAULT_MARGINAL
    machine_marginal: tuple[float, float] = DEFAULT_MARGINAL
    seed: int = 0

    def __post_init__(self):
        if self.n_prompts < 1 or self.set_size < 1:
            raise ValueError("n_prompts and set_size must be positive")
        if not -1.0 <= self.target_spearman <= 1.0:
            raise ValueError("target_spearman must lie in [-1, 1]")
        if min(self.human_marginal + self.machine_marginal) <= 0:
            raise ValueError("Beta parameters must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["human_marginal"] = list(self.human_marginal)
        d["machine_marginal"] = list(self.machine_marginal)
        return d


def copula_param(target_spearman: float) -> float:
    if abs(target_spearman) > 1.0:
        raise ValueError("target_spearman must lie in [-1, 1]")
    return 2.0 * math.sin(math.pi * target_spearman / 6.0)


def generate_arrays(config: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """``(machine, human)`` score arrays of shape ``(n_prompts, set_size)``.

    Uniform pair ``(i, c)`` sits at a fixed position of a Philox counter
    stream keyed by the seed, so any block of prompts can be regenerated
    on its own.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed)))
    u = rng.random((config.n_prompts, config.set_size, 2))
    u_h = u[..., 0]
    r = copula_param(config.target_spearman)
    # 2 sin(pi / 6) rounds just below 1, so test the target itself
    if config.target_spearman == 1.0:
        u_m = u_h
    elif config.target_spearman == -1.0:
        u_m = 1.0 - u_h
    else:
        z_h = ndtri(u_h)
        z_m = r * z_h + math.sqrt(1.0 - r * r) * ndtri(u[..., 1])
        u_m = ndtr(z_m)
    human = betaincinv(*config.human_marginal, u_h)
    machine = betaincinv(*config.machine_marginal, u_m)
    return np.clip(machine, 0.0, 1.0), np.clip(human, 0.0, 1.0)


def generate_scores(config: SynthConfig) -> ScoreTable:
    machine, human = generate_arrays(config)
    n, k = machine.shape
    width = len(str(n - 1))
    prompts = np.array([f"p{i:0{width}d}" for i in range(n)], dtype=object)
    responses = np.array([f"r{c}" for c in range(k)], dtype=object)
    return ScoreTable(
        np.repeat(prompts, k),
        np.tile(responses, n),
        machine.ravel(),
        human.ravel(),
    )
