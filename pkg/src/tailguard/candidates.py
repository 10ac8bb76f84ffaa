"""Candidate-set generation with quality, diversity and set-size controls.

The sampler, quality, similarity and confidence functions are pluggable.
Mock implementations are provided so the pipeline runs without a language
model: a seeded Zipf token sampler, a normalised pseudo-perplexity and a
hash-based scorer pair.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import betaincinv, ndtr, ndtri

from .induce import ScoreTable, TableFormatError
from .synth import copula_param

__all__ = [
    "GenerationConfig",
    "MockLanguageModel",
    "PoolSampler",
    "generate_candidate_set",
    "lcs_length",
    "mock_scores",
    "read_pool",
    "rouge_l",
    "score_candidates",
]

POOL_HEADER = ("prompt_id", "response_id", "text")

Sampler = Callable[[str, int, int], str]


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Longest common subsequence length, O(|a| |b|) time and O(|b|) memory."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(a: Sequence, b: Sequence) -> float:
    """ROUGE-L F-measure between two token sequences (0 if either is empty)."""
    lcs = lcs_length(a, b)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(a), lcs / len(b)
    return 2 * p * r / (p + r)


def _tokens(text: str) -> list[str]:
    return text.split()


def text_similarity(a: str, b: str) -> float:
    return rouge_l(_tokens(a), _tokens(b))


@dataclass(frozen=True)
class GenerationConfig:
    quality_threshold: float = 2.61
    similarity_threshold: float = 0.26
    confidence_threshold: float = 32
    k_max: int = 40
    seed: int = 0
    # recorded for provenance; the mock sampler only mixes them into its seed
    temperature: float = 0.8
    top_p: float = 0.95

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError("k_max must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


def generate_candidate_set(
    prompt: str,
    sampler: Sampler,
    quality_fn: Callable[[str, str], float],
    similarity_fn: Callable[[str, str], float] = text_similarity,
    confidence_fn: Callable[[list[str]], float] = len,
    config: GenerationConfig = GenerationConfig(),
) -> list[str]:
    """Draw up to ``k_max`` responses and keep the good, mutually dissimilar ones.

    Draw ``k`` is ``sampler(prompt, config.seed, k)``.  It is kept when its
    quality score is below ``quality_threshold`` and its largest similarity to
    an already kept response is at most ``similarity_threshold`` (0 for an
    empty set).  Sampling stops once ``confidence_fn(kept)`` reaches
    ``confidence_threshold``.
    """
    kept: list[str] = []
    for k in range(config.k_max):
        y = sampler(prompt, config.seed, k)
        if not quality_fn(prompt, y) < config.quality_threshold:
            continue
        if max((similarity_fn(y, other) for other in kept), default=0.0) > config.similarity_threshold:
            continue
        kept.append(y)
        if confidence_fn(kept) >= config.confidence_threshold:
            break
    return kept


def _stable_int(*parts) -> int:
    digest = hashlib.sha256("\x1f".join(map(repr, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little")


class MockLanguageModel:
    """Seeded Zipf unigram "language model" over tokens ``w0 .. w{V-1}``.

    :meth:`sample` is the sampler and :meth:`quality` a pseudo-perplexity,
    ``exp(mean surprisal / entropy)``, which sits near ``e`` for typical draws.
    """

    def __init__(self, vocab_size: int = 5000, exponent: float = 0.9, length: tuple[int, int] = (4, 12),
                 temperature: float = 0.8, top_p: float = 0.95):
        if vocab_size < 2 or length[0] < 1 or length[1] < length[0]:
            raise ValueError("invalid mock model parameters")
        w = np.arange(1, vocab_size + 1, dtype=float) ** -exponent
        self.probs = w / w.sum()
        self.vocab = [f"w{i}" for i in range(vocab_size)]
        self._surprisal = dict(zip(self.vocab, -np.log(self.probs)))
        self._unknown = float(-np.log(self.probs[-1]))
        self.entropy = float(-(self.probs * np.log(self.probs)).sum())
        self.length = length
        self.salt = (float(temperature), float(top_p))

    def sample(self, prompt: str, seed: int, k: int) -> str:
        rng = np.random.default_rng(np.random.SeedSequence([_stable_int(prompt, self.salt), seed, k]))
        n = int(rng.integers(self.length[0], self.length[1] + 1))
        return " ".join(self.vocab[i] for i in rng.choice(len(self.vocab), size=n, p=self.probs))

    def quality(self, prompt: str, response: str) -> float:
        toks = _tokens(response)
        if not toks:
            return math.inf
        mean = sum(self._surprisal.get(t, self._unknown) for t in toks) / len(toks)
        return math.exp(mean / self.entropy)


class PoolSampler:
    """Replays pre-generated responses: draw ``k`` is the prompt's ``k``-th pooled text."""

    def __init__(self, pool: dict[str, list[tuple[str, str]]]):
        self.pool = pool

    def budget(self, prompt: str) -> int:
        return len(self.pool[prompt])

    def __call__(self, prompt: str, seed: int, k: int) -> str:
        return self.pool[prompt][k][1]


def read_pool(path: str | Path) -> dict[str, list[tuple[str, str]]]:
    """Read ``prompt_id,response_id,text`` rows grouped by prompt in file order."""
    pool: dict[str, list[tuple[str, str]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != POOL_HEADER:
            raise TableFormatError(f"expected header {','.join(POOL_HEADER)}", 1)
        seen = set()
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise TableFormatError(f"expected 3 fields, got {len(row)}", reader.line_num)
            if (row[0], row[1]) in seen:
                raise TableFormatError(f"duplicate (prompt_id, response_id) {(row[0], row[1])}", reader.line_num)
            seen.add((row[0], row[1]))
            pool.setdefault(row[0], []).append((row[1], row[2]))
    if not pool:
        raise TableFormatError("pool has no records")
    return pool


def mock_scores(text: str, rho: float = 0.57, seed: int = 0,
                marginal: tuple[float, float] = (0.4, 3.0)) -> tuple[float, float]:
    """Deterministic ``(machine, human)`` scores for a text, coupled by a Gaussian copula."""
    u = np.random.default_rng(np.random.SeedSequence([_stable_int(text), seed])).random(2)
    r = copula_param(rho)
    z_h = ndtri(u[0])
    z_m = r * z_h + math.sqrt(max(1.0 - r * r, 0.0)) * ndtri(u[1])
    human = float(betaincinv(*marginal, u[0]))
    machine = float(betaincinv(*marginal, ndtr(z_m)))
    return min(max(machine, 0.0), 1.0), min(max(human, 0.0), 1.0)


def score_candidates(sets: dict[str, list[tuple[str, str]]], rho: float = 0.57, seed: int = 0) -> ScoreTable:
    """Score ``{prompt: [(response_id, text), ...]}`` with :func:`mock_scores`.

    Prompts whose set is empty contribute no rows.
    """
    records = []
    for prompt, items in sets.items():
        for rid, text in items:
            machine, human = mock_scores(text, rho, seed)
            records.append((prompt, rid, machine, human))
    if not records:
        raise ValueError("no candidates to score")
    return ScoreTable.from_records(records)
