"""Score tables and the lambda-indexed induced score matrix.

For a prompt ``x`` with candidates ``C(x)``, the accepted set at threshold
``lam`` is ``{y : machine(y) < lam}`` and the induced score is the worst
(largest) human score in it, or 0 when nothing is accepted.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "InducedMatrix",
    "LambdaGrid",
    "ScoreTable",
    "TableFormatError",
    "build_grid",
    "induce_rect",
    "induce_scores",
    "parse_grid_policy",
]

CSV_HEADER = ("prompt_id", "response_id", "machine_score", "human_score")
DEFAULT_GRID_SIZE = 101

# top of the "observed" grid: just above 1.0 so strict m < lam admits m == 1.0
TOP_ABOVE_ONE = float(np.nextafter(1.0, 2.0))


class TableFormatError(ValueError):
    """Malformed score table; ``line`` is the 1-indexed CSV line when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class ScoreTable:
    """Candidate records ``(prompt_id, response_id, machine_score, human_score)``."""

    prompt_ids: np.ndarray
    response_ids: np.ndarray
    machine: np.ndarray
    human: np.ndarray

    def __post_init__(self):
        n = self.machine.shape[0]
        if not (self.prompt_ids.shape[0] == self.response_ids.shape[0] == self.human.shape[0] == n):
            raise TableFormatError("column lengths differ")
        for name, col in (("machine_score", self.machine), ("human_score", self.human)):
            bad = np.flatnonzero(~((col >= 0.0) & (col <= 1.0)))
            if bad.size:
                raise TableFormatError(f"{name} out of [0, 1] in record {int(bad[0])}")

    @classmethod
    def from_records(cls, records: Iterable[Sequence]) -> "ScoreTable":
        rows = list(records)
        seen: set[tuple[str, str]] = set()
        for i, (pid, rid, *_rest) in enumerate(rows):
            key = (str(pid), str(rid))
            if key in seen:
                raise TableFormatError(f"duplicate (prompt_id, response_id) {key}", i + 2)
            seen.add(key)
        return cls(
            np.array([str(r[0]) for r in rows], dtype=object),
            np.array([str(r[1]) for r in rows], dtype=object),
            np.array([float(r[2]) for r in rows], dtype=float),
            np.array([float(r[3]) for r in rows], dtype=float),
        )

    def __len__(self) -> int:
        return int(self.machine.shape[0])

    def unique_prompts(self) -> np.ndarray:
        """Prompt ids in order of first appearance."""
        _, first = np.unique(self.prompt_ids, return_index=True)
        return self.prompt_ids[np.sort(first)]

    def subset(self, prompts: Iterable[str]) -> "ScoreTable":
        keep = np.isin(self.prompt_ids, np.asarray(list(prompts), dtype=object))
        return ScoreTable(self.prompt_ids[keep], self.response_ids[keep], self.machine[keep], self.human[keep])

    def padded(self, prompts: Sequence[str] | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-prompt candidate arrays padded to a rectangle.

        Returns ``(prompt_ids, machine, human)`` where each row holds one
        prompt's candidates sorted by machine score; padding uses
        ``machine = inf`` and ``human = 0``.
        """
        if prompts is None:
            prompts = self.unique_prompts()
        prompts = np.asarray(prompts, dtype=object)
        index = {p: i for i, p in enumerate(prompts)}
        rows = np.fromiter((index.get(p, -1) for p in self.prompt_ids), dtype=np.int64, count=len(self))
        mask = rows >= 0
        rows, machine, human = rows[mask], self.machine[mask], self.human[mask]
        counts = np.bincount(rows, minlength=len(prompts))
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise TableFormatError(f"prompt {prompts[empty[0]]!r} has no candidates")
        order = np.lexsort((machine, rows))
        rows, machine, human = rows[order], machine[order], human[order]
        starts = np.r_[0, np.cumsum(counts)[:-1]]
        cols = np.arange(rows.size) - starts[rows]
        width = int(counts.max())
        m = np.full((len(prompts), width), np.inf)
        h = np.zeros((len(prompts), width))
        m[rows, cols] = machine
        h[rows, cols] = human
        return prompts, m, h

    # -- CSV ----------------------------------------------------------------

    @classmethod
    def read_csv(cls, path: str | Path) -> "ScoreTable":
        with open(path, newline="", encoding="utf-8") as fh:
            return cls.parse_csv(fh)

    @classmethod
    def parse_csv(cls, fh: io.TextIOBase) -> "ScoreTable":
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise TableFormatError(f"expected header {','.join(CSV_HEADER)}", 1)
        records = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise TableFormatError(f"expected 4 fields, got {len(row)}", line)
            try:
                m, h = float(row[2]), float(row[3])
            except ValueError:
                raise TableFormatError("scores must be decimal numbers", line) from None
            if not (0.0 <= m <= 1.0 and 0.0 <= h <= 1.0):
                raise TableFormatError("scores must lie in [0, 1]", line)
            records.append((row[0], row[1], m, h))
        if not records:
            raise TableFormatError("table has no records")
        return cls.from_records(records)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in zip(self.prompt_ids, self.response_ids, self.machine, self.human):
                writer.writerow((row[0], row[1], repr(float(row[2])), repr(float(row[3]))))


@dataclass(frozen=True)
class LambdaGrid:
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 1 or self.values.size < 2:
            raise ValueError("grid needs at least two points")
        if np.any(np.diff(self.values) <= 0):
            raise ValueError("grid must be strictly increasing")

    def __len__(self) -> int:
        return int(self.values.size)

    def index_of(self, lam: float) -> int:
        """Position of ``lam`` on the grid; raises ``KeyError`` when absent."""
        i = int(np.argmin(np.abs(self.values - lam)))
        if abs(self.values[i] - lam) > 1e-12:
            raise KeyError(f"lambda {lam!r} is not on the grid")
        return i


def parse_grid_policy(text: str) -> tuple[str, int | None]:
    """Parse ``uniform[:M]``, ``quantile[:M]`` or ``observed``."""
    text = text.strip().lower()
    if text == "observed":
        return "observed", None
    name, _, size = text.partition(":")
    if name in ("uniform", "quantile"):
        if not size:
            return name, DEFAULT_GRID_SIZE
        try:
            return name, int(size)
        except ValueError:
            pass
    raise ValueError(f"grid policy must be uniform:M, quantile:M or observed, got {text!r}")


def build_grid(table: ScoreTable, policy: str = "uniform", m: int = DEFAULT_GRID_SIZE) -> LambdaGrid:
    if len(table) == 0:
        raise ValueError("empty score table")
    if policy == "uniform":
        if m < 2:
            raise ValueError("uniform grid needs m >= 2")
        return LambdaGrid(np.linspace(0.0, 1.0, m))
    if policy == "observed":
        values = np.unique(np.r_[0.0, table.machine, TOP_ABOVE_ONE])
        return LambdaGrid(values)
    if policy == "quantile":
        # machine scores have no natural scale; space the grid by their quantiles
        if m < 3:
            raise ValueError("quantile grid needs m >= 3")
        probs = np.arange(1, m - 1) / (m - 1)
        inner = np.quantile(table.machine, probs, method="inverted_cdf")
        return LambdaGrid(np.unique(np.r_[0.0, inner, TOP_ABOVE_ONE]))
    raise ValueError(f"unknown grid policy {policy!r}")


@dataclass(frozen=True)
class InducedMatrix:
    prompt_ids: np.ndarray
    grid: LambdaGrid
    values: np.ndarray  # (n prompts, m grid points)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    def column(self, j: int) -> np.ndarray:
        return self.values[:, j]


def induce_rect(machine: np.ndarray, human: np.ndarray, grid_values: np.ndarray) -> np.ndarray:
    """Induced scores for candidates laid out as ``(prompts, candidates)`` arrays.

    Padding entries must carry ``machine = inf``.
    """
    order = np.argsort(machine, axis=1, kind="stable")
    machine = np.take_along_axis(machine, order, axis=1)
    worst = np.maximum.accumulate(np.take_along_axis(human, order, axis=1), axis=1)
    values = np.zeros((machine.shape[0], len(grid_values)))
    rows = np.arange(machine.shape[0])
    for j, lam in enumerate(grid_values):
        # rows are sorted by machine score, so the accepted set is a prefix
        accepted = (machine < lam).sum(axis=1)
        hit = accepted > 0
        values[hit, j] = worst[rows[hit], accepted[hit] - 1]
    return values


def induce_scores(table: ScoreTable, grid: LambdaGrid, prompts: Sequence[str] | None = None) -> InducedMatrix:
    prompt_ids, machine, human = table.padded(prompts)
    return InducedMatrix(prompt_ids, grid, induce_rect(machine, human, grid.values))
