"""Density tables: the common output of every conditioning method."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NormalizationError
from .quadrature import adaptive_simpson, trapezoid

METHODS = ("tube", "diffeo", "shear", "canonical", "bayes", "conditional")

QUADRATURE_TOL = 2e-3
TAIL_EXTENSION = 0.25
TAIL_RATIO = 1e-9
NORMALIZATION_RTOL = 1e-8


class TailWarning(UserWarning):
    """Density is not negligible at the edge of the normalization window."""


class SkippedPointsWarning(UserWarning):
    """Some quadrature nodes hit a singular point of an expression and were skipped."""


@dataclass
class DensityTable:
    grid: np.ndarray
    values: np.ndarray
    normalization: float
    method: str
    stderr: np.ndarray | None = None
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)
            if self.stderr.shape != self.values.shape:
                raise ValueError("stderr must match values")
        if self.grid.ndim != 1 or self.grid.shape != self.values.shape:
            raise ValueError("grid and values must be 1-D arrays of equal length")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("density values must be finite and non-negative")
        if self.method not in METHODS:
            raise ValueError(f"unknown method tag {self.method!r}")
        if not self.normalization > 0:
            raise ValueError("normalization must be positive")

    def __len__(self):
        return len(self.grid)

    def integral(self) -> float:
        return trapezoid(self.values, self.grid)

    def tolerance(self) -> float:
        """Allowed deviation of :meth:`integral` from 1."""
        if self.stderr is None:
            return QUADRATURE_TOL
        w = np.gradient(self.grid) if len(self.grid) > 1 else np.ones(1)
        return 3.0 * float(np.sqrt(np.sum((self.stderr * w) ** 2)))

    def is_normalized(self) -> bool:
        return abs(self.integral() - 1.0) <= self.tolerance()

    def at(self, u: float) -> float:
        return float(np.interp(u, self.grid, self.values))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = ["u", "density"] + (["stderr"] if self.stderr is not None else [])
            w.writerow(header)
            for i, (u, v) in enumerate(zip(self.grid, self.values)):
                row = [_fmt(u), _fmt(v)]
                if self.stderr is not None:
                    row.append(_fmt(self.stderr[i]))
                w.writerow(row)
        return path

    @classmethod
    def from_csv(cls, path, method: str = "canonical") -> "DensityTable":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:2] != ["u", "density"]:
            raise ValueError(f"{path}: missing 'u,density' header")
        has_se = len(rows[0]) > 2 and rows[0][2] == "stderr"
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
        if data.size == 0:
            data = np.zeros((0, 3 if has_se else 2))
        grid, values = data[:, 0], data[:, 1]
        se = data[:, 2] if has_se else None
        return cls(grid, values, 1.0, method, se)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def uniform_grid(lo: float, hi: float, points: int) -> np.ndarray:
    return np.linspace(float(lo), float(hi), int(points))


def normalization_window(grid, support=(-math.inf, math.inf), extension=TAIL_EXTENSION):
    grid = np.asarray(grid, dtype=float)
    width = grid[-1] - grid[0]
    lo = max(grid[0] - extension * width, support[0])
    hi = min(grid[-1] + extension * width, support[1])
    return lo, hi


def normalize(f, grid, method: str, support=(-math.inf, math.inf),
              rtol: float = NORMALIZATION_RTOL) -> DensityTable:
    """Evaluate the unnormalized density ``f`` on ``grid`` and normalize it.

    The normalizing constant is an adaptive Simpson integral over the grid's
    hull extended by 25% per side (clipped to ``support``). A
    :class:`TailWarning` is emitted when ``f`` at an unclipped edge of that
    window exceeds ``1e-9`` times the peak, and a :class:`NormalizationError`
    when the mass keeps growing as the window is widened.
    """
    grid = np.asarray(grid, dtype=float)
    if len(grid) < 2:
        raise NormalizationError("need at least two grid points")
    notes = []
    raw, skipped = _evaluate_on(f, grid)
    lo, hi = normalization_window(grid, support)
    res = adaptive_simpson(f, lo, hi, rtol=rtol)
    z = res.value
    if res.skipped or skipped:
        msg = f"{len(res.skipped) + len(skipped)} singular point(s) skipped during {method} normalization"
        notes.append(msg)
        warnings.warn(msg, SkippedPointsWarning, stacklevel=2)
    if not (math.isfinite(z) and z > 0):
        raise NormalizationError(f"normalizing integral is {z!r}")

    peak = max(float(np.max(raw)), 0.0)
    edges = [x for x, clipped in ((lo, lo == support[0]), (hi, hi == support[1])) if not clipped]
    heavy = [float(x) for x in edges if _safe(f, x) > TAIL_RATIO * peak]
    if heavy:
        _check_divergence(f, grid, support, z, rtol)
        msg = (f"{method}: density at normalization edge(s) {heavy} exceeds "
               f"{TAIL_RATIO:g} x peak; truncated tail mass may matter")
        notes.append(msg)
        warnings.warn(msg, TailWarning, stacklevel=2)
    return DensityTable(grid, raw / z, z, method, notes=notes)


def _evaluate_on(f, grid):
    out = np.empty(len(grid))
    skipped = []
    for i, u in enumerate(grid):
        v = _safe(f, u)
        if v is None:
            skipped.append(u)
            v = 0.0
        out[i] = v
    if np.any(out < 0):
        raise NormalizationError("density is negative on the grid")
    return out, skipped


def _safe(f, u):
    try:
        v = float(f(float(u)))
    except ArithmeticError:
        return None
    return v if math.isfinite(v) else None


def _check_divergence(f, grid, support, z, rtol):
    prev = z
    increments = []
    for k in range(1, 5):
        lo, hi = normalization_window(grid, support, TAIL_EXTENSION * 2**k)
        zk = adaptive_simpson(f, lo, hi, rtol=rtol).value
        increments.append(zk - prev)
        prev = zk
    d3, d4 = increments[-2], increments[-1]
    if d4 > 1e-6 * z and d4 >= 0.75 * d3:
        raise NormalizationError("normalization keeps growing as the window widens; tail looks non-integrable")
