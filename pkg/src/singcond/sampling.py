"""Seeded samplers for the Monte Carlo paths.

Two sampler kinds are supported: products of 1-D inverse-CDF marginals
(normal, uniform) and rejection sampling from a bounded box under a
declared density bound. Every draw comes from a substream keyed by
``(seed, *key)`` so results do not depend on how work is scheduled.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import SamplerError
from .expr import Expression

CHUNK_SIZE = 1 << 16


@dataclass(frozen=True)
class Marginal:
    dist: str  # "normal" | "uniform"
    loc: float = 0.0
    scale: float = 1.0
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if self.dist not in ("normal", "uniform"):
            raise SamplerError(f"unsupported marginal {self.dist!r}")
        if self.dist == "normal" and self.scale <= 0:
            raise SamplerError("normal scale must be positive")
        if self.dist == "uniform" and not self.high > self.low:
            raise SamplerError("uniform needs high > low")

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        """Inverse CDF."""
        if self.dist == "uniform":
            return self.low + (self.high - self.low) * u
        # keep u strictly inside (0, 1) for the normal quantile
        u = np.clip(u, 1e-300, 1 - 2**-53)
        return self.loc + self.scale * ndtri(u)

    def std(self) -> float:
        if self.dist == "uniform":
            return (self.high - self.low) / np.sqrt(12.0)
        return self.scale

    def to_dict(self) -> dict:
        if self.dist == "uniform":
            return {"dist": "uniform", "low": self.low, "high": self.high}
        return {"dist": "normal", "loc": self.loc, "scale": self.scale}


@dataclass(frozen=True)
class SamplerSpec:
    """Either ``kind="product"`` with ``marginals`` or ``kind="rejection"``
    with ``box`` and ``bound`` (an upper bound of the density on the box)."""

    kind: str
    marginals: tuple = ()
    box: tuple = ()
    bound: float = 0.0

    def __post_init__(self):
        if self.kind == "product":
            if not self.marginals:
                raise SamplerError("product sampler needs at least one marginal")
        elif self.kind == "rejection":
            if not self.box or self.bound <= 0:
                raise SamplerError("rejection sampler needs a box and a positive density bound")
            for a, b in self.box:
                if not b > a:
                    raise SamplerError(f"degenerate rejection box side ({a}, {b})")
        else:
            raise SamplerError(f"unknown sampler kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return len(self.marginals) if self.kind == "product" else len(self.box)

    @classmethod
    def standard_normal(cls, dim: int) -> "SamplerSpec":
        return cls("product", tuple(Marginal("normal") for _ in range(dim)))

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerSpec":
        kind = d.get("kind")
        if kind == "product":
            margs = tuple(Marginal(**m) for m in d.get("marginals", ()))
            return cls("product", margs)
        if kind == "rejection":
            box = tuple((float(a), float(b)) for a, b in d.get("box", ()))
            return cls("rejection", box=box, bound=float(d.get("bound", 0.0)))
        raise SamplerError(f"unknown sampler kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "product":
            return {"kind": "product", "marginals": [m.to_dict() for m in self.marginals]}
        return {"kind": "rejection", "box": [list(b) for b in self.box], "bound": self.bound}


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key)))


def draw(spec: SamplerSpec, density: Expression | None, n: int,
         rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points of shape ``(n, dim)``."""
    if spec.kind == "product":
        u = rng.random((n, spec.dim))
        return np.column_stack([m.from_uniform(u[:, i]) for i, m in enumerate(spec.marginals)])
    if density is None:
        raise SamplerError("rejection sampling needs the density expression")
    lo = np.array([a for a, _ in spec.box])
    hi = np.array([b for _, b in spec.box])
    out = []
    have = 0
    rounds = 0
    while have < n:
        rounds += 1
        if rounds > 10_000:
            raise SamplerError("rejection sampler acceptance rate too low")
        m = max(2 * (n - have), 1024)
        x = lo + (hi - lo) * rng.random((m, spec.dim))
        f = density.eval_array(x)
        if np.any(f > spec.bound * (1 + 1e-12)):
            raise SamplerError("density exceeds the declared bound inside the rejection box")
        if np.any(f < 0):
            raise SamplerError("density is negative inside the rejection box")
        keep = rng.random(m) * spec.bound < np.nan_to_num(f, nan=0.0)
        out.append(x[keep])
        have += int(keep.sum())
    return np.concatenate(out)[:n]


def worker_count() -> int:
    env = os.environ.get("SINGCOND_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


@dataclass
class StreamPlan:
    """Fixed partition of ``total`` draws into chunks of ``CHUNK_SIZE``."""

    total: int
    sizes: list = field(init=False)

    def __post_init__(self):
        full, rest = divmod(int(self.total), CHUNK_SIZE)
        self.sizes = [CHUNK_SIZE] * full + ([rest] if rest else [])


def map_streams(fn, seed: int, key: tuple, total: int, workers: int | None = None):
    """Run ``fn(rng, size)`` for each chunk of the plan and return results in chunk order.

    The result list is independent of ``workers``; callers reduce it in order.
    """
    plan = StreamPlan(total)
    jobs = [(substream(seed, *key, i), size) for i, size in enumerate(plan.sizes)]
    workers = workers or worker_count()
    if workers <= 1 or len(jobs) <= 1:
        return [fn(rng, size) for rng, size in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
