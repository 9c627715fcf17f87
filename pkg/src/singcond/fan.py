"""Fan-measure conditional densities.

The fan measure of ``Phi = (phi, psi)`` at level ``s`` is the limit of
``P(psi(X) in B | |phi(X) - s| < eps)`` as ``eps -> 0``. It is computed here
by Monte Carlo over shrinking tubes, in closed form through a user-supplied
inverse of ``Phi``, through the implicit-function weight
``|d phi / d x1|^-1`` for shearing maps, and as the textbook ratio
``f_{U,V}(u, s) / f_V(s)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NormalizationError, NullConditioningError, RoundTripError
from .expr import Expression, Var, as_expression
from .geometry import LevelSetProblem, jacobian_matrix
from .sampling import SamplerSpec, draw, map_streams
from .tables import DensityTable, normalize

DEFAULT_EPSILONS = (0.2, 0.1, 0.05, 0.025, 0.0125)
DEFAULT_SAMPLES = 1_000_000
ROUND_TRIP_TOL = 1e-8
NULL_MARGINAL = 1e-12


@dataclass(frozen=True)
class TubeSchedule:
    epsilons: tuple = DEFAULT_EPSILONS
    samples_per_eps: int = DEFAULT_SAMPLES
    seed: int = 0

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        object.__setattr__(self, "epsilons", eps)
        if not eps:
            raise ValueError("need at least one epsilon")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        if eps[-1] < 1e-6:
            raise ValueError("epsilons must be >= 1e-6")
        if self.samples_per_eps < 10_000:
            raise ValueError("samples_per_eps must be >= 1e4")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class TubeRow:
    eps: float
    estimate: float  # nan when no sample fell in the tube
    stderr: float
    hits: int  # samples with psi in B inside the tube
    inside: int  # samples inside the tube
    skipped: int  # samples where phi or psi was not finite


@dataclass
class TubeResult:
    rows: list
    extrapolated: float
    extrapolated_stderr: float
    monotone: bool
    notes: list = field(default_factory=list)

    def as_sequence(self):
        return [(r.eps, r.estimate, r.stderr) for r in self.rows]


def _ratio_stderr(hits, inside):
    if inside == 0:
        return math.nan
    p = hits / inside
    return math.sqrt(max(p * (1 - p), 0.0) / inside)


def _pooled_stderr(hits, inside):
    """Per-eps standard errors from the proportion pooled over all eps.

    Weighting the extrapolation by each row's own binomial error lets a row
    that happens to see zero hits claim near-zero error and dominate the
    fit. The pooled proportion gives weights proportional to the tube counts.
    """
    hits = np.asarray(hits, dtype=float)
    inside = np.asarray(inside, dtype=float)
    total = inside.sum()
    if total == 0:
        return np.full(len(inside), math.nan)
    p = hits.sum() / total
    p = min(max(p, 0.5 / total), 1.0 - 0.5 / total)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(inside > 0, np.sqrt(p * (1 - p) / inside), math.nan)


def _tube_counts(p: LevelSetProblem, sampler: SamplerSpec, eps: float, seed: int, key: tuple,
                 total: int, classify, nbins: int, workers=None):
    """Count samples in the eps-tube and, among them, per ``classify`` bin.

    ``classify(psi_values) -> int array`` with -1 for "no bin".
    Returns ``(inside, bin_counts, skipped)``; integer sums are order independent.
    """
    s = np.asarray(p.level, dtype=float)

    def chunk(rng, size):
        x = draw(sampler, p.density, size, rng)
        phi = np.column_stack([e.eval_array(x) for e in p.phi])
        psi = np.column_stack([e.eval_array(x) for e in p.psi]) if p.psi else np.zeros((size, 0))
        ok = np.all(np.isfinite(phi), axis=1) & np.all(np.isfinite(psi), axis=1)
        dist = np.linalg.norm(phi - s, axis=1) if p.k > 1 else np.abs(phi[:, 0] - s[0])
        tube = ok & (dist < eps)
        bins = classify(psi[tube])
        counts = np.bincount(bins[bins >= 0], minlength=nbins)[:nbins]
        return int(tube.sum()), counts.astype(np.int64), int((~ok).sum())

    parts = map_streams(chunk, seed, key, total, workers)
    inside = sum(c[0] for c in parts)
    counts = np.zeros(nbins, dtype=np.int64)
    for c in parts:
        counts += c[1]
    skipped = sum(c[2] for c in parts)
    return inside, counts, skipped


def extrapolate_eps2(eps, est, se):
    """Weighted least-squares fit ``est = a + b eps^2``; returns ``(a, stderr(a))``."""
    eps = np.asarray(eps, dtype=float)
    est = np.asarray(est, dtype=float)
    se = np.asarray(se, dtype=float)
    ok = np.isfinite(est) & np.isfinite(se)
    eps, est, se = eps[ok], est[ok], se[ok]
    if len(est) == 0:
        return math.nan, math.nan
    if len(est) == 1 or np.all(est == est[0]):
        return float(est[-1]), float(se[-1])
    # binomial stderr is 0 at p in {0, 1}; floor it so the weights stay finite
    se = np.maximum(se, 1e-12)
    X = np.column_stack([np.ones_like(eps), eps**2])
    W = 1.0 / se**2
    XtW = X.T * W
    cov = np.linalg.inv(XtW @ X)
    coef = cov @ (XtW @ est)
    return float(coef[0]), float(math.sqrt(cov[0, 0]))


def _monotone(rows, nsigma=2.0):
    """False when consecutive estimates reverse direction by more than ``nsigma`` errors."""
    good = [r for r in rows if math.isfinite(r.estimate)]
    steps = []
    for a, b in zip(good, good[1:]):
        d = b.estimate - a.estimate
        if abs(d) > nsigma * math.hypot(a.stderr, b.stderr):
            steps.append(math.copysign(1, d))
    return all(x == steps[0] for x in steps) if steps else True


def _box_classifier(box):
    lo = np.array([a for a, _ in box], dtype=float)
    hi = np.array([b for _, b in box], dtype=float)

    def classify(psi):
        inside = np.all((psi >= lo) & (psi <= hi), axis=1)
        return np.where(inside, 0, -1)

    return classify


def fan_tube_estimate(p: LevelSetProblem, box, sched: TubeSchedule,
                      sampler: SamplerSpec | None = None, workers: int | None = None) -> TubeResult:
    """Estimate ``P(psi(X) in box | |phi(X) - s| < eps)`` for each eps of the schedule.

    ``box`` is a list of ``(lo, hi)`` pairs, one per psi component (infinite
    bounds allowed). Each eps uses its own ``samples_per_eps`` draws from
    substreams keyed by ``(seed, eps index, chunk)``; the sequence is then
    extrapolated linearly in ``eps^2`` to ``eps = 0``.
    """
    box = [(float(a), float(b)) for a, b in box]
    if len(box) != len(p.psi):
        raise ValueError(f"box has {len(box)} sides, psi has {len(p.psi)} components")
    sampler = sampler or SamplerSpec.standard_normal(p.dim)
    if sampler.dim != p.dim:
        raise ValueError(f"sampler draws in R^{sampler.dim}, problem lives in R^{p.dim}")
    classify = _box_classifier(box)
    rows = []
    notes = []
    for i, eps in enumerate(sched.epsilons):
        inside, counts, skipped = _tube_counts(
            p, sampler, eps, sched.seed, (i,), sched.samples_per_eps, classify, 1, workers)
        hits = int(counts[0])
        if inside == 0:
            notes.append(f"eps={eps:g}: no samples inside the tube")
            rows.append(TubeRow(eps, math.nan, math.nan, 0, 0, skipped))
            continue
        rows.append(TubeRow(eps, hits / inside, _ratio_stderr(hits, inside), hits, inside, skipped))
    fit_se = _pooled_stderr([r.hits for r in rows], [r.inside for r in rows])
    a, se = extrapolate_eps2([r.eps for r in rows], [r.estimate for r in rows], fit_se)
    monotone = _monotone(rows)
    if not monotone:
        notes.append("eps-sequence is not monotone; limsup and lim may differ")
    return TubeResult(rows, a, se, monotone, notes)


def fan_tube_density(p: LevelSetProblem, grid, sched: TubeSchedule,
                     sampler: SamplerSpec | None = None, workers: int | None = None) -> DensityTable:
    """Histogram version of :func:`fan_tube_estimate` on cells centred at ``grid``.

    Each cell probability is extrapolated in eps^2 separately and divided by
    the cell width.
    """
    if len(p.psi) != 1:
        raise ValueError("density tables need a one-dimensional psi")
    grid = np.asarray(grid, dtype=float)
    mids = 0.5 * (grid[1:] + grid[:-1])
    edges = np.concatenate([[grid[0] - (mids[0] - grid[0])], mids, [grid[-1] + (grid[-1] - mids[-1])]])
    widths = np.diff(edges)
    nb = len(grid)
    sampler = sampler or SamplerSpec.standard_normal(p.dim)

    def classify(psi):
        v = psi[:, 0]
        idx = np.searchsorted(edges, v, side="right") - 1
        return np.where((idx >= 0) & (idx < nb), idx, -1)

    est = np.full((len(sched.epsilons), nb), np.nan)
    hits = np.zeros((len(sched.epsilons), nb))
    insides = np.zeros(len(sched.epsilons))
    for i, eps in enumerate(sched.epsilons):
        inside, counts, _ = _tube_counts(
            p, sampler, eps, sched.seed, (i,), sched.samples_per_eps, classify, nb, workers)
        if inside == 0:
            continue
        est[i] = counts / inside
        hits[i] = counts
        insides[i] = inside
    vals = np.empty(nb)
    errs = np.empty(nb)
    for j in range(nb):
        a, e = extrapolate_eps2(sched.epsilons, est[:, j], _pooled_stderr(hits[:, j], insides))
        vals[j], errs[j] = a, e
    if not np.all(np.isfinite(vals)):
        raise ValueError("no samples fell inside any tube; increase samples_per_eps")
    # extrapolation can dip slightly below zero in empty cells
    vals = np.maximum(vals, 0.0)
    return DensityTable(grid, vals / widths, 1.0, "tube", errs / widths)


def _u_point(p: LevelSetProblem, u) -> np.ndarray:
    return np.concatenate([np.asarray(p.level, dtype=float), np.atleast_1d(np.asarray(u, dtype=float))])


def _require_1d(p: LevelSetProblem):
    if p.dim - p.k != 1:
        raise ValueError("density tables are one-dimensional: need n - k == 1")


def fan_density_diffeo(p: LevelSetProblem, inverse, grid, support=(-math.inf, math.inf)) -> DensityTable:
    """Fan density ``f(Phi^-1(s, u)) |det J Phi^-1(s, u)|``, normalized over u.

    ``inverse`` lists the n components of ``Phi^-1`` as expressions in
    ``y = (y1..yn)`` written as ``x1..xn``. The round trip
    ``Phi(Phi^-1(s, u)) = (s, u)`` is verified on the grid; grid points where
    an expression is singular are skipped.
    """
    _require_1d(p)
    if p.m != p.dim:
        raise ValueError("Phi must map R^n to R^n (m == n) to be inverted")
    inv = tuple(as_expression(e, p.dim) for e in inverse)
    if len(inv) != p.dim:
        raise ValueError(f"inverse needs {p.dim} components, got {len(inv)}")
    comps = (*p.phi, *p.psi)
    for u in np.asarray(grid, dtype=float):
        y = _u_point(p, u)
        try:
            x = np.array([e.evaluate(y) for e in inv])
            back = np.array([e.evaluate(x) for e in comps])
        except DomainError:
            continue
        err = float(np.max(np.abs(back - y)))
        if err > ROUND_TRIP_TOL * max(1.0, float(np.max(np.abs(y)))):
            raise RoundTripError(f"Phi(Phi^-1(y)) != y at y={y.tolist()}: got {back.tolist()}")

    def weight(u):
        y = _u_point(p, u)
        x = [e.evaluate(y) for e in inv]
        J = jacobian_matrix(inv, y)
        return p.density_at(x) * abs(float(np.linalg.det(J)))

    return normalize(weight, grid, "diffeo", support)


def fan_density_shear(p: LevelSetProblem, chi, grid, support=(-math.inf, math.inf)) -> DensityTable:
    """Fan density for ``Phi(x) = (phi(x), x2, ..., xn)``.

    ``chi(y)`` solves ``phi(chi(y), y2, ..., yn) = y1`` for the first
    coordinate. By the implicit function theorem ``|det J Phi^-1|`` equals
    ``|d phi / d x1|^-1`` at ``Phi^-1(y)``.
    """
    _require_1d(p)
    if p.k != 1:
        raise ValueError("the shearing construction needs a scalar constraint")
    expected = tuple(Var(i) for i in range(2, p.dim + 1))
    if tuple(e.root for e in p.psi) != expected:
        raise ValueError("the shearing construction needs psi = (x2, ..., xn)")
    chi = as_expression(chi, p.dim)
    s = p.level[0]

    def point(u):
        y = _u_point(p, u)
        return np.concatenate([[chi.evaluate(y)], y[1:]])

    for u in np.asarray(grid, dtype=float):
        try:
            x = point(u)
            res = abs(p.phi[0].evaluate(x) - s)
            d1 = p.phi[0].grad(x)[0]
        except DomainError:
            continue
        if res > ROUND_TRIP_TOL * max(1.0, abs(s)):
            raise RoundTripError(f"implicit solution residual {res:.3g} at u={u}")
        if d1 == 0.0:
            raise ValueError(f"d phi / d x1 vanishes at u={u}")

    def weight(u):
        x = point(u)
        d1 = p.phi[0].grad(x)[0]
        if d1 == 0.0:
            raise DomainError("vanishing partial derivative")
        return p.density_at(x) / abs(d1)

    return normalize(weight, grid, "shear", support)


def conditional_density_1d(joint, s: float, grid, support=(-math.inf, math.inf)) -> DensityTable:
    """Textbook ``f_{U|V=s}(u) = f_{U,V}(u, s) / f_V(s)`` with ``f_V(s)`` by quadrature.

    ``joint`` is an expression in ``(x1, x2) = (u, v)``.
    """
    joint = as_expression(joint, 2)
    if joint.max_index > 2:
        raise ValueError("joint density must be a function of (u, v) = (x1, x2)")
    try:
        table = normalize(lambda u: joint.evaluate((u, s)), grid, "conditional", support)
    except NormalizationError as exc:
        raise NullConditioningError(f"f_V({s}) vanishes: conditioning on a null region of V") from exc
    if table.normalization < NULL_MARGINAL:
        raise NullConditioningError(f"f_V({s}) = {table.normalization:.3g}: conditioning on a null region of V")
    return table
