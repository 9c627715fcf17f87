"""Canonically induced measure on a level set, by Hausdorff-measure quadrature.

``mu_M(A) = int_A f dH^r / int_M f dH^r`` is evaluated through an explicit
chart ``g`` with the area formula: ``dH^r = sqrt(det(Dg^T Dg)) du``. Nothing
here depends on a constraint map, which is what makes the result
parametrization-free.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartError, DomainError, NormalizationError, ProjectionError
from .expr import Expression, as_expression
from .geometry import Chart, LevelSetProblem, project_to_level_set, surface_jacobian
from .quadrature import DEFAULT_RTOL, adaptive_simpson, adaptive_simpson_box
from .sampling import SamplerSpec, draw, substream
from .tables import DensityTable

log = logging.getLogger(__name__)

TRUNCATION_RATIO = 1e-12
ZERO_MASS = 1e-300
MEASURE_TOL = 1e-9


@dataclass(frozen=True)
class CanonicalProblem:
    density: Expression
    chart: Chart
    grid: tuple = ()

    @classmethod
    def build(cls, density, chart: Chart, grid=()) -> "CanonicalProblem":
        return cls(as_expression(density, chart.ambient_dim), chart, tuple(np.asarray(grid, dtype=float)))

    @property
    def r(self) -> int:
        return self.chart.dim

    def weight(self, u) -> float:
        """Integrand ``f(g(u)) * sqrt(det(Dg^T Dg))``."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        x = self.chart.point(u)
        f = self.density.evaluate(x)
        if f < 0:
            raise ValueError(f"density is negative ({f}) at {x.tolist()}")
        if f == 0.0:
            return 0.0
        return f * surface_jacobian(self.chart, u)


def _safe_weight(cp, u):
    try:
        return cp.weight(u)
    except DomainError:
        return 0.0


def effective_domain(cp: CanonicalProblem, notes: list | None = None) -> tuple:
    """Chart domain with infinite sides cut where the weight drops below 1e-12 x peak.

    Only one-dimensional charts may have infinite sides.
    """
    dom = cp.chart.domain
    if cp.chart.is_bounded:
        return dom
    if cp.r != 1:
        raise ChartError("charts of dimension > 1 need a bounded domain")
    (a, b), = dom
    lo = a if math.isfinite(a) else (b - 16.0 if math.isfinite(b) else -8.0)
    hi = b if math.isfinite(b) else (a + 16.0 if math.isfinite(a) else 8.0)
    scan = np.linspace(lo, hi, 401)
    w = np.array([_safe_weight(cp, t) for t in scan])
    peak = float(w.max())
    if peak <= 0:
        raise NormalizationError("weight vanishes on the scanned part of the chart domain")
    t_peak = float(scan[int(w.argmax())])
    cut = TRUNCATION_RATIO * peak

    def outward(direction):
        step = 1.0
        t = t_peak
        for _ in range(200):
            t = t_peak + direction * step
            if _safe_weight(cp, t) < cut and _safe_weight(cp, t + direction * step) < cut:
                return t
            step *= 1.5
        raise NormalizationError("weight does not decay along the chart; cannot truncate")

    new_a = a if math.isfinite(a) else outward(-1.0)
    new_b = b if math.isfinite(b) else outward(+1.0)
    msg = f"chart domain {dom[0]} truncated to ({new_a:.6g}, {new_b:.6g}) where weight < {TRUNCATION_RATIO:g} x peak"
    log.info(msg)
    if notes is not None:
        notes.append(msg)
    return ((new_a, new_b),)


def total_mass(cp: CanonicalProblem, rtol: float = DEFAULT_RTOL, notes=None) -> float:
    """``int_M f dH^r`` over the (possibly truncated) chart domain."""
    dom = effective_domain(cp, notes)
    z = _integrate(cp, dom, rtol)
    if not z > ZERO_MASS:
        raise NormalizationError(f"total mass {z!r} on the chart is zero")
    return z


def _integrate(cp, box, rtol=DEFAULT_RTOL) -> float:
    if any(b <= a for a, b in box):
        return 0.0
    if len(box) == 1:
        (a, b), = box
        return adaptive_simpson(lambda t: cp.weight((t,)), a, b, rtol=rtol).value
    return adaptive_simpson_box(cp.weight, box, rtol=rtol).value


def canonical_density(cp: CanonicalProblem, grid=None) -> DensityTable:
    """Density of the canonical measure with respect to the chart parameter."""
    if cp.r != 1:
        raise ValueError("density tables need a one-dimensional chart")
    grid = np.asarray(grid if grid is not None else cp.grid, dtype=float)
    if len(grid) < 2:
        raise ValueError("need a grid of at least two points")
    notes = []
    (a, b), = cp.chart.domain
    if grid[0] < a or grid[-1] > b:
        raise ChartError(f"grid [{grid[0]}, {grid[-1]}] leaves the chart domain ({a}, {b})")
    z = total_mass(cp, notes=notes)
    vals = np.array([_safe_weight(cp, (u,)) for u in grid])
    return DensityTable(grid, vals / z, z, "canonical", notes=notes)


def _clip(box, dom):
    return tuple((max(a, c), min(b, d)) for (a, b), (c, d) in zip(box, dom))


def canonical_measure_of(cp: CanonicalProblem, A) -> float:
    """``mu_M(A)`` for a sub-box ``A`` of the chart domain."""
    A = tuple((float(a), float(b)) for a, b in A)
    if len(A) != cp.r:
        raise ValueError(f"set has dimension {len(A)}, chart has {cp.r}")
    dom = effective_domain(cp)
    z = _integrate(cp, dom)
    if not z > ZERO_MASS:
        raise NormalizationError("total mass on the chart is zero")
    return min(max(_integrate(cp, _clip(A, dom)) / z, 0.0), 1.0)


# --------------------------------------------------------------------------
# Outer-measure properties on a finite family of boxes


def _intersect(boxes):
    out = tuple((max(s[0] for s in sides), min(s[1] for s in sides)) for sides in zip(*boxes))
    return None if any(b <= a for a, b in out) else out


def _union_measure(cp, boxes, z, dom):
    """Inclusion-exclusion over box intersections."""
    total = 0.0
    for size in range(1, len(boxes) + 1):
        for combo in itertools.combinations(boxes, size):
            inter = _intersect(combo)
            if inter is not None:
                total += (-1) ** (size + 1) * _integrate(cp, _clip(inter, dom)) / z
    return total


def _contains(outer, inner):
    return all(c <= a and b <= d for (a, b), (c, d) in zip(inner, outer))


def _box_distance(A, B):
    gaps = [max(c - b, a - d, 0.0) for (a, b), (c, d) in zip(A, B)]
    return math.sqrt(sum(g * g for g in gaps))


@dataclass
class OuterMeasureReport:
    measures: list
    checks: int = 0
    violations: list = field(default_factory=list)
    strict_subadditivity: list = field(default_factory=list)  # (i, j, gap) for overlapping pairs

    @property
    def ok(self) -> bool:
        return not self.violations


def outer_measure_checks(cp: CanonicalProblem, test_sets, tol: float = MEASURE_TOL) -> OuterMeasureReport:
    """Check monotonicity, subadditivity, metric additivity and ``mu(empty) = 0``."""
    sets = [tuple((float(a), float(b)) for a, b in s) for s in test_sets]
    dom = effective_domain(cp)
    z = _integrate(cp, dom)
    mu = [_integrate(cp, _clip(s, dom)) / z for s in sets]
    rep = OuterMeasureReport(mu)

    empty = tuple((c, c) for c, _ in dom)
    rep.checks += 1
    if abs(_integrate(cp, empty)) > tol:
        rep.violations.append("mu(empty) != 0")

    for i, j in itertools.permutations(range(len(sets)), 2):
        if _contains(sets[j], sets[i]):
            rep.checks += 1
            if mu[i] > mu[j] + tol:
                rep.violations.append(f"monotonicity: set {i} inside set {j} but {mu[i]:.12g} > {mu[j]:.12g}")
    for i, j in itertools.combinations(range(len(sets)), 2):
        union = _union_measure(cp, [sets[i], sets[j]], z, dom)
        rep.checks += 1
        if union > mu[i] + mu[j] + tol:
            rep.violations.append(f"subadditivity: sets {i}, {j}")
        if _box_distance(sets[i], sets[j]) > 0:
            rep.checks += 1
            if abs(union - mu[i] - mu[j]) > tol:
                rep.violations.append(f"additivity on separated sets {i}, {j}: defect {union - mu[i] - mu[j]:.3g}")
        elif _intersect([sets[i], sets[j]]) is not None:
            gap = mu[i] + mu[j] - union
            if gap > tol:
                rep.strict_subadditivity.append((i, j, gap))
    if len(sets) > 2:
        rep.checks += 1
        if _union_measure(cp, sets, z, dom) > sum(mu) + tol:
            rep.violations.append("finite subadditivity of the whole family")
    return rep


# --------------------------------------------------------------------------
# Chart-free cross-check


@dataclass
class ProjectionEstimate:
    estimate: float
    stderr: float
    kept: int
    projected: int
    failures: int


def projection_estimate(p: LevelSetProblem, psi_box, delta: float, samples: int, seed: int,
                        sampler: SamplerSpec | None = None) -> ProjectionEstimate:
    """Chart-free Monte Carlo estimate of ``mu_M({x in M : psi(x) in psi_box})``.

    Draws from the density, keeps points whose gradient-flow projection onto
    ``M`` moves them less than ``delta``, and counts how many projections land
    with ``psi`` inside ``psi_box``. For small ``delta`` this is the mass of a
    uniform-width shell around ``M``, which converges to the canonical
    measure whatever constraint map describes ``M``.
    """
    if p.k != 1:
        raise ValueError("projection estimate implemented for scalar constraints only")
    sampler = sampler or SamplerSpec.standard_normal(p.dim)
    rng = substream(seed, 0)
    x = draw(sampler, p.density, samples, rng)
    val, grad = p.phi[0].value_and_grad_array(x)
    gnorm = np.linalg.norm(grad, axis=1)
    with np.errstate(all="ignore"):
        approx = np.abs(val - p.level[0]) / gnorm
    cand = np.flatnonzero(np.isfinite(approx) & (approx < 1.5 * delta))
    lo = np.array([a for a, _ in psi_box], dtype=float)
    hi = np.array([b for _, b in psi_box], dtype=float)
    kept = hits = failures = 0
    for i in cand:
        try:
            res = project_to_level_set(p, x[i])
            if np.linalg.norm(res.end - res.start) >= delta:
                continue
            psi = p.psi_at(res.end)
        except (ProjectionError, DomainError):
            failures += 1
            continue
        kept += 1
        hits += bool(np.all((psi >= lo) & (psi <= hi)))
    if kept == 0:
        return ProjectionEstimate(math.nan, math.nan, 0, len(cand), failures)
    est = hits / kept
    return ProjectionEstimate(est, math.sqrt(max(est * (1 - est), 1e-300) / kept), kept, len(cand), failures)
