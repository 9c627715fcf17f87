"""Bayesian posteriors as canonical measures in data coordinates.

A prior on ``x1`` and independent noise ``x2`` are pushed forward by
``(x1, x2) -> (x1, z)`` with ``z = G(x1, x2)``. In those coordinates the
measurement set ``{z = s}`` is a horizontal line with constant unit Jacobian,
so its canonical measure is the textbook posterior. Computing the canonical
measure in ``(x1, x2)`` coordinates on ``{G = s}`` instead gives a different
answer in general; :func:`verify_proposition` reports both.

Expressions use ``x1`` for the parameter and ``x2`` for the noise. The
likelihood ``f_{Z | X1 = x1}(z)`` is written in ``(x1, x2)`` with ``x2``
standing for ``z``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .canonical import CanonicalProblem, canonical_density
from .equivalence import DensityDistance, density_distance
from .errors import NormalizationError, NullConditioningError
from .expr import Expression, as_expression, combine
from .geometry import Chart
from .quadrature import integrate_real_line
from .sampling import Marginal, map_streams
from .tables import DensityTable, normalize

log = logging.getLogger(__name__)

LIKELIHOOD_TOL = 1e-4
EVIDENCE_TOL = 1e-4
NULL_EVIDENCE = 1e-12
VALIDATION_POINTS = 20


@dataclass(frozen=True)
class BayesProblem:
    prior: Expression
    noise: Expression
    forward: Expression
    likelihood: Expression
    measurement: float
    prior_sampler: Marginal = Marginal("normal")
    noise_sampler: Marginal = Marginal("normal")

    def __post_init__(self):
        if not self.prior.variables <= {1}:
            raise ValueError("prior must be an expression in x1 only")
        if not self.noise.variables <= {2}:
            raise ValueError("noise density must be an expression in x2 only")
        for e in (self.forward, self.likelihood):
            if e.max_index > 2:
                raise ValueError(f"{e} uses variables beyond x2")

    @classmethod
    def build(cls, prior, noise, forward, likelihood, measurement,
              prior_sampler=None, noise_sampler=None) -> "BayesProblem":
        return cls(
            as_expression(prior, 2), as_expression(noise, 2), as_expression(forward, 2),
            as_expression(likelihood, 2), float(measurement),
            prior_sampler or Marginal("normal"), noise_sampler or Marginal("normal"),
        )

    @property
    def joint(self) -> Expression:
        """``f_{X1,Z}(x1, z) = prior(x1) * likelihood(z; x1)`` in ``(x1, z) = (x1, x2)``."""
        return combine("*", self.prior, self.likelihood)

    def joint_at(self, x1: float, z: float) -> float:
        return self.prior.evaluate((x1, 0.0)) * self.likelihood.evaluate((x1, z))

    def prior_window(self, width: float = 4.0):
        m = self.prior_sampler
        centre = m.loc if m.dist == "normal" else 0.5 * (m.low + m.high)
        return centre - width * m.std(), centre + width * m.std()


# --------------------------------------------------------------------------
# Validation of the user-supplied likelihood


@dataclass
class LikelihoodCheck:
    points: list
    masses: list
    ok: bool


def validate_likelihood(bp: BayesProblem, points: int = VALIDATION_POINTS,
                        tol: float = LIKELIHOOD_TOL) -> LikelihoodCheck:
    """The likelihood must integrate to one over ``z`` at cell midpoints across the prior."""
    lo, hi = bp.prior_window()
    edges = np.linspace(lo, hi, points + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    masses = []
    for x1 in mids:
        res = integrate_real_line(lambda z, x1=x1: bp.likelihood.evaluate((x1, z)), rtol=1e-10)
        masses.append(res.value)
    ok = all(abs(m - 1.0) <= tol for m in masses)
    return LikelihoodCheck(mids.tolist(), masses, ok)


@dataclass
class PushforwardCheck:
    x_edges: list
    z_edges: list
    observed: list
    expected: list
    max_z: float
    ok: bool
    samples: int
    notes: list = field(default_factory=list)


def _gauss_legendre_cell(f, a, b, c, d, nodes=24):
    t, w = np.polynomial.legendre.leggauss(nodes)
    xs = 0.5 * (b - a) * t + 0.5 * (a + b)
    zs = 0.5 * (d - c) * t + 0.5 * (c + d)
    total = 0.0
    for xi, wi in zip(xs, w):
        total += wi * sum(wj * f(xi, zj) for zj, wj in zip(zs, w))
    return total * 0.25 * (b - a) * (d - c)


def pushforward_check(bp: BayesProblem, samples: int = 200_000, seed: int = 0,
                      nsigma: float = 3.0, workers: int | None = None) -> PushforwardCheck:
    """Compare cell probabilities of the joint density with a pushforward histogram.

    Samples ``(x1, G(x1, x2))`` with ``x1`` from the prior sampler and ``x2``
    from the noise sampler, bins them on a 4 x 4 grid, and checks every cell
    against the quadrature of ``prior * likelihood`` within ``nsigma``
    binomial standard errors.
    """
    s1 = bp.prior_sampler.std()
    c1 = 0.5 * sum(bp.prior_window())
    x_edges = c1 + s1 * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    # z cells come from a pilot run on a separate stream so that the test
    # statistic does not reuse the bin edges' own samples
    pilot = _push_samples(bp, 20_000, seed, (2,), workers)
    zmed = float(np.median(pilot))
    zscale = 1.4826 * float(np.median(np.abs(pilot - zmed)))
    if not zscale > 0:
        raise ValueError("pushforward samples are degenerate")
    z_edges = zmed + zscale * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])

    def chunk(rng, size):
        u1 = rng.random(size)
        u2 = rng.random(size)
        x1 = bp.prior_sampler.from_uniform(u1)
        x2 = bp.noise_sampler.from_uniform(u2)
        z = bp.forward.eval_array(np.column_stack([x1, x2]))
        h, _, _ = np.histogram2d(x1, z, bins=[x_edges, z_edges])
        return h

    counts = sum(map_streams(chunk, seed, (3,), samples, workers))
    observed = counts / samples
    expected = np.zeros_like(observed)
    worst = 0.0
    for i in range(4):
        for j in range(4):
            p = _gauss_legendre_cell(bp.joint_at, x_edges[i], x_edges[i + 1], z_edges[j], z_edges[j + 1])
            expected[i, j] = p
            se = math.sqrt(max(p * (1 - p), 0.0) / samples)
            worst = max(worst, abs(observed[i, j] - p) / max(se, 1e-300))
    return PushforwardCheck(x_edges.tolist(), z_edges.tolist(), observed.tolist(), expected.tolist(),
                            worst, bool(worst <= nsigma), samples)


def _push_samples(bp, n, seed, key, workers):
    def chunk(rng, size):
        x1 = bp.prior_sampler.from_uniform(rng.random(size))
        x2 = bp.noise_sampler.from_uniform(rng.random(size))
        return bp.forward.eval_array(np.column_stack([x1, x2]))

    z = np.concatenate(map_streams(chunk, seed, key, n, workers))
    return z[np.isfinite(z)]


def evidence(bp: BayesProblem, s: float | None = None) -> float:
    """``f_Z(s) = int prior(x1) likelihood(s; x1) dx1``."""
    s = bp.measurement if s is None else s
    return integrate_real_line(lambda x1: bp.joint_at(x1, s), scale=bp.prior_sampler.std(),
                               center=0.5 * sum(bp.prior_window()), rtol=1e-10).value


def total_joint_mass(bp: BayesProblem, rtol: float = 1e-9) -> float:
    """``int int f_{X1,Z}`` over the whole plane by nested QUADPACK quadrature.

    ``x1`` is the inner variable: the prior keeps it concentrated, whereas
    the spread of ``z`` given ``x1`` can be unbounded (``G = x2 / x1``).
    """
    def marginal(z):
        return quad(lambda x1: bp.joint_at(x1, z), -math.inf, math.inf,
                    epsabs=1e-12, epsrel=rtol, limit=200)[0]

    return quad(marginal, -math.inf, math.inf, epsabs=1e-10, epsrel=rtol, limit=200)[0]


# --------------------------------------------------------------------------
# Posterior and its canonical counterpart


def posterior_density(bp: BayesProblem, grid) -> DensityTable:
    """``f_{X1|Z=s}(x1) = f_{X1,Z}(x1, s) / f_Z(s)`` tabulated on ``grid``."""
    s = bp.measurement
    try:
        table = normalize(lambda x1: bp.joint_at(x1, s), grid, "bayes")
    except NormalizationError as exc:
        raise NullConditioningError(f"evidence f_Z({s}) vanishes") from exc
    if table.normalization < NULL_EVIDENCE:
        raise NullConditioningError(f"evidence f_Z({s}) = {table.normalization:.3g} is too small")
    return table


def data_coordinate_canonical(bp: BayesProblem, grid) -> DensityTable:
    """Canonical density on ``{z = s}`` in ``(x1, z)`` coordinates, chart ``t -> (t, s)``."""
    chart = Chart.build(["x1", repr(bp.measurement)], [(-math.inf, math.inf)])
    return canonical_density(CanonicalProblem.build(bp.joint, chart), grid)


@dataclass
class PropositionCheck:
    distance: DensityDistance
    posterior: DensityTable
    canonical: DensityTable
    control: DensityDistance | None = None
    control_table: DensityTable | None = None


def verify_proposition(bp: BayesProblem, grid, noise_chart: Chart | None = None) -> PropositionCheck:
    """Distance between the posterior and the canonical density in data coordinates.

    If ``noise_chart`` is given (a chart of ``{G = s}`` in ``(x1, x2)``
    coordinates whose parameter is ``x1``), the canonical density of
    ``prior * noise`` on it is also computed and compared with the posterior.
    That comparison is the control: it ignores the change of coordinates and
    generally disagrees.
    """
    post = posterior_density(bp, grid)
    canon = data_coordinate_canonical(bp, grid)
    out = PropositionCheck(density_distance(post, canon), post, canon)
    if noise_chart is not None:
        product = combine("*", bp.prior, bp.noise)
        wrong = canonical_density(CanonicalProblem.build(product, noise_chart), grid)
        out.control = density_distance(post, wrong)
        out.control_table = wrong
    return out
