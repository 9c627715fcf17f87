"""Level sets, their charts, and the gradient-flow projection onto them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ChartError, DomainError, ProjectionError, SingularJacobianError
from .expr import Expression, as_expression

MAX_DIM = 4
MAX_CODIM = 3
CHART_TOL = 1e-9
DEGENERATE_DET = 1e-14
SINGULAR_DET = 1e-12
RESIDUAL_TOL = 1e-8


def _exprs(items, arity):
    if isinstance(items, (str, Expression)):
        items = [items]
    return tuple(as_expression(e, arity) for e in items)


def jacobian_matrix(exprs: Sequence[Expression], x) -> np.ndarray:
    """Rows are the gradients of ``exprs`` at ``x``."""
    return np.array([e.grad(x) for e in exprs], dtype=float).reshape(len(exprs), len(x))


@dataclass(frozen=True)
class LevelSetProblem:
    """Density on R^n, constraint map phi: R^n -> R^k, auxiliary map psi and level s."""

    density: Expression
    phi: tuple
    psi: tuple
    level: tuple
    dim: int

    def __post_init__(self):
        n, k = self.dim, len(self.phi)
        if not 1 <= k < n <= MAX_DIM:
            raise ValueError(f"need 1 <= k < n <= {MAX_DIM}, got k={k}, n={n}")
        if k > MAX_CODIM:
            raise ValueError(f"at most {MAX_CODIM} constraints supported")
        if len(self.level) != k:
            raise ValueError(f"level has {len(self.level)} entries, phi has {k}")
        if k + len(self.psi) > n:
            raise ValueError("phi and psi together have more than n components")
        for e in (self.density, *self.phi, *self.psi):
            if e.max_index > n:
                raise ValueError(f"{e} uses a variable beyond x{n}")

    @classmethod
    def build(cls, density, phi, psi=(), level=(0.0,), dim=2) -> "LevelSetProblem":
        if isinstance(level, (int, float)):
            level = (level,)
        return cls(
            as_expression(density, dim),
            _exprs(phi, dim),
            _exprs(psi, dim) if psi else (),
            tuple(float(s) for s in level),
            int(dim),
        )

    @property
    def k(self) -> int:
        return len(self.phi)

    @property
    def m(self) -> int:
        return self.k + len(self.psi)

    def density_at(self, x) -> float:
        v = self.density.evaluate(x)
        if v < 0:
            raise ValueError(f"density is negative ({v}) at {list(x)}")
        return v

    def phi_at(self, x) -> np.ndarray:
        return np.array([e.evaluate(x) for e in self.phi])

    def psi_at(self, x) -> np.ndarray:
        return np.array([e.evaluate(x) for e in self.psi])

    def residual(self, x) -> float:
        return float(np.linalg.norm(self.phi_at(x) - np.asarray(self.level)))

    def dphi(self, x) -> np.ndarray:
        return jacobian_matrix(self.phi, x)


@dataclass(frozen=True)
class Chart:
    """Explicit parametrization g: D -> R^n of a level set; D is a box in R^r."""

    map: tuple
    domain: tuple

    def __post_init__(self):
        r = len(self.domain)
        for a, b in self.domain:
            if not b > a:
                raise ChartError(f"empty chart domain side ({a}, {b})")
        for e in self.map:
            if e.max_index > r:
                raise ChartError(f"chart component {e} uses x{e.max_index} but the domain has dimension {r}")

    @classmethod
    def build(cls, components, domain) -> "Chart":
        domain = tuple((float(a), float(b)) for a, b in domain)
        # arity is left to the parser so that __post_init__ reports a bad variable as a chart error
        return cls(_exprs(components, None), domain)

    @property
    def dim(self) -> int:
        """Dimension of the parameter domain."""
        return len(self.domain)

    @property
    def ambient_dim(self) -> int:
        return len(self.map)

    @property
    def is_bounded(self) -> bool:
        return all(math.isfinite(a) and math.isfinite(b) for a, b in self.domain)

    def point(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.array([e.evaluate(u) for e in self.map])

    def jacobian(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return jacobian_matrix(self.map, u)

    def sample_box(self, fallback: float = 8.0):
        """Finite box for sampling: infinite sides are replaced by +-``fallback``."""
        return tuple(
            (a if math.isfinite(a) else -fallback, b if math.isfinite(b) else fallback)
            for a, b in self.domain
        )

    def validate(self, problem: LevelSetProblem, points: int = 33, tol: float = CHART_TOL):
        """Check that the chart lies on the level set and is an immersion on a grid of D."""
        if self.ambient_dim != problem.dim:
            raise ChartError(f"chart maps into R^{self.ambient_dim}, problem lives in R^{problem.dim}")
        if self.dim != problem.dim - problem.k:
            raise ChartError(f"chart domain has dimension {self.dim}, level set has {problem.dim - problem.k}")
        axes = [np.linspace(a, b, points)[1:-1] for a, b in self.sample_box()]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        bad = []
        for u in pts:
            try:
                x = self.point(u)
                res = problem.residual(x)
                surface_jacobian(self, u)
            except (DomainError, ChartError):
                continue
            if res > tol * max(1.0, float(np.max(np.abs(problem.level)))):
                bad.append((tuple(u), res))
        if bad:
            u, res = bad[0]
            raise ChartError(f"chart leaves the level set: residual {res:.3g} at u={u} ({len(bad)} points)")


@dataclass(frozen=True)
class ProjectionResult:
    start: np.ndarray
    end: np.ndarray
    extinction_time: float
    steps: int
    residual: float = 0.0
    path_length: float = 0.0
    sigma_min: float = field(default=math.inf)  # smallest singular value met on the way


def jacobian_J(p: LevelSetProblem, x) -> float:
    """Generalized Jacobian sqrt(det(Dphi Dphi^T)) at ``x``."""
    D = p.dphi(x)
    if p.k == 1:
        return float(np.linalg.norm(D[0]))
    return float(math.sqrt(max(np.linalg.det(D @ D.T), 0.0)))


def smallest_singular_value(p: LevelSetProblem, x) -> float:
    D = p.dphi(x)
    if p.k == 1:
        return float(np.linalg.norm(D[0]))
    eig = np.linalg.eigvalsh(D @ D.T)
    return float(math.sqrt(max(eig[0], 0.0)))


def surface_jacobian(c: Chart, u) -> float:
    """Area element sqrt(det(Dg^T Dg)) of the chart at ``u``."""
    Dg = c.jacobian(u)
    det = float(np.linalg.det(Dg.T @ Dg)) if Dg.shape[1] > 1 else float(Dg[:, 0] @ Dg[:, 0])
    if det <= DEGENERATE_DET:
        raise ChartError(f"degenerate chart at u={list(np.atleast_1d(u))}: det(Dg^T Dg) = {det:.3g}")
    return math.sqrt(det)


def project_to_level_set(p: LevelSetProblem, x, step: float | None = None,
                         max_steps: int = 10_000, r: float | None = None) -> ProjectionResult:
    """Move ``x`` onto the level set along z' = -A(z) sign(phi(z) - s).

    ``A = Dphi^T (Dphi Dphi^T)^{-1}`` is the right inverse of ``Dphi`` and
    ``sign`` is the unit vector. Along the exact flow ``|phi(z) - s|``
    decreases at unit rate, so the flow is extinct at ``T = |phi(x) - s|``.
    The flow is integrated with explicit Euler, each step capped at the
    remaining time, followed by Gauss-Newton polishing.

    If ``r`` is given, every visited point must have smallest singular value
    of ``Dphi`` at least ``r``; the displacement then obeys ``|x - y| <= T / r``.
    """
    s = np.asarray(p.level, dtype=float)
    start = np.asarray(x, dtype=float).copy()
    z = start.copy()
    eta = p.phi_at(z) - s
    T = float(np.linalg.norm(eta))
    if T == 0.0:
        return ProjectionResult(start, z, 0.0, 0, 0.0, 0.0)
    h = step if step is not None else 0.1 * T
    if not h > 0:
        raise ValueError("step must be positive")

    sig_seen = math.inf
    length = 0.0
    steps = 0
    rem = T
    while rem > 1e-12 * max(1.0, T):
        if steps >= max_steps:
            raise ProjectionError(f"no convergence within {max_steps} steps (residual {rem:.3g})")
        A, sig = _right_inverse(p, z)
        sig_seen = min(sig_seen, sig)
        if r is not None and sig < r * (1 - 1e-12):
            raise ProjectionError(f"smallest singular value {sig:.6g} below the supplied bound {r:.6g} at {z}")
        dt = min(h, rem)
        dz = -dt * (A @ (eta / rem))
        z = z + dz
        length += float(np.linalg.norm(dz))
        steps += 1
        eta = p.phi_at(z) - s
        new = float(np.linalg.norm(eta))
        if dt == rem and new >= rem:
            break  # full Gauss-Newton step stopped improving: at the rounding floor
        rem = new

    # polish: plain Gauss-Newton
    for _ in range(5):
        if rem <= 1e-14 * max(1.0, T):
            break
        A, sig = _right_inverse(p, z)
        znew = z - A @ eta
        eta_new = p.phi_at(znew) - s
        if np.linalg.norm(eta_new) >= rem:
            break
        length += float(np.linalg.norm(znew - z))
        z, eta = znew, eta_new
        rem = float(np.linalg.norm(eta))
        steps += 1

    rem = float(np.linalg.norm(p.phi_at(z) - s))
    if rem > RESIDUAL_TOL:
        raise ProjectionError(f"projection residual {rem:.3g} exceeds {RESIDUAL_TOL:g}")
    return ProjectionResult(start, z, T, steps, rem, length, sig_seen)


def _right_inverse(p: LevelSetProblem, z):
    D = p.dphi(z)
    G = D @ D.T
    det = float(np.linalg.det(G))
    if det < SINGULAR_DET:
        raise SingularJacobianError(f"Dphi Dphi^T is singular at {z} (det {det:.3g})")
    eig = np.linalg.eigvalsh(G)
    return D.T @ np.linalg.inv(G), float(math.sqrt(max(eig[0], 0.0)))
