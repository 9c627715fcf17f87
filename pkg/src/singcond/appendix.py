"""The one-dimensional extension counterexample, evaluated exhaustively.

On ``[0, 1]`` with Lebesgue measure ``p``, take the sub-sigma-algebra
generated by ``{0}`` and put ``q({0}) = rho``. Every version of the
conditional expectation is ``E(f | .) = C * 1_{0} + int f * 1_{(0,1]}`` for a
free constant ``C``, and the extension built from it gives, for ``A = {0}``,

    q(A)   = rho * C
    q(A^c) = rho * C + (1 - rho)

Consistency with ``q`` on the sub-sigma-algebra needs ``q(A) = rho`` and
``q(A^c) = 1 - rho``, i.e. ``C = 1`` and ``C = 0`` at once. Only ``rho = 0``
survives, which is exactly absolute continuity of ``q`` with respect to ``p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONSISTENCY_TOL = 1e-9


@dataclass(frozen=True)
class ExtensionInstance:
    rho: float
    c: float

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")


def extension_values(inst: ExtensionInstance) -> tuple[float, float]:
    """``(q(A), q(A^c))`` of the extension for the given ``rho`` and ``C``."""
    qa = inst.rho * inst.c
    return qa, qa + (1.0 - inst.rho)


def is_consistent(inst: ExtensionInstance, tol: float = CONSISTENCY_TOL) -> bool:
    qa, qac = extension_values(inst)
    return abs(qa - inst.rho) <= tol and abs(qac - (1.0 - inst.rho)) <= tol


@dataclass
class SweepReport:
    rhos: np.ndarray
    cs: np.ndarray
    consistent: np.ndarray  # bool, shape (len(rhos), len(cs))
    counterexamples: list = field(default_factory=list)  # (rho, C) with rho > 0 that are consistent
    zero_row_consistent: bool | None = None  # None when rho = 0 is not in the grid

    @property
    def ok(self) -> bool:
        return not self.counterexamples and self.zero_row_consistent is not False

    def summary(self) -> dict:
        return {
            "rho_values": int(len(self.rhos)),
            "c_values": int(len(self.cs)),
            "pairs": int(self.consistent.size),
            "consistent_pairs_rho_positive": len(self.counterexamples),
            "rho_zero_all_consistent": self.zero_row_consistent,
            "ok": self.ok,
        }


def consistency_sweep(rhos, cs, tol: float = CONSISTENCY_TOL) -> SweepReport:
    """Evaluate both consistency equations on the full ``rhos x cs`` grid."""
    rhos = np.asarray(rhos, dtype=float)
    cs = np.asarray(cs, dtype=float)
    if rhos.size == 0 or cs.size == 0:
        raise ValueError("sweep grids must be non-empty")
    if np.any((rhos < 0) | (rhos > 1)):
        raise ValueError("rho values must lie in [0, 1]")
    R = rhos[:, None]
    qa = R * cs[None, :]
    qac = qa + (1.0 - R)
    ok = (np.abs(qa - R) <= tol) & (np.abs(qac - (1.0 - R)) <= tol)
    pos = rhos > 0
    bad = np.argwhere(ok & pos[:, None])
    counter = [(float(rhos[i]), float(cs[j])) for i, j in bad]
    zero = ~pos
    zero_ok = bool(ok[zero].all()) if zero.any() else None
    return SweepReport(rhos, cs, ok, counter, zero_ok)


def default_grids(rho_steps: int = 100, c_max: float = 10.0, c_step: float = 0.01):
    """``rho`` in ``{0, 1/K, ..., 1}`` and ``C`` in ``[-c_max, c_max]`` by ``c_step``."""
    if rho_steps < 1:
        raise ValueError("need at least one rho step")
    rhos = np.arange(rho_steps + 1) / rho_steps
    n = int(round(2 * c_max / c_step))
    cs = np.linspace(-c_max, c_max, n + 1)
    return rhos, cs
