"""Adaptive Simpson quadrature with skip-and-record handling of singular points."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


DEFAULT_RTOL = 1e-8
_INITIAL_PANELS = 16
_MAX_DEPTH = 48


@dataclass
class QuadResult:
    value: float
    evaluations: int = 0
    skipped: list = field(default_factory=list)  # abscissae where the integrand raised
    converged: bool = True


class _Guarded:
    """Wraps an integrand: domain errors or non-finite values count as 0 and are recorded."""

    def __init__(self, f):
        self.f = f
        self.skipped = []
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        try:
            v = float(self.f(x))
        except ArithmeticError:  # DomainError included
            self.skipped.append(x)
            return 0.0
        if not math.isfinite(v):
            self.skipped.append(x)
            return 0.0
        return v


def adaptive_simpson(f, a: float, b: float, rtol: float = DEFAULT_RTOL, atol: float = 0.0,
                     panels: int = _INITIAL_PANELS) -> QuadResult:
    """Integrate ``f`` over ``[a, b]`` to relative tolerance ``rtol``.

    The interval is first split into ``panels`` equal panels so that narrow
    features are not missed by the first Simpson estimate; each panel is then
    refined recursively with the usual Richardson-corrected criterion
    ``|S2 - S1| <= 15 tol``. The tolerance budget is shared in proportion to
    panel width.
    """
    if a == b:
        return QuadResult(0.0)
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    g = _Guarded(f)
    xs = np.linspace(a, b, 2 * panels + 1)
    ys = [g(float(x)) for x in xs]
    coarse = []
    for i in range(panels):
        x0, xm, x1 = xs[2 * i], xs[2 * i + 1], xs[2 * i + 2]
        y0, ym, y1 = ys[2 * i], ys[2 * i + 1], ys[2 * i + 2]
        coarse.append((x0, x1, y0, ym, y1, (x1 - x0) / 6.0 * (y0 + 4 * ym + y1)))
    scale = abs(sum(c[-1] for c in coarse))
    width = b - a
    total = 0.0
    converged = True
    for x0, x1, y0, ym, y1, whole in coarse:
        tol = max(rtol * scale, atol) * (x1 - x0) / width
        val, ok = _refine(g, x0, x1, y0, ym, y1, whole, tol, _MAX_DEPTH)
        total += val
        converged &= ok
    return QuadResult(sign * total, g.calls, g.skipped, converged)


def _refine(g, a, b, fa, fm, fb, whole, tol, depth):
    # explicit stack instead of recursion; leaves are summed smallest-first per branch
    stack = [(a, b, fa, fm, fb, whole, tol, depth)]
    total = 0.0
    ok = True
    while stack:
        a, b, fa, fm, fb, whole, tol, depth = stack.pop()
        m = 0.5 * (a + b)
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm = g(lm)
        frm = g(rm)
        left = (m - a) / 6.0 * (fa + 4 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4 * frm + fb)
        delta = left + right - whole
        if abs(delta) <= 15.0 * tol or depth <= 0 or m <= a or m >= b:
            if depth <= 0 and abs(delta) > 15.0 * tol:
                ok = False
            total += left + right + delta / 15.0
            continue
        stack.append((a, m, fa, flm, fm, left, 0.5 * tol, depth - 1))
        stack.append((m, b, fm, frm, fb, right, 0.5 * tol, depth - 1))
    return total, ok


def integrate_real_line(f, scale: float = 1.0, rtol: float = DEFAULT_RTOL, atol: float = 0.0,
                        center: float = 0.0) -> QuadResult:
    """Integrate over the whole real line via ``x = center + scale * tan(t)``.

    The Jacobian ``scale / cos(t)^2`` turns algebraic tails such as the
    Cauchy density into bounded integrands on ``(-pi/2, pi/2)``.
    """
    half = math.pi / 2

    def h(t):
        c = math.cos(t)
        if c == 0.0:
            return 0.0
        x = center + scale * math.tan(t)
        v = f(x)
        return v * scale / (c * c) if v != 0.0 else 0.0

    res = adaptive_simpson(h, -half, half, rtol=rtol, atol=atol, panels=32)
    # report skipped points in x coordinates
    res.skipped = [center + scale * math.tan(t) for t in res.skipped]
    return res


def integrate_interval(f, a: float, b: float, rtol: float = DEFAULT_RTOL,
                       atol: float = 0.0) -> QuadResult:
    """Integrate over ``[a, b]`` where either end may be infinite."""
    if math.isfinite(a) and math.isfinite(b):
        return adaptive_simpson(f, a, b, rtol=rtol, atol=atol)
    if not math.isfinite(a) and not math.isfinite(b):
        return integrate_real_line(f, rtol=rtol, atol=atol)
    # half line: x = a + t/(1-t) on [0, 1) or x = b - t/(1-t)
    if math.isfinite(a):
        def h(t):
            if t >= 1.0:
                return 0.0
            return f(a + t / (1 - t)) / (1 - t) ** 2
    else:
        def h(t):
            if t >= 1.0:
                return 0.0
            return f(b - t / (1 - t)) / (1 - t) ** 2
    return adaptive_simpson(h, 0.0, 1.0, rtol=rtol, atol=atol, panels=32)


def adaptive_simpson_box(f, box, rtol: float = DEFAULT_RTOL) -> QuadResult:
    """Iterated adaptive Simpson over an axis-aligned box ``[(a1, b1), ...]``."""
    box = [(float(a), float(b)) for a, b in box]
    skipped = []
    calls = [0]

    def nested(prefix, axis):
        a, b = box[axis]
        if axis == len(box) - 1:
            def leaf(t):
                calls[0] += 1
                return f((*prefix, t))
            r = adaptive_simpson(leaf, a, b, rtol=rtol)
        else:
            r = adaptive_simpson(lambda t: nested((*prefix, t), axis + 1), a, b, rtol=rtol)
        skipped.extend(r.skipped)
        return r.value

    value = nested((), 0)
    return QuadResult(value, calls[0], skipped)


def trapezoid(y, x) -> float:
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def simpson_uniform(y, x) -> float:
    """Composite Simpson on a uniform grid with an odd number of points."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if len(x) % 2 == 0:
        raise ValueError("composite Simpson needs an odd number of points")
    h = (x[-1] - x[0]) / (len(x) - 1)
    return float(h / 3.0 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum()))
