"""End-to-end acceptance checks, one per criterion.

Each check prints a single ``criterion N: PASS|FAIL`` line with the measured
numbers, then asserts. Run directly (``python tests/test_acceptance.py``) to
get the eight lines without pytest.
"""

import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import simpson

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import (GAUSS2, NOISE, NORMAL1, RATIO_JOINT, RATIO_LIK, SUM_JOINT, SUM_LIK,  # noqa: E402
                      ratio_density, sum_density)
from test_expr import CORPUS, _domain_point, _smooth_nearby, central_difference  # noqa: E402

from singcond.appendix import consistency_sweep  # noqa: E402
from singcond.bayes import BayesProblem, posterior_density, pushforward_check, verify_proposition  # noqa: E402
from singcond.canonical import CanonicalProblem, canonical_density, canonical_measure_of  # noqa: E402
from singcond.equivalence import COINCIDE, NOT_COINCIDE, check_theorem3, density_distance  # noqa: E402
from singcond.expr import parse  # noqa: E402
from singcond.fan import (TubeSchedule, conditional_density_1d, fan_density_diffeo,  # noqa: E402
                          fan_density_shear, fan_tube_density, fan_tube_estimate)
from singcond.geometry import Chart, LevelSetProblem, project_to_level_set  # noqa: E402
from singcond.sampling import substream  # noqa: E402

GRID = np.linspace(-3.0, 3.0, 601)
LINE = Chart.build(["x1", "-x1"], [(-math.inf, math.inf)])
TV_BAND = 1e-3
STATED_TV = 0.3301  # figure quoted alongside the quadrature oracle; see tv_oracle()


def tv_oracle() -> float:
    """Half the L1 distance of the two guiding densities by fine Simpson quadrature.

    Independent of the package: plain numpy/scipy on a 2.4M-point grid
    covering [-12, 12].
    """
    u = np.linspace(-12.0, 12.0, 2_400_001)
    diff = np.abs(np.abs(u) * np.exp(-u * u) - np.exp(-u * u) / math.sqrt(math.pi))
    return 0.5 * float(simpson(diff, x=u))


def ratio_problem(psi="x1"):
    return LevelSetProblem.build(GAUSS2, "x2/x1", psi, -1.0)


def sum_problem(psi="x1"):
    return LevelSetProblem.build(GAUSS2, "x1 + x2", psi, 0.0)


def max_rel_error(table, oracle):
    f = oracle(table.grid)
    big = f >= 1e-3
    return float(np.max(np.abs(table.values[big] - f[big]) / f[big]))


def emit(n, ok, detail, capsys=None):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return line


# ---------------------------------------------------------------------------


def criterion_1():
    cases = {
        "ratio/diffeo": (lambda: fan_density_diffeo(ratio_problem(), ["x2", "x1*x2"], GRID), ratio_density),
        "ratio/shear": (lambda: fan_density_shear(ratio_problem("x2"), "x2/x1", GRID), ratio_density),
        "ratio/conditional": (lambda: conditional_density_1d(RATIO_JOINT, -1.0, GRID), ratio_density),
        "sum/diffeo": (lambda: fan_density_diffeo(sum_problem(), ["x2", "x1 - x2"], GRID), sum_density),
        "sum/shear": (lambda: fan_density_shear(sum_problem("x2"), "x1 - x2", GRID), sum_density),
        "sum/conditional": (lambda: conditional_density_1d(SUM_JOINT, 0.0, GRID), sum_density),
    }
    ok = True
    parts = []
    for name, (make, oracle) in cases.items():
        t0 = time.perf_counter()
        table = make()
        dt = time.perf_counter() - t0
        err = max_rel_error(table, oracle)
        ok &= err <= 1e-6 and dt < 5.0
        parts.append(f"{name} err={err:.1e} t={dt:.2f}s")
    return ok, "; ".join(parts)


def criterion_2():
    sched = TubeSchedule()  # default schedule, 1e6 draws per eps
    cases = [("ratio", ratio_problem(), 1 - math.exp(-0.25)), ("sum", sum_problem(), math.erf(0.5))]
    ok = True
    parts = []
    t0 = time.perf_counter()
    for name, p, oracle in cases:
        res = fan_tube_estimate(p, [(-0.5, 0.5)], sched)
        z = abs(res.extrapolated - oracle) / res.extrapolated_stderr
        ok &= z <= 3.0
        parts.append(f"{name} {res.extrapolated:.5f}+-{res.extrapolated_stderr:.5f} vs {oracle:.5f} ({z:.2f} se)")
    dt = time.perf_counter() - t0
    ok &= dt < 120.0
    return ok, "; ".join(parts) + f"; t={dt:.1f}s"


def criterion_3():
    p = sum_problem()
    fan = fan_density_diffeo(p, ["x2", "x1 - x2"], GRID)
    can = canonical_density(CanonicalProblem.build(GAUSS2, LINE), GRID)
    tv = density_distance(can, fan).tv
    verdict = check_theorem3(p, LINE, 0.1, 1000, seed=0).verdict
    return tv <= 1e-4 and verdict == COINCIDE, f"tv={tv:.2e} verdict={verdict}"


def criterion_4():
    p = ratio_problem()
    fan = fan_density_diffeo(p, ["x2", "x1*x2"], GRID)
    can = canonical_density(CanonicalProblem.build(GAUSS2, LINE), GRID)
    tv = density_distance(can, fan).tv
    rep = check_theorem3(p, LINE, 0.1, 1000, seed=0)
    oracle = tv_oracle()
    ok = rep.verdict == NOT_COINCIDE and abs(tv - oracle) <= TV_BAND
    return ok, (f"tv={tv:.6f} quadrature oracle={oracle:.6f} (stated {STATED_TV} is not reproduced by the "
                f"oracle's own definition) verdict={rep.verdict} Jphi spread={rep.j_relspread:.3g}")


def criterion_5():
    circle = Chart.build(["cos(x1)", "sin(x1)"], [(0.0, 2 * math.pi)])
    cg = np.linspace(0.0, 2 * math.pi, 721)
    cvals = canonical_density(CanonicalProblem.build(GAUSS2, circle), cg).values
    spread = float(np.ptp(cvals) / np.mean(cvals))

    # line through the origin at angle s, parametrized by (angle mod pi, signed radius)
    s = 0.3
    p = LevelSetProblem.build(GAUSS2, "atan2(x2*sign(x1), abs(x1))", "sign(x1)*sqrt(x1^2 + x2^2)", s)
    g = np.linspace(-3.0, 3.0, 600)  # even count: 0 is not a grid point
    fan = fan_density_diffeo(p, ["x2*cos(x1)", "x2*sin(x1)"], g)
    line = Chart.build([f"x1*cos({s!r})", f"x1*sin({s!r})"], [(-math.inf, math.inf)])
    can = canonical_density(CanonicalProblem.build(GAUSS2, line), g)
    keep = np.abs(g) >= 0.1
    ratio = fan.values[keep] / (can.values[keep] * np.abs(g[keep]))
    c = float(np.mean(ratio))
    rel = float(np.max(np.abs(ratio / c - 1.0)))
    ok = spread <= 1e-6 and rel <= 1e-4
    return ok, f"circle spread={spread:.1e}; fan/(canonical*|u|) rel err={rel:.1e}"


def criterion_6():
    ratio = BayesProblem.build(NORMAL1, NOISE, "x2/x1", RATIO_LIK, -1.0)
    summ = BayesProblem.build(NORMAL1, NOISE, "x1 + x2", SUM_LIK, 0.0)
    r = verify_proposition(ratio, GRID, LINE)
    s = verify_proposition(summ, GRID)
    oracle = tv_oracle()
    ok = r.distance.tv <= 1e-4 and s.distance.tv <= 1e-4 and abs(r.control.tv - oracle) <= TV_BAND
    return ok, (f"ratio tv={r.distance.tv:.1e} sum tv={s.distance.tv:.1e} control tv={r.control.tv:.6f} "
                f"vs quadrature oracle {oracle:.6f} (stated {STATED_TV} not reproduced)")


def criterion_7():
    rhos = np.round(np.arange(0, 101) / 100, 2)
    cs = np.linspace(-10.0, 10.0, 2001)
    t0 = time.perf_counter()
    rep = consistency_sweep(rhos, cs)
    dt = time.perf_counter() - t0
    ok = rep.ok and rep.zero_row_consistent and not rep.counterexamples and dt < 1.0
    return ok, (f"{rep.consistent.size} pairs, {len(rep.counterexamples)} consistent with rho>0, "
                f"rho=0 row consistent={rep.zero_row_consistent}, t={dt * 1000:.0f}ms")


def _autodiff_suite():
    rng = np.random.default_rng(7)
    worst = 0.0
    for src, n in CORPUS:
        e = parse(src, n)
        checked = 0
        while checked < 100:
            x = _domain_point(e, rng, n)
            if not _smooth_nearby(e, x):
                continue
            g, fd = e.grad(x), central_difference(e, x)
            norm = np.linalg.norm(g)
            if norm >= 1e-8:
                worst = max(worst, float(np.linalg.norm(g - fd) / norm))
            checked += 1
    return worst


def _tables_normalized():
    ratio_bp = BayesProblem.build(NORMAL1, NOISE, "x2/x1", RATIO_LIK, -1.0)
    circle = Chart.build(["cos(x1)", "sin(x1)"], [(0.0, 2 * math.pi)])
    tables = [
        fan_density_diffeo(ratio_problem(), ["x2", "x1*x2"], GRID),
        fan_density_diffeo(sum_problem(), ["x2", "x1 - x2"], GRID),
        fan_density_shear(ratio_problem("x2"), "x2/x1", GRID),
        fan_density_shear(sum_problem("x2"), "x1 - x2", GRID),
        conditional_density_1d(RATIO_JOINT, -1.0, GRID),
        conditional_density_1d(SUM_JOINT, 0.0, GRID),
        canonical_density(CanonicalProblem.build(GAUSS2, LINE), GRID),
        canonical_density(CanonicalProblem.build(GAUSS2, circle), np.linspace(0, 2 * math.pi, 361)),
        posterior_density(ratio_bp, GRID),
        fan_tube_density(sum_problem(), np.linspace(-3, 3, 25), TubeSchedule(samples_per_eps=200_000, seed=3)),
    ]
    bad = [t.method for t in tables if not t.is_normalized()]
    return len(tables), bad


def _projection_suite():
    # r is an analytic lower bound on sigma_min(Dphi): |grad| >= sqrt(1 + 0.7^2) in 2-D,
    # and Gershgorin gives eig(Dphi Dphi^T) >= 0.8 in 3-D
    rng = substream(2024, 0)
    cases = [
        (LevelSetProblem.build(GAUSS2, "x1 + x2 + 0.3*sin(x2)", (), 0.5), 2, 1.2),
        (LevelSetProblem.build("1", ["x1 + 0.2*sin(x2)", "x2 + 0.2*sin(x3)"], (), [0.1, -0.2], dim=3), 3, 0.89),
    ]
    worst = -math.inf
    starts = 0
    for p, n, r in cases:
        for x in 2.0 * rng.standard_normal((500, n)):
            res = project_to_level_set(p, x, r=r)
            worst = max(worst, float(np.linalg.norm(res.end - res.start)) - res.extinction_time / r)
            starts += 1
    return starts, worst


def _chart_independence():
    worst = 0.0
    line2 = Chart.build(["2*x1", "-2*x1"], [(-math.inf, math.inf)])
    for a, b in [(-0.5, 0.5), (0.0, 1.2), (-3.0, -0.1), (-math.inf, 0.3)]:
        m1 = canonical_measure_of(CanonicalProblem.build(GAUSS2, LINE), [(a, b)])
        m2 = canonical_measure_of(CanonicalProblem.build(GAUSS2, line2), [(a / 2, b / 2)])
        worst = max(worst, abs(m1 - m2))
    # the unit circle traversed at double speed, and an ellipse under a warped angle
    c1 = CanonicalProblem.build(GAUSS2, Chart.build(["cos(x1)", "sin(x1)"], [(0.0, 2 * math.pi)]))
    c2 = CanonicalProblem.build(GAUSS2, Chart.build(["cos(2*x1)", "sin(2*x1)"], [(0.0, math.pi)]))
    dens = "exp(-(x1^2 + 4*x2^2)/2)"
    e1 = CanonicalProblem.build(dens, Chart.build(["2*cos(x1)", "sin(x1)"], [(0.0, 2 * math.pi)]))
    e2 = CanonicalProblem.build(dens, Chart.build(["2*cos(x1 + 0.3*sin(x1))", "sin(x1 + 0.3*sin(x1))"],
                                                  [(0.0, 2 * math.pi)]))
    warp = lambda t: t + 0.3 * math.sin(t)  # noqa: E731  increasing on [0, 2 pi]
    from scipy.optimize import brentq
    unwarp = lambda th: brentq(lambda t: warp(t) - th, 0.0, 2 * math.pi)  # noqa: E731
    for a, b in [(0.0, 1.0), (0.5, 2.5), (3.0, 6.0)]:
        worst = max(worst, abs(canonical_measure_of(c1, [(a, b)]) - canonical_measure_of(c2, [(a / 2, b / 2)])))
        worst = max(worst, abs(canonical_measure_of(e1, [(a, b)])
                               - canonical_measure_of(e2, [(unwarp(a), unwarp(b))])))
    return worst


def _determinism():
    p = ratio_problem()
    sched = TubeSchedule(samples_per_eps=300_000, seed=9)
    runs = [fan_tube_estimate(p, [(-0.5, 0.5)], sched, workers=w) for w in (1, 2, 8)]
    same = all(r.as_sequence() == runs[0].as_sequence() and r.extrapolated == runs[0].extrapolated for r in runs)
    bp = BayesProblem.build(NORMAL1, NOISE, "x2/x1", RATIO_LIK, -1.0)
    push = [pushforward_check(bp, samples=150_000, seed=4, workers=w).observed for w in (1, 4)]
    return same and push[0] == push[1]


def criterion_8():
    t0 = time.perf_counter()
    ad = _autodiff_suite()
    n_tables, bad = _tables_normalized()
    starts, proj = _projection_suite()
    chart = _chart_independence()
    det = _determinism()
    dt = time.perf_counter() - t0
    ok = ad <= 1e-6 and not bad and proj <= 1e-6 and chart <= 1e-6 and det and dt < 60.0
    return ok, (f"autodiff worst rel={ad:.1e} ({len(CORPUS)}x100); tables normalized {n_tables - len(bad)}/{n_tables}; "
                f"projection max(|x-y| - T/r)={proj:.1e} over {starts} starts; chart independence {chart:.1e}; "
                f"deterministic across workers={det}; t={dt:.1f}s")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8]


@pytest.mark.filterwarnings("ignore::singcond.tables.TailWarning")
@pytest.mark.parametrize("n", range(1, 9))
def test_criterion(n, capsys):
    ok, detail = CRITERIA[n - 1]()
    emit(n, ok, detail, capsys)
    assert ok, detail


if __name__ == "__main__":
    warnings.simplefilter("ignore")
    results = []
    for i, fn in enumerate(CRITERIA, 1):
        ok, detail = fn()
        emit(i, ok, detail)
        results.append(ok)
    sys.exit(0 if all(results) else 1)
