import math
import time
import warnings

import numpy as np
import pytest

from singcond.errors import NullConditioningError, RoundTripError
from singcond.fan import (TubeSchedule, conditional_density_1d, extrapolate_eps2, fan_density_diffeo,
                          fan_density_shear, fan_tube_density, fan_tube_estimate)
from singcond.geometry import LevelSetProblem
from singcond.sampling import Marginal, SamplerSpec
from singcond.tables import TailWarning

from conftest import GAUSS2, RATIO_JOINT, SUM_JOINT, ratio_density, sum_density

pytestmark = pytest.mark.filterwarnings("ignore::singcond.tables.TailWarning",
                                        "ignore::singcond.tables.SkippedPointsWarning")


def ratio(psi="x1"):
    return LevelSetProblem.build(GAUSS2, "x2/x1", psi, -1.0)


def summ(psi="x1"):
    return LevelSetProblem.build(GAUSS2, "x1 + x2", psi, 0.0)


def assert_matches(table, f):
    want = f(table.grid)
    big = want >= 1e-3
    assert np.max(np.abs(table.values[big] - want[big]) / want[big]) <= 1e-6
    assert table.is_normalized()


def test_diffeo_reproduces_guiding_densities(grid):
    assert_matches(fan_density_diffeo(ratio(), ["x2", "x1*x2"], grid), ratio_density)
    assert_matches(fan_density_diffeo(summ(), ["x2", "x1 - x2"], grid), sum_density)


def test_shear_reproduces_guiding_densities(grid):
    assert_matches(fan_density_shear(ratio("x2"), "x2/x1", grid), ratio_density)
    assert_matches(fan_density_shear(summ("x2"), "x1 - x2", grid), sum_density)


def test_conditional_reproduces_guiding_densities(grid):
    assert_matches(conditional_density_1d(RATIO_JOINT, -1.0, grid), ratio_density)
    assert_matches(conditional_density_1d(SUM_JOINT, 0.0, grid), sum_density)


def test_three_routes_agree(grid):
    a = fan_density_diffeo(ratio(), ["x2", "x1*x2"], grid).values
    b = fan_density_shear(ratio("x2"), "x2/x1", grid).values
    c = conditional_density_1d(RATIO_JOINT, -1.0, grid).values
    big = a >= 1e-3
    assert np.max(np.abs(a - b)[big] / a[big]) <= 1e-6
    assert np.max(np.abs(a - c)[big] / a[big]) <= 1e-6


def test_trivial_constraint_and_independence(grid):
    p = LevelSetProblem.build(GAUSS2, "x1", "x2", 0.0)
    t = fan_density_shear(p, "x1", grid)
    # the 25% window drops ~7e-6 of a unit-variance tail
    assert np.allclose(t.values, np.exp(-grid**2 / 2) / math.sqrt(2 * math.pi), rtol=1e-5)
    c = conditional_density_1d("exp(-(x1^2 + x2^2)/2)/(2*pi)", 0.0, grid)
    assert np.allclose(c.values, t.values, rtol=1e-8)


def test_polar_radius_gives_uniform_angle():
    p = LevelSetProblem.build(GAUSS2, "sqrt(x1^2 + x2^2)", "atan2(x2, x1)", 1.0)
    g = np.linspace(-3.0, 3.0, 121)
    t = fan_density_diffeo(p, ["x1*cos(x2)", "x1*sin(x2)"], g, support=(-math.pi, math.pi))
    assert np.ptp(t.values) / t.values.mean() <= 1e-12
    assert t.values[0] == pytest.approx(1 / (2 * math.pi), rel=1e-8)


def test_round_trip_failure_detected(grid):
    with pytest.raises(RoundTripError):
        fan_density_diffeo(ratio(), ["x2", "x2"], grid)
    with pytest.raises(RoundTripError):
        fan_density_shear(summ("x2"), "x1 + x2", grid)


def test_shear_preconditions(grid):
    with pytest.raises(ValueError):
        fan_density_shear(summ("x1"), "x1 - x2", grid)
    cubic = LevelSetProblem.build(GAUSS2, "x1^3 + x2", "x2", 0.0)
    with pytest.raises(ValueError, match="vanishes"):
        fan_density_shear(cubic, "sign(x1 - x2)*abs(x1 - x2)^(1/3)", grid)


def test_null_conditioning():
    joint = "exp(-x1^2/2)*max(0, abs(x2) - 1)"
    with pytest.raises(NullConditioningError):
        conditional_density_1d(joint, 0.5, np.linspace(-3, 3, 61))


def test_tube_full_box_is_exactly_one():
    res = fan_tube_estimate(ratio(), [(-math.inf, math.inf)], TubeSchedule(samples_per_eps=20_000, seed=3))
    assert all(r.estimate == 1.0 and r.stderr == 0.0 for r in res.rows)


def test_tube_schedule_validation():
    with pytest.raises(ValueError):
        TubeSchedule(epsilons=(0.1, 0.2))
    with pytest.raises(ValueError):
        TubeSchedule(epsilons=(1e-7,))
    with pytest.raises(ValueError):
        TubeSchedule(samples_per_eps=100)


def test_extrapolation_recovers_quadratic():
    eps = np.array([0.2, 0.1, 0.05])
    a, se = extrapolate_eps2(eps, 0.3 + 2.0 * eps**2, np.full(3, 1e-3))
    assert a == pytest.approx(0.3, abs=1e-12)
    assert se > 0


def test_tube_estimates_match_closed_form():
    sched = TubeSchedule(samples_per_eps=200_000, seed=11)
    r = fan_tube_estimate(ratio(), [(-0.5, 0.5)], sched)
    s = fan_tube_estimate(summ(), [(-0.5, 0.5)], sched)
    assert abs(r.extrapolated - (1 - math.exp(-0.25))) <= 3 * r.extrapolated_stderr
    assert abs(s.extrapolated - math.erf(0.5)) <= 3 * s.extrapolated_stderr


def test_tube_density_histogram():
    g = np.linspace(-2.5, 2.5, 11)
    t = fan_tube_density(summ(), g, TubeSchedule(samples_per_eps=200_000, seed=2))
    assert t.method == "tube" and t.stderr is not None
    # cell averages of the closed form, compared at 4 sigma per cell
    from scipy.special import erf
    edges = np.concatenate([[g[0] - 0.25], 0.5 * (g[1:] + g[:-1]), [g[-1] + 0.25]])
    cell = 0.5 * (erf(edges[1:]) - erf(edges[:-1])) / np.diff(edges)
    assert np.all(np.abs(t.values - cell) <= 4 * t.stderr + 1e-12)


@pytest.mark.parametrize("workers", [1, 2, 5])
def test_tube_determinism_across_workers(workers):
    sched = TubeSchedule(epsilons=(0.2, 0.05), samples_per_eps=150_000, seed=42)
    base = fan_tube_estimate(ratio(), [(-0.5, 0.5)], sched, workers=1)
    other = fan_tube_estimate(ratio(), [(-0.5, 0.5)], sched, workers=workers)
    assert base.as_sequence() == other.as_sequence()
    assert base.extrapolated == other.extrapolated


def test_tube_with_rejection_sampler():
    spec = SamplerSpec("rejection", box=((-6.0, 6.0), (-6.0, 6.0)), bound=1 / (2 * math.pi))
    r = fan_tube_estimate(summ(), [(-0.5, 0.5)], TubeSchedule(samples_per_eps=100_000, seed=4), sampler=spec)
    assert abs(r.extrapolated - math.erf(0.5)) <= 3 * r.extrapolated_stderr
    with pytest.raises(ValueError):
        fan_tube_estimate(summ(), [(-0.5, 0.5)], TubeSchedule(samples_per_eps=20_000),
                          sampler=SamplerSpec("product", (Marginal("normal"),)))
