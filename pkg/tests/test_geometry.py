import math

import numpy as np
import pytest

from singcond.errors import ChartError, ProjectionError, SingularJacobianError
from singcond.geometry import (Chart, LevelSetProblem, jacobian_J, project_to_level_set,
                               smallest_singular_value, surface_jacobian)

from conftest import GAUSS2

RADIUS = "sign(x2)*sqrt(x1^2 + x2^2)"


def problem(phi, level=0.0, dim=2, psi=()):
    return LevelSetProblem.build(GAUSS2 if dim == 2 else "1", phi, psi, level, dim)


def test_problem_validation():
    with pytest.raises(ValueError):
        LevelSetProblem.build("1", ["x1", "x2"], (), (0, 0), 2)  # k == n
    with pytest.raises(ValueError):
        LevelSetProblem.build("1", "x1", (), (0, 0), 2)  # level length
    with pytest.raises(ValueError):
        LevelSetProblem.build("1", "x1", ("x2", "x1"), 0, 2)  # m > n
    with pytest.raises(ValueError):
        LevelSetProblem.build("1", "x1", (), 0, 5)
    with pytest.raises(ValueError):
        problem("x1").density_at((0, 0)) and LevelSetProblem.build("-1", "x1").density_at((0, 0))


def test_negative_density_is_an_error():
    with pytest.raises(ValueError):
        LevelSetProblem.build("x1", "x2").density_at((-1.0, 0.0))


@pytest.mark.parametrize("phi,x,want", [
    ("x1 + x2", (0.4, -3), math.sqrt(2)),
    ("x2/x1", (1, -1), math.sqrt(2)),
    ("x2/x1", (2, -2), 1 / math.sqrt(2)),
    (RADIUS, (0.6, 0.8), 1.0),
])
def test_jacobian_J(phi, x, want):
    p = problem(phi)
    assert jacobian_J(p, x) == pytest.approx(want, rel=1e-14)
    assert jacobian_J(p, x) == pytest.approx(np.linalg.norm(p.phi[0].grad(x)), rel=1e-15)


def test_smallest_singular_value():
    assert smallest_singular_value(problem("x1 + x2"), (3, 1)) == pytest.approx(math.sqrt(2))
    assert smallest_singular_value(problem("x2/x1"), (2, -2)) == pytest.approx(1 / math.sqrt(2))
    p3 = LevelSetProblem.build("1", ["x1", "x2"], (), (0, 0), 3)
    assert smallest_singular_value(p3, (0.2, 5, -1)) == pytest.approx(1.0)
    skew = LevelSetProblem.build("1", ["x1 + x2", "x1 - x2 + 2*x3"], (), (0, 0), 3)
    D = skew.dphi((0, 0, 0))
    assert smallest_singular_value(skew, (0, 0, 0)) == pytest.approx(np.linalg.svd(D, compute_uv=False)[-1])
    assert jacobian_J(skew, (0, 0, 0)) == pytest.approx(math.sqrt(np.linalg.det(D @ D.T)))


@pytest.mark.parametrize("comps,dom,u,want", [
    (["x1", "-x1"], [(-5, 5)], (0.7,), math.sqrt(2)),
    (["3*cos(x1)", "3*sin(x1)"], [(0, 6)], (1.1,), 3.0),
    (["x1", "0.5"], [(-1, 1)], (0.2,), 1.0),
    (["x1", "x2", "0"], [(0, 1), (0, 1)], (0.3, 0.4), 1.0),
    (["x1*cos(x2)", "x1*sin(x2)", "x1"], [(0.5, 1), (0, 6)], (0.8, 1.0), 0.8 * math.sqrt(2)),
])
def test_surface_jacobian(comps, dom, u, want):
    assert surface_jacobian(Chart.build(comps, dom), u) == pytest.approx(want, rel=1e-14)


def test_degenerate_chart():
    with pytest.raises(ChartError):
        surface_jacobian(Chart.build(["x1^2", "0"], [(-1, 1)]), (0.0,))
    with pytest.raises(ChartError):
        Chart.build(["x1", "x2"], [(0, 1)])
    with pytest.raises(ChartError):
        Chart.build(["x1", "-x1"], [(1, 1)])


def test_chart_validation():
    p = problem("x1 + x2")
    Chart.build(["x1", "-x1"], [(-3, 3)]).validate(p)
    with pytest.raises(ChartError):
        Chart.build(["x1", "x1"], [(-3, 3)]).validate(p)
    with pytest.raises(ChartError):
        Chart.build(["x1", "-x1", "0"], [(-3, 3)]).validate(p)
    # the ratio level set, with the origin removed, is fine
    Chart.build(["x1", "-x1"], [(-math.inf, math.inf)]).validate(problem("x2/x1", -1.0))


def test_projection_linear_example():
    res = project_to_level_set(problem("x1 + x2"), (1.0, 1.0))
    assert np.allclose(res.end, (0, 0), atol=1e-12)
    assert res.extinction_time == 2.0
    one = project_to_level_set(problem("x1 + x2"), (1.0, 1.0), step=5.0)
    assert one.steps == 1 and np.allclose(one.end, (0, 0), atol=1e-15)


def test_projection_on_the_set_is_trivial():
    res = project_to_level_set(problem("x1 + x2"), (0.5, -0.5))
    assert res.extinction_time == 0.0 and res.steps == 0
    assert np.array_equal(res.end, res.start)


def test_projection_radius():
    res = project_to_level_set(problem("sqrt(x1^2 + x2^2)", 1.0), (2.0, 0.0))
    assert np.allclose(res.end, (1, 0), atol=1e-9)
    assert res.extinction_time == pytest.approx(1.0)


def test_projection_idempotent():
    p = problem("x1 + 0.3*sin(x2)", 0.5)
    y = project_to_level_set(p, (2.0, 1.0)).end
    again = project_to_level_set(p, y)
    assert np.linalg.norm(again.end - y) < 1e-7


def test_projection_codim_two():
    p = LevelSetProblem.build("1", ["x1 + x2 + x3", "x1 - x3 + 0.1*x2^2"], (), (1.0, 0.0), 3)
    res = project_to_level_set(p, (0.3, -1.0, 2.0))
    assert p.residual(res.end) <= 1e-8


def test_projection_singular_and_bound_errors():
    p = problem("x1^2 + x2^2", 1.0)
    with pytest.raises(SingularJacobianError):
        project_to_level_set(p, (0.0, 0.0))
    with pytest.raises(ProjectionError):
        project_to_level_set(problem("x2/x1", -1.0), (3.0, 2.0), r=1.0)


@pytest.mark.parametrize("phi,level", [("x1 + 0.3*sin(x2)", 0.2), ("sqrt(x1^2 + x2^2)", 1.0), ("x1 + x2", 0.0)])
def test_projection_bound(phi, level):
    # sigma_min >= 1 - 0.3 = 0.7 for the first, = 1 for the radius, sqrt(2) for the sum
    r = {"x1 + 0.3*sin(x2)": 0.7, "sqrt(x1^2 + x2^2)": 1.0, "x1 + x2": math.sqrt(2)}[phi]
    p = problem(phi, level)
    rng = np.random.default_rng(5)
    for x in rng.uniform(-3, 3, (200, 2)):
        if phi.startswith("sqrt") and np.linalg.norm(x) < 0.05:
            continue
        res = project_to_level_set(p, x, r=r)
        assert p.residual(res.end) <= 1e-8
        assert np.linalg.norm(res.start - res.end) <= res.extinction_time / r + 1e-6
