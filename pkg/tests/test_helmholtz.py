import numpy as np
import pytest
from hypothesis import given, strategies as st

from thinshell.calculus import tangential_divergence, tangential_gradient
from thinshell.errors import NonpositiveWeight
from thinshell.helmholtz import (decompose_general, decompose_general_weighted, mean_value,
                                 poisson_solve, project_weighted_solenoidal, solve_elliptic,
                                 weighted_poisson_solve)
from thinshell.surface import Surface
from thinshell.thin_shell import random_tangent_field


def test_sphere_eigenfunction_solve(sphere):
    # -Delta y3 = 2 y3 on the unit sphere
    y3 = sphere.y[..., 2]
    rep = poisson_solve(sphere, 2 * y3)
    assert sphere.norm(rep.q - y3) / sphere.norm(y3) < 1e-8
    assert abs(rep.mean) < 1e-14


def test_weighted_poisson_manufactured(sphere):
    # q = y1 y2, g = 1 + 0.3 y3: -div(g grad q) = 6 y1 y2 + 2.4 y1 y2 y3
    y1, y2, y3 = sphere.y[..., 0], sphere.y[..., 1], sphere.y[..., 2]
    xi = 6 * y1 * y2 + 2.4 * y1 * y2 * y3
    rep = weighted_poisson_solve(sphere, 1 + 0.3 * y3, xi)
    assert np.abs(rep.q - y1 * y2).max() < 1e-8


def test_constant_rhs_is_incompatible_and_removed(torus):
    rep = weighted_poisson_solve(torus, 1.0, np.ones(torus.shape))
    assert np.abs(rep.q).max() < 1e-10
    assert rep.notes


def test_nonpositive_weight(sphere):
    with pytest.raises(NonpositiveWeight):
        weighted_poisson_solve(sphere, -np.ones(sphere.shape), np.zeros(sphere.shape))
    with pytest.raises(NonpositiveWeight):
        project_weighted_solenoidal(sphere, 0.0, np.zeros(sphere.shape + (3,)))


@pytest.mark.parametrize("surf", ["sphere", "torus"])
def test_projection_properties(surf, request, rng):
    s = request.getfixturevalue(surf)
    g = 1 + 0.3 * s.y[..., 2] / np.abs(s.y[..., 2]).max()
    v = random_tangent_field(s, rng)
    res = project_weighted_solenoidal(s, g, v)
    vg = res.solenoidal
    assert res.div_residual < 1e-8 * s.norm(v)
    again = project_weighted_solenoidal(s, g, vg).solenoidal
    assert s.norm(again - vg) < 2e-10 * s.norm(v)
    assert s.norm(vg + res.gradient_part - v) < 1e-13 * s.norm(v)
    assert res.orthogonality < 1e-6


def test_projection_non_axisymmetric_weight(sphere, rng):
    g = 1 + 0.3 * sphere.y[..., 0]
    res = project_weighted_solenoidal(sphere, g, random_tangent_field(sphere, rng))
    assert res.solve.iterations > 1
    assert res.div_residual < 1e-8


def test_gradient_complement_is_annihilated(sphere):
    g = 1 + 0.3 * sphere.y[..., 2]
    grad = tangential_gradient(sphere, sphere.y[..., 2])
    assert sphere.norm(project_weighted_solenoidal(sphere, g, g[..., None] * grad).solenoidal) < 1e-8
    assert sphere.norm(project_weighted_solenoidal(sphere, g, grad, inner="weighted").solenoidal) < 1e-8


def test_killing_fields_are_fixed_points(torus):
    w = np.cross([0, 0, 1.0], torus.y)
    res = project_weighted_solenoidal(torus, 1.0, w)
    assert torus.norm(res.solenoidal - w) < 1e-10


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_projection_is_linear(a, b):
    s = Surface.sphere(1.0, 16, 16)
    rng = np.random.default_rng(7)
    u, v = random_tangent_field(s, rng), random_tangent_field(s, rng)
    P = lambda x: project_weighted_solenoidal(s, 1.0, x, tol=1e-12).solenoidal
    err = s.norm(P(a * u + b * v) - a * P(u) - b * P(v))
    assert err <= 1e-10 * (abs(a) * s.norm(u) + abs(b) * s.norm(v)) + 1e-14


@pytest.mark.parametrize("surf", ["sphere", "torus"])
def test_general_decomposition_recovers_potential(surf, request):
    s = request.getfixturevalue(surf)
    psi = s.y[..., 0] * s.y[..., 2] + 0.5 * s.y[..., 1]
    w = np.cross(s.n, tangential_gradient(s, np.sin(s.y[..., 1])))
    v = w + tangential_gradient(s, psi) + (psi * s.H)[..., None] * s.n
    res = decompose_general(s, v)
    assert np.abs(res.q - psi).max() < 1e-5
    assert s.norm(res.solenoidal + res.gradient_part - v) <= 1e-9 * s.norm(v)


def test_general_decomposition_of_killing_field(sphere):
    res = decompose_general(sphere, np.cross([1.0, 0, 0], sphere.y))
    assert np.abs(res.q).max() < 1e-10


def test_general_weighted_roundtrip(torus):
    g = 1 + 0.2 * torus.y[..., 2]
    v = torus.n * torus.y[..., 0:1] + np.cross(torus.n, tangential_gradient(torus, torus.y[..., 1]))
    res = decompose_general_weighted(torus, g, v)
    assert torus.norm(res.solenoidal + res.gradient_part - v) <= 1e-9 * torus.norm(v)
    assert res.div_residual < 1e-8


def test_screened_solve_is_nonsingular(sphere):
    q = sphere.y[..., 2] + 0.7
    rhs = tangential_divergence(sphere, tangential_gradient(sphere, q)) - q
    rep = solve_elliptic(sphere, rhs, c=1.0, mean_zero=False)
    assert np.abs(rep.q - q).max() < 1e-8
    assert mean_value(sphere, rep.q) == pytest.approx(0.7, abs=1e-8)
