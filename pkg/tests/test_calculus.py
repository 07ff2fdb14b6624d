import numpy as np
import pytest
from hypothesis import given, strategies as st

from thinshell.calculus import (bochner_laplacian, bochner_laplacian_frame, covariant_derivative,
                                directional_derivative, korn_constant_estimate, laplace_beltrami,
                                strain_rate, tangential_divergence, tangential_gradient,
                                vector_laplacian_killing_check)
from thinshell.errors import EigSolverFailure, GridMismatch
from thinshell.identities import order_study
from thinshell.surface import Surface


def test_gradient_of_height_on_sphere(sphere):
    # grad y3 = P e3 = e3 - y3 y
    y = sphere.y
    expected = np.array([0, 0, 1.0]) - y[..., 2:3] * y
    np.testing.assert_allclose(tangential_gradient(sphere, y[..., 2]), expected, atol=1e-10)


def test_gradient_is_tangent(torus, rng):
    f = np.sin(torus.y[..., 0]) * torus.y[..., 2]
    g = tangential_gradient(torus, f)
    assert np.abs(np.sum(g * torus.n, -1)).max() < 1e-14


@pytest.mark.parametrize("deg, lam", [(1, -2.0), (2, -6.0)])
def test_spherical_harmonic_eigenvalues(sphere, deg, lam):
    y = sphere.y
    f = y[..., 2] if deg == 1 else y[..., 0] * y[..., 1]
    np.testing.assert_allclose(laplace_beltrami(sphere, f), lam * f, atol=1e-6)


def test_divergence_of_projection_is_Hn(sphere, torus):
    for s in (sphere, torus):
        res = tangential_divergence(s, s.P) - s.H[..., None] * s.n
        assert s.norm(res) < 1e-5


def test_divergence_theorem(torus):
    v = torus.tangent(np.stack([torus.y[..., 1], torus.y[..., 2] ** 2, np.cos(torus.y[..., 0])], -1))
    assert abs(torus.integrate(tangential_divergence(torus, v))) < 1e-8


def test_bad_field_rank(sphere):
    with pytest.raises(GridMismatch):
        tangential_gradient(sphere, np.zeros(sphere.shape + (3, 3)))


def test_killing_field_has_zero_strain(sphere, torus):
    for s in (sphere, torus):
        w = np.cross(np.array([0, 0, 1.0]), s.y)
        assert np.abs(strain_rate(s, w)).max() < 1e-8


def test_centripetal_covariant_derivative(sphere):
    # for v = e3 x y: nabla_v v = grad(y3^2 / 2)
    v = np.cross(np.array([0, 0, 1.0]), sphere.y)
    expected = tangential_gradient(sphere, 0.5 * sphere.y[..., 2] ** 2)
    np.testing.assert_allclose(covariant_derivative(sphere, v, v), expected, atol=1e-9)


def test_gauss_formula_normal_part(torus):
    X = torus.tangent(np.stack([torus.y[..., 1], 0 * torus.y[..., 0] + 1, torus.y[..., 0]], -1))
    Y = np.cross(torus.n, X)
    full = directional_derivative(torus, X, Y)
    WX = np.einsum("...ij,...j->...i", torus.W, X)
    np.testing.assert_allclose(np.sum(full * torus.n, -1), np.sum(WX * Y, -1), atol=1e-4)


def test_bochner_two_routes_agree(sphere):
    X = sphere.tangent(np.stack([sphere.y[..., 1], np.ones(sphere.shape), sphere.y[..., 0] ** 2], -1))
    a, b = bochner_laplacian(sphere, X), bochner_laplacian_frame(sphere, X)
    assert sphere.norm(a - b) / sphere.norm(a) < 1e-5


def test_limit_identity_on_divergence_free_field(torus):
    eta = np.sin(torus.y[..., 0]) + torus.y[..., 2] ** 2
    v = np.cross(torus.n, tangential_gradient(torus, eta))
    assert torus.norm(vector_laplacian_killing_check(torus, v)) / torus.norm(v) < 1e-4


@pytest.mark.slow
def test_differential_identities_converge_at_high_order():
    st = order_study(Surface.sphere(1.0, 32, 32), (32, 64))
    assert min(st.slopes.values()) > 4


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_gradient_is_linear(a, b):
    s = Surface.torus(3.0, 1.0, 16, 16)
    f, g = s.y[..., 0], np.sin(s.y[..., 2])
    lhs = tangential_gradient(s, a * f + b * g)
    rhs = a * tangential_gradient(s, f) + b * tangential_gradient(s, g)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11)


def test_korn_estimate(sphere):
    est = korn_constant_estimate(sphere, 3, 3)
    assert est.dim == 18
    assert np.isfinite(est.c_est) and est.c_est >= 1.0
    # enlarging the trial space cannot decrease a Rayleigh maximum
    assert korn_constant_estimate(sphere, 4, 4).c_est >= est.c_est * (1 - 1e-10)


def test_korn_empty_basis(sphere):
    with pytest.raises(EigSolverFailure):
        korn_constant_estimate(sphere, basis=[])
