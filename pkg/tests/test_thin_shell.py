import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from thinshell.errors import (InvalidEpsilonList, InvalidThinDomain, SpatialResolutionError,
                              TooFewRadialNodes)
from thinshell.surface import Surface, ThinDomainSpec, boundary_frame
from thinshell.thin_shell import (ShellGrid, ambient_divergence, ambient_gradient,
                                  average_M, average_Mtau, average_residual_split,
                                  averaged_gradient_check, comp_n_quantity,
                                  constant_extension, epsilon_rate_study, fit_slope,
                                  impermeable_extension, lagrange_diff_matrix,
                                  normal_derivative, random_tangent_field)


def g1_fun(y):
    return 1.0 + 0.2 * y[..., 2]


@pytest.fixture(scope="module")
def spec(sphere):
    return ThinDomainSpec(sphere, 0.0, g1_fun, 0.05)


@pytest.fixture(scope="module")
def grid(spec):
    return ShellGrid(spec)


def test_lagrange_matrix_differentiates_polynomials():
    x = np.polynomial.legendre.leggauss(6)[0]
    D = lagrange_diff_matrix(x)
    np.testing.assert_allclose(D @ x ** 5, 5 * x ** 4, atol=1e-12)
    np.testing.assert_allclose(D @ np.ones(6), 0.0, atol=1e-13)


def test_too_few_radial_nodes(spec):
    with pytest.raises(TooFewRadialNodes):
        ShellGrid(spec, Nr=1)


def test_thin_domain_validation(sphere):
    with pytest.raises(InvalidThinDomain):
        ThinDomainSpec(sphere, 1.0, 1.0, 0.05)
    with pytest.raises(InvalidThinDomain):
        ThinDomainSpec(sphere, 0.0, 1.0, 0.9)


def test_average_of_extension_is_identity(grid, sphere, rng):
    eta = rng.normal() + sphere.y[..., 0] * sphere.y[..., 1]
    assert np.abs(average_M(grid, constant_extension(grid, eta)) - eta).max() < 1e-13


def test_average_of_r(sphere):
    # g0 = 0, g1 = 1: the fibre mean of r is eps / 2
    grid = ShellGrid(ThinDomainSpec(sphere, 0.0, 1.0, 0.1))
    np.testing.assert_allclose(average_M(grid, grid.r), 0.05, atol=1e-14)


def test_normal_derivative(grid):
    np.testing.assert_allclose(normal_derivative(grid, grid.r ** 2), 2 * grid.r, atol=1e-11)
    assert np.abs(normal_derivative(grid, np.ones_like(grid.r))).max() < 1e-11


def test_Mtau_examples(grid, sphere):
    n_ext = np.repeat(sphere.n[:, :, None, :], grid.Nr, axis=2)
    assert np.abs(average_Mtau(grid, n_ext)).max() < 1e-14
    e3 = np.zeros(grid.r.shape + (3,))
    e3[..., 2] = 1.0
    expect = np.array([0.0, 0.0, 1.0]) - sphere.y[..., 2:3] * sphere.y
    np.testing.assert_allclose(average_Mtau(grid, e3), expect, atol=1e-14)


@given(seed=st.integers(0, 2 ** 31 - 1))
def test_Mtau_of_extension_is_identity(seed, spec, grid, sphere):
    v = random_tangent_field(sphere, np.random.default_rng(seed))
    Ev = impermeable_extension(spec, v, grid=grid)
    err = np.abs(average_Mtau(grid, Ev) - v).max()
    assert err <= 1e-12 * max(1.0, np.abs(v).max())


@pytest.mark.parametrize("seed", range(5))
def test_extension_is_impermeable(seed, spec, sphere):
    v = random_tangent_field(sphere, np.random.default_rng(seed))
    for i in (0, 1):
        Ev = impermeable_extension(spec, v, r=spec.eps * spec.g_i(i))
        flux = np.sum(Ev * boundary_frame(spec, i).normal, axis=-1)
        assert np.abs(flux).max() <= 1e-12


def test_extension_with_constant_thickness(sphere, rng):
    spec = ThinDomainSpec(sphere, -0.5, 0.5, 0.05)
    grid = ShellGrid(spec)
    v = random_tangent_field(sphere, rng)
    Ev = impermeable_extension(spec, v, grid=grid)
    assert np.abs(Ev - v[:, :, None, :]).max() < 1e-14
    _, ur = average_residual_split(grid, Ev)
    assert np.abs(ur).max() < 1e-14


def test_averaged_gradient_with_exact_gradient(sphere, torus):
    fun = lambda x: np.sin(x[..., 0]) * x[..., 2] + x[..., 1] ** 2  # noqa: E731

    def grad(x):
        return np.stack([np.cos(x[..., 0]) * x[..., 2], 2 * x[..., 1], np.sin(x[..., 0])], -1)

    for surf in (sphere, torus):
        errs = []
        for N in (32, 64):
            s = surf.with_resolution(N, N)
            grid = ShellGrid(ThinDomainSpec(s, -0.3, g1_fun, 0.05))
            errs.append(averaged_gradient_check(grid, grid.evaluate(fun), grid.evaluate(grad)))
        assert errs[1] < 1e-6
        assert errs[1] < errs[0] / 8


def test_averaged_gradient_with_r(grid):
    exact = np.broadcast_to(grid.surface.n[:, :, None, :], grid.r.shape + (3,))
    assert averaged_gradient_check(grid, grid.r, exact) < 1e-12


def test_ambient_gradient_of_linear_function(grid):
    a = np.array([0.3, -1.2, 0.7])
    g = ambient_gradient(grid, grid.points @ a)
    assert np.abs(g - a).max() < 1e-6


def test_ambient_divergence_of_position(grid):
    assert np.abs(ambient_divergence(grid, grid.points) - 3.0).max() < 1e-6


def test_shell_volume(sphere):
    eps = 0.1
    grid = ShellGrid(ThinDomainSpec(sphere, 0.0, 1.0, eps))
    vol = grid.integrate(np.ones_like(grid.r))
    assert vol == pytest.approx(4 * math.pi / 3 * ((1 + eps) ** 3 - 1), rel=1e-10)


@given(c=st.floats(-2, 2), shift=st.floats(0.1, 3))
def test_average_is_positive_and_linear(c, shift, grid):
    u = grid.r ** 2 + shift
    assert average_M(grid, u).min() > 0
    np.testing.assert_allclose(average_M(grid, c * u), c * average_M(grid, u), atol=1e-13)


def test_comp_n_small_for_constant_offsets(sphere):
    spec = ThinDomainSpec(sphere, 0.0, 1.0, 0.05)
    assert comp_n_quantity(spec) < 1e-12


@pytest.mark.parametrize("eps", [(0.1, 0.05, 0.025), (0.1, 0.05, 0.05, 0.01), (0.1, 0.05, 0.025, -0.1),
                                 (1.5, 0.5, 0.25, 0.1)])
def test_invalid_epsilon_lists(sphere32, eps):
    with pytest.raises(InvalidEpsilonList):
        epsilon_rate_study("comp_n", sphere32, 0.0, g1_fun, eps_list=eps)


def test_fit_slope_exact():
    e = np.array([0.1, 0.05, 0.025, 0.0125])
    slope, pref = fit_slope(e, 3.0 * e ** 1.5)
    assert slope == pytest.approx(1.5)
    assert pref == pytest.approx(3.0)


def test_spatial_check_rejects_underresolved_grid():
    coarse = Surface.sphere(1.0, 8, 8)
    with pytest.raises(SpatialResolutionError):
        epsilon_rate_study("extan_div", coarse, 0.0, g1_fun, spatial_tol=1e-6)


def test_rate_study_comp_n(sphere32):
    res = epsilon_rate_study("comp_n", sphere32, 0.0, g1_fun)
    assert abs(res.slope - 2.0) < 0.2


def test_shell_quadrature_two_assembly_paths(grid, sphere):
    eta = np.cos(sphere.y[..., 0]) + sphere.y[..., 2] ** 2
    vol = grid.integrate(constant_extension(grid, eta))
    fibre = np.sum(grid.dr * grid.J, axis=-1)
    assert vol == pytest.approx(sphere.integrate(eta * fibre), rel=1e-12)
