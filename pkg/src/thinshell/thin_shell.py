"""Thin-shell lattice, fibre averages, impermeable extension and epsilon-rate studies.

A shell field lives on ``(surface node) x (radial node)``; radial nodes are
Gauss-Legendre points of the fibre ``eps g0(y) < r < eps g1(y)``. Scalar shell
fields have shape ``(Ns, Ntheta, Nr)``, vector fields ``(Ns, Ntheta, Nr, 3)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import _kernels
from .calculus import tangential_divergence, tangential_gradient
from .errors import InvalidEpsilonList, OutsideReach, SpatialResolutionError, TooFewRadialNodes
from .helmholtz import project_weighted_solenoidal
from .surface import EYE3, Surface, ThinDomainSpec, boundary_frame, chart_gradient, reach_ok

DEFAULT_NR = 8


def lagrange_diff_matrix(x: np.ndarray) -> np.ndarray:
    """Differentiation matrix of the Lagrange interpolant on nodes ``x``."""
    n = len(x)
    c = np.array([np.prod([x[i] - x[j] for j in range(n) if j != i]) for i in range(n)])
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = (c[i] / c[j]) / (x[i] - x[j])
        D[i, i] = -np.sum(D[i, np.arange(n) != i])
    return D


class ShellGrid:
    """Radial Gauss-Legendre lattice over a surface grid.

    Parameters
    ----------
    spec : ThinDomainSpec
    Nr : int
        Radial nodes per fibre (default 8).
    """

    def __init__(self, spec: ThinDomainSpec, Nr: int = DEFAULT_NR):
        if Nr < 2:
            raise TooFewRadialNodes("need at least 2 radial nodes")
        self.spec = spec
        self.surface = spec.surface
        self.Nr = Nr
        self.x, self.wx = leggauss(Nr)
        self.Dx = lagrange_diff_matrix(self.x)
        eps = spec.eps
        frac = 0.5 * (self.x + 1.0)
        self.r = eps * (spec.g0[..., None] + spec.g[..., None] * frac)   # (Ns, Nt, Nr)
        self.dr = 0.5 * eps * spec.g[..., None] * self.wx                 # fibre weights
        self.J = _jacobian(self.surface.W, self.r)

    @property
    def eps(self) -> float:
        return self.spec.eps

    @cached_property
    def points(self) -> np.ndarray:
        s = self.surface
        return s.y[:, :, None, :] + self.r[..., None] * s.n[:, :, None, :]

    @cached_property
    def grad_r(self) -> np.ndarray:
        """Surface gradient of each radial sheet ``r_k(y)``, shape (Ns, Nt, Nr, 3)."""
        frac = 0.5 * (self.x + 1.0)
        sp = self.spec
        return self.eps * (sp.grad_g0[:, :, None, :] + sp.grad_g[:, :, None, :] * frac[:, None])

    @cached_property
    def resolvent(self) -> np.ndarray:
        """``(I - r W)^{-1}`` at every shell node."""
        A = EYE3 - self.r[..., None, None] * self.surface.W[:, :, None]
        return np.linalg.inv(A)

    def integrate(self, f: np.ndarray) -> float:
        """``int_{Omega_eps} f dx`` by the layer change of variables."""
        dens = self.surface.weights[..., None] * self.dr * self.J
        if f.ndim == 4:
            f = np.sum(f, axis=-1)
        return float(np.sum(dens * f))

    def norm(self, f: np.ndarray) -> float:
        sq = f * f
        if sq.ndim == 5:
            sq = sq.sum(axis=(-1, -2))
        elif sq.ndim == 4:
            sq = sq.sum(axis=-1)
        return math.sqrt(self.integrate(sq))

    def evaluate(self, fun: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Sample an ambient function ``fun(x)`` at all shell nodes."""
        return fun(self.points)


def _jacobian(W, r):
    A = EYE3 - r[..., None, None] * W[:, :, None]
    J = _kernels.det3(A)
    if not reach_ok(A, J):
        raise OutsideReach("shell leaves the region where I - rW is invertible")
    return J


# ---------------------------------------------------------------------------
# basic operators
# ---------------------------------------------------------------------------

def constant_extension(grid: ShellGrid, eta: np.ndarray) -> np.ndarray:
    """``eta o pi``: copy a surface field onto every radial node."""
    eta = np.asarray(eta, dtype=float)
    grid.surface.check_shape(eta)
    return np.repeat(eta[:, :, None], grid.Nr, axis=2)


def normal_derivative(grid: ShellGrid, u: np.ndarray) -> np.ndarray:
    """``d/dr`` along each fibre by radial collocation."""
    scale = 2.0 / (grid.eps * grid.spec.g)[:, :, None]
    du = np.einsum("kl,stl...->stk...", grid.Dx, u)
    if u.ndim == 4:
        scale = scale[..., None]
    return du * scale


def average_M(grid: ShellGrid, u: np.ndarray) -> np.ndarray:
    """Fibre mean ``(1/(eps g)) int u dr``."""
    return 0.5 * np.einsum("k,stk...->st...", grid.wx, u)


def average_Mtau(grid: ShellGrid, u: np.ndarray) -> np.ndarray:
    """Tangential part ``P M u`` of the fibre mean of a vector field."""
    return grid.surface.tangent(average_M(grid, u))


def _psi_vector(spec: ThinDomainSpec, d: np.ndarray, a0: np.ndarray, a1: np.ndarray) -> np.ndarray:
    # (1/g) [(d - eps g0) a1 + (eps g1 - d) a0]; d has a trailing radial axis or none
    eps = spec.eps
    if d.ndim == 3:
        g0, g1, g = (x[:, :, None, None] for x in (spec.g0, spec.g1, spec.g))
        a0, a1 = a0[:, :, None, :], a1[:, :, None, :]
        dd = d[..., None]
    else:
        g0, g1, g = (x[..., None] for x in (spec.g0, spec.g1, spec.g))
        dd = d[..., None]
    return ((dd - eps * g0) * a1 + (eps * g1 - dd) * a0) / g


def impermeable_extension(spec: ThinDomainSpec, v: np.ndarray, r=None,
                          grid: ShellGrid | None = None) -> np.ndarray:
    """``E v = v + (v . Psi) n`` with ``Psi = (1/g)[(r - eps g0) tau1 + (eps g1 - r) tau0]``.

    Evaluated at the shell nodes of ``grid`` (default), or at radii ``r``
    given as a surface field (e.g. ``eps * g1`` for the outer boundary).
    """
    surf = spec.surface
    v = np.asarray(v, dtype=float)
    tau0 = boundary_frame(spec, 0).tau
    tau1 = boundary_frame(spec, 1).tau
    if r is None:
        grid = grid if grid is not None else ShellGrid(spec)
        d = grid.r
        Psi = _psi_vector(spec, d, tau0, tau1)
        vb = v[:, :, None, :]
        return vb + np.sum(vb * Psi, axis=-1)[..., None] * surf.n[:, :, None, :]
    d = np.broadcast_to(np.asarray(r, dtype=float), surf.shape)
    Psi = _psi_vector(spec, d, tau0, tau1)
    return v + np.sum(v * Psi, axis=-1)[..., None] * surf.n


def average_residual_split(grid: ShellGrid, u: np.ndarray):
    """``u_a = E M_tau u`` and ``u_r = u - u_a``."""
    ua = impermeable_extension(grid.spec, average_Mtau(grid, u), grid=grid)
    return ua, u - ua


def ambient_gradient(grid: ShellGrid, u: np.ndarray) -> np.ndarray:
    """Ambient gradient of a shell field, ``[..., i, (j)] = d_i u_(j)``.

    ``grad u = (I - rW)^{-1} grad_Gamma u|_r + n (x) d_r u``; the fixed-r
    surface gradient is the sheet gradient minus ``grad r_k (x) d_r u``.
    """
    surf = grid.surface
    du = normal_derivative(grid, u)
    vec = u.ndim == 4
    sheets = []
    for k in range(grid.Nr):
        sheets.append(chart_gradient(surf, u[:, :, k]))
    G = np.stack(sheets, axis=2)  # (Ns, Nt, Nr, 3[, 3])
    if vec:
        G = G - grid.grad_r[..., :, None] * du[..., None, :]
        out = np.einsum("...il,...lj->...ij", grid.resolvent, G)
        out += surf.n[:, :, None, :, None] * du[..., None, :]
    else:
        G = G - grid.grad_r * du[..., None]
        out = np.einsum("...il,...l->...i", grid.resolvent, G)
        out += surf.n[:, :, None, :] * du[..., None]
    return out


def ambient_divergence(grid: ShellGrid, u: np.ndarray) -> np.ndarray:
    return np.trace(ambient_gradient(grid, u), axis1=-2, axis2=-1)


def averaged_gradient_check(grid: ShellGrid, phi: np.ndarray,
                            grad_phi: np.ndarray | None = None) -> float:
    """Relative residual of ``grad M phi = M(B grad phi) + M(d_n phi psi_eps)``.

    ``grad_phi`` (ambient gradient at the shell nodes) defaults to the one
    assembled from chart and radial derivatives; pass the exact gradient to
    make the check independent of that assembly.
    """
    surf, spec = grid.surface, grid.spec
    lhs = tangential_gradient(surf, average_M(grid, phi))
    gphi = ambient_gradient(grid, phi) if grad_phi is None else grad_phi
    n3 = surf.n[:, :, None, :]
    dn = np.sum(n3 * gphi, axis=-1)
    Pg = gphi - dn[..., None] * n3
    Bg = Pg - grid.r[..., None] * np.einsum("stij,stkj->stki", surf.W, Pg)
    psi = _psi_vector(spec, grid.r, spec.grad_g0, spec.grad_g1)
    rhs = average_M(grid, Bg + dn[..., None] * psi)
    den = surf.norm(lhs)
    return surf.norm(lhs - rhs) / (den if den > 0 else 1.0)


# ---------------------------------------------------------------------------
# epsilon-rate studies
# ---------------------------------------------------------------------------

ESTIMATES = ("comp_n", "extan_div", "lp_etd", "ave_diff_dom", "adiv_tan")
EXPECTED_SLOPE = {"comp_n": 2.0, "extan_div": 1.0, "lp_etd": 1.5, "ave_diff_dom": 1.0,
                  "adiv_tan": 0.5}


def random_tangent_field(surface: Surface, rng: np.random.Generator, degree: int = 2) -> np.ndarray:
    """Tangential part of a random polynomial vector field of the coordinates."""
    y = surface.y / np.abs(surface.y).max()
    monos = [np.ones(surface.shape)]
    for i in range(3):
        monos.append(y[..., i])
    if degree >= 2:
        for i in range(3):
            for j in range(i, 3):
                monos.append(y[..., i] * y[..., j])
    C = rng.normal(size=(len(monos), 3))
    v = sum(m[..., None] * c for m, c in zip(monos, C))
    return surface.tangent(v)


def comp_n_quantity(spec: ThinDomainSpec) -> float:
    """``max_i |n_eps^i - (-1)^{i+1}(n - eps grad g_i)|`` with ``n_eps^i`` taken
    from the cross product of the boundary chart tangents."""
    surf = spec.surface
    eps = spec.eps
    dth_mu = surf.phi[..., None] * surf.eth
    dn_s = -np.einsum("stij,stj->sti", surf.W, surf.ts)           # d_s n = -W t_s
    dn_th = -np.einsum("stij,stj->sti", surf.W, dth_mu)
    worst = 0.0
    for i in (0, 1):
        gi = spec.g_i(i)
        gs, gt = surf.d_s(gi), surf.d_theta(gi)
        Ts = surf.ts + eps * (gs[..., None] * surf.n + gi[..., None] * dn_s)
        Tt = dth_mu + eps * (gt[..., None] * surf.n + gi[..., None] * dn_th)
        nc = np.cross(Ts, Tt)
        nc /= np.linalg.norm(nc, axis=-1, keepdims=True)
        sign = 1.0 if i == 1 else -1.0
        nc *= np.sign(np.sum(nc * surf.n, axis=-1))[..., None] * sign
        approx = sign * (surf.n - eps * spec.grad_g_i(i))
        worst = max(worst, float(np.abs(nc - approx).max()))
    return worst


def _h1_sup(surface: Surface, v: np.ndarray) -> float:
    gv = tangential_gradient(surface, v)
    return float(np.max(np.linalg.norm(v, axis=-1) + np.sqrt(np.sum(gv * gv, axis=(-1, -2)))))


def _h1_norm(surface: Surface, v: np.ndarray) -> float:
    gv = tangential_gradient(surface, v)
    return math.sqrt(surface.inner(v, v) + surface.inner(gv, gv))


@dataclass
class RateStudy:
    estimate: str
    eps: np.ndarray
    quantity: np.ndarray
    reference: np.ndarray
    slope: float
    prefactor: float
    expected: float
    spatial_check: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def ratio(self) -> np.ndarray:
        return self.quantity / self.reference


def fit_slope(eps, values) -> tuple[float, float]:
    """Least-squares slope and prefactor of ``log values`` against ``log eps``."""
    le, lv = np.log(np.asarray(eps)), np.log(np.asarray(values))
    slope, icpt = np.polyfit(le, lv, 1)
    return float(slope), float(math.exp(icpt))


def _validate_eps(eps_list) -> np.ndarray:
    e = np.asarray(eps_list, dtype=float)
    if e.ndim != 1 or len(e) < 4:
        raise InvalidEpsilonList("need at least 4 epsilon values")
    if np.any(e <= 0) or np.any(e >= 1) or np.any(np.diff(e) >= 0):
        raise InvalidEpsilonList("epsilon values must be strictly decreasing in (0, 1)")
    return e


def default_ambient_scalar(x: np.ndarray) -> np.ndarray:
    return np.sin(x[..., 0] + 0.5) * np.cos(0.7 * x[..., 1]) + x[..., 2] ** 2 + 0.3 * x[..., 0] * x[..., 2]


class _Problem:
    """Test fields of one rate study on one surface grid."""

    def __init__(self, estimate: str, surface: Surface, g0, g1, seed: int, Nr: int,
                 phi_fun: Callable):
        self.estimate = estimate
        self.surface = surface
        self.base = ThinDomainSpec(surface, g0, g1, 1e-3)
        self.Nr = Nr
        self.phi_fun = phi_fun
        rng = np.random.default_rng(seed)
        v = random_tangent_field(surface, rng)
        if estimate in ("lp_etd", "adiv_tan"):
            v = project_weighted_solenoidal(surface, self.base.g, v).solenoidal
        self.v = v
        self.z = random_tangent_field(surface, rng, degree=1)

    def measure(self, eps: float) -> tuple[float, float, dict]:
        spec = self.base.with_eps(eps)
        surf = self.surface
        est = self.estimate
        if est == "comp_n":
            return comp_n_quantity(spec), 1.0, {}
        grid = ShellGrid(spec, self.Nr)
        if est == "extan_div":
            Ev = impermeable_extension(spec, self.v, grid=grid)
            div = ambient_divergence(grid, Ev)
            target = tangential_divergence(surf, spec.g[..., None] * self.v) / spec.g
            q = float(np.abs(div - target[..., None]).max())
            return q, _h1_sup(surf, self.v), {}
        if est == "lp_etd":
            Ev = impermeable_extension(spec, self.v, grid=grid)
            return grid.norm(ambient_divergence(grid, Ev)), _h1_norm(surf, self.v), {}
        if est == "ave_diff_dom":
            phi = grid.evaluate(self.phi_fun)
            Mphi = constant_extension(grid, average_M(grid, phi))
            dn = normal_derivative(grid, phi)
            return grid.norm(phi - Mphi), grid.norm(dn), {}
        if est == "adiv_tan":
            Ev = impermeable_extension(spec, self.v, grid=grid)
            u = Ev + (eps * (grid.r - eps * spec.g0[..., None]))[..., None] * self.z[:, :, None, :]
            Mt = average_Mtau(grid, u)
            q = surf.norm(tangential_divergence(surf, spec.g[..., None] * Mt))
            gu = ambient_gradient(grid, u)
            ref = math.sqrt(grid.norm(u) ** 2 + grid.norm(gu) ** 2)
            return q, ref, {"div_u": grid.norm(np.trace(gu, axis1=-2, axis2=-1))}
        raise ValueError(f"unknown estimate {est!r}")


def epsilon_rate_study(estimate: str, surface: Surface, g0, g1,
                       eps_list=(0.1, 0.05, 0.025, 0.0125), seed: int = 0,
                       Nr: int = DEFAULT_NR, phi_fun: Callable = default_ambient_scalar,
                       check_spatial: bool = True, spatial_tol: float = 0.01) -> RateStudy:
    """Measure one estimate over a list of epsilons and fit the log-log slope
    of ``quantity / reference``.

    With ``check_spatial`` the smallest-epsilon value is recomputed on a grid
    refined by 3/2; if the two differ by more than ``spatial_tol`` relative,
    the fit is aborted with :class:`SpatialResolutionError`.
    """
    if estimate not in ESTIMATES:
        raise ValueError(f"unknown estimate {estimate!r}; choose from {ESTIMATES}")
    eps = _validate_eps(eps_list)
    prob = _Problem(estimate, surface, g0, g1, seed, Nr, phi_fun)
    qs, refs, extra = [], [], {}
    for e in eps:
        q, ref, ex = prob.measure(float(e))
        qs.append(q)
        refs.append(ref)
        for k, val in ex.items():
            extra.setdefault(k, []).append(val)
    qs, refs = np.array(qs), np.array(refs)
    slope, pref = fit_slope(eps, qs / refs)
    spatial = None
    if check_spatial:
        n2 = 2 * ((3 * surface.Ns // 2 + 1) // 2)
        t2 = 2 * ((3 * surface.Ntheta // 2 + 1) // 2)
        fine = _Problem(estimate, surface.with_resolution(n2, t2), g0, g1, seed, Nr, phi_fun)
        qf, rf, _ = fine.measure(float(eps[-1]))
        coarse = qs[-1] / refs[-1]
        spatial = abs(qf / rf - coarse) / abs(coarse)
        if spatial > spatial_tol:
            raise SpatialResolutionError(
                f"{estimate}: spatial change {spatial:.2e} at eps={eps[-1]} exceeds {spatial_tol}")
    return RateStudy(estimate, eps, qs, refs, slope, pref, EXPECTED_SLOPE[estimate], spatial,
                     {k: np.array(v) for k, v in extra.items()})
