"""Closed surfaces of revolution and their pointwise geometry.

A surface is ``mu(s, theta) = (phi(s) cos theta, phi(s) sin theta, psi(s))``
with an arc-length profile ``(phi, psi)`` on ``[0, L]``. Two closures are
supported: ``"poles"`` (phi vanishes at both ends, sphere-like) and
``"periodic"`` (torus-like).

Grid layout
-----------
theta is uniform and periodic with ``Ntheta`` points. For pole surfaces s
uses the midpoint grid ``s_j = (j + 1/2) L / Ns`` so no node sits on a pole;
derivatives across a pole read ghost values from the opposite meridian. For
periodic profiles ``s_j = j L / Ns``.

Scalar fields are arrays of shape ``(Ns, Ntheta)``, vector fields
``(Ns, Ntheta, 3)`` (embedded Cartesian components) and matrix fields
``(Ns, Ntheta, 3, 3)`` with ``A[..., i, j]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import _kernels
from .errors import (
    ChartOutOfRange,
    GridMismatch,
    InvalidSurface,
    InvalidThinDomain,
    NotTangential,
    OutsideReach,
    PoleSingularity,
    SingularResolvent,
)

EYE3 = np.eye(3)
POLAR_FILTER_MIN = 8  # theta modes always kept on every ring
FILTER_WINDOW = 3
FILTER_MARGIN = 2
ARC_TOL = 1e-10
ARC_TOL_SAMPLED = 1e-6


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    """Arc-length profile curve ``(phi(s), psi(s))`` with two derivatives."""

    phi: Callable
    dphi: Callable
    ddphi: Callable
    psi: Callable
    dpsi: Callable
    ddpsi: Callable
    L: float
    closure: str  # "poles" | "periodic"
    arc_tol: float = ARC_TOL

    def values(self, s):
        s = np.asarray(s, dtype=float)
        return (self.phi(s), self.dphi(s), self.ddphi(s),
                self.psi(s), self.dpsi(s), self.ddpsi(s))


def sphere_profile(R: float = 1.0) -> Profile:
    if R <= 0:
        raise InvalidSurface("sphere radius must be positive")
    return Profile(
        phi=lambda s: R * np.sin(s / R),
        dphi=lambda s: np.cos(s / R),
        ddphi=lambda s: -np.sin(s / R) / R,
        psi=lambda s: R * np.cos(s / R),
        dpsi=lambda s: -np.sin(s / R),
        ddpsi=lambda s: -np.cos(s / R) / R,
        L=math.pi * R,
        closure="poles",
    )


def torus_profile(R: float = 3.0, a: float = 1.0) -> Profile:
    if not 0 < a < R:
        raise InvalidSurface("torus needs 0 < a < R")
    return Profile(
        phi=lambda s: R + a * np.cos(s / a),
        dphi=lambda s: -np.sin(s / a),
        ddphi=lambda s: -np.cos(s / a) / a,
        psi=lambda s: a * np.sin(s / a),
        dpsi=lambda s: np.cos(s / a),
        ddpsi=lambda s: -np.sin(s / a) / a,
        L=2 * math.pi * a,
        closure="periodic",
    )


def turning_angle_profile(L: float = math.pi, beta: float = 0.2, nquad: int = 48) -> Profile:
    """Convex closed profile with turning angle ``pi s/L + beta sin(2 pi s/L)``.

    ``beta = 0`` is the sphere of radius ``L/pi``. Needs ``|beta| < 1/2`` so the
    meridian curvature stays positive.
    """
    if not abs(beta) < 0.5:
        raise InvalidSurface("turning-angle profile needs |beta| < 1/2")
    k = 2 * math.pi / L
    xg, wg = leggauss(nquad)

    def alpha(s):
        return math.pi * s / L + beta * np.sin(k * s)

    def dalpha(s):
        return math.pi / L + beta * k * np.cos(k * s)

    def _integral(fun, s):
        s = np.asarray(s, dtype=float)
        t = 0.5 * s[..., None] * (xg + 1.0)
        return 0.5 * s * np.sum(wg * fun(alpha(t)), axis=-1)

    psi_shift = 0.5 * float(_integral(np.sin, np.array(L)))

    return Profile(
        phi=lambda s: _integral(np.cos, s),
        dphi=lambda s: np.cos(alpha(s)),
        ddphi=lambda s: -np.sin(alpha(s)) * dalpha(s),
        psi=lambda s: psi_shift - _integral(np.sin, s),
        dpsi=lambda s: -np.sin(alpha(s)),
        ddpsi=lambda s: -np.cos(alpha(s)) * dalpha(s),
        L=L,
        closure="poles",
    )


def profile_from_csv(path: str | Path) -> Profile:
    """Quintic spline through sampled ``s, phi, psi`` columns."""
    from scipy.interpolate import make_interp_spline

    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"s", "phi", "psi"} <= set(reader.fieldnames):
            raise InvalidSurface(f"{path}: need columns s, phi, psi")
        for row in reader:
            rows.append((float(row["s"]), float(row["phi"]), float(row["psi"])))
    if len(rows) < 8:
        raise InvalidSurface(f"{path}: need at least 8 profile samples")
    data = np.array(sorted(rows))
    s, phi, psi = data.T
    s = s - s[0]
    L = float(s[-1])
    scale = max(np.abs(phi).max(), np.abs(psi).max(), 1.0)
    if abs(phi[0]) < 1e-9 * scale and abs(phi[-1]) < 1e-9 * scale:
        closure = "poles"
        bc = None
    elif abs(phi[0] - phi[-1]) < 1e-9 * scale and abs(psi[0] - psi[-1]) < 1e-9 * scale:
        closure = "periodic"
        phi[-1], psi[-1] = phi[0], psi[0]
        bc = "periodic"
    else:
        raise InvalidSurface(f"{path}: profile is neither closed by poles nor periodic")
    sp_phi = make_interp_spline(s, phi, k=5, bc_type=bc)
    sp_psi = make_interp_spline(s, psi, k=5, bc_type=bc)
    d1phi, d2phi = sp_phi.derivative(1), sp_phi.derivative(2)
    d1psi, d2psi = sp_psi.derivative(1), sp_psi.derivative(2)
    return Profile(
        phi=lambda x: sp_phi(x), dphi=lambda x: d1phi(x), ddphi=lambda x: d2phi(x),
        psi=lambda x: sp_psi(x), dpsi=lambda x: d1psi(x), ddpsi=lambda x: d2psi(x),
        L=L, closure=closure, arc_tol=ARC_TOL_SAMPLED,
    )


def _orientation(profile: Profile) -> float:
    # sign making n = o(-psi' cos, -psi' sin, phi') point outward
    x, w = leggauss(256)
    s = 0.5 * profile.L * (x + 1)
    vol = 0.5 * profile.L * np.sum(w * profile.phi(s) * profile.dpsi(s))
    return -1.0 if vol > 0 else 1.0


def _pointwise(profile: Profile, o: float, s, th) -> dict:
    """Frame, normal and chart-route Weingarten map at chart points."""
    s = np.asarray(s, dtype=float)
    th = np.asarray(th, dtype=float)
    s, th = np.broadcast_arrays(s, th)
    phi, dphi, ddphi, psi, dpsi, ddpsi = profile.values(s)
    c, sn = np.cos(th), np.sin(th)
    zero = np.zeros_like(c)
    y = np.stack([phi * c, phi * sn, psi], axis=-1)
    ts = np.stack([dphi * c, dphi * sn, dpsi], axis=-1)
    eth = np.stack([-sn, c, zero], axis=-1)
    n = o * np.stack([-dpsi * c, -dpsi * sn, dphi], axis=-1)
    dn_s = o * np.stack([-ddpsi * c, -ddpsi * sn, ddphi], axis=-1)
    # d_theta n / phi, with the pole limit psi''/phi' where phi = 0
    tiny = 1e-14 * max(1.0, profile.L)
    at_pole = np.abs(phi) <= tiny
    safe_phi = np.where(at_pole, 1.0, phi)
    ratio = np.where(at_pole, ddpsi / np.where(dphi == 0, 1.0, dphi), dpsi / safe_phi)
    dn_th_over_phi = -o * ratio[..., None] * eth
    W = -(ts[..., :, None] * dn_s[..., None, :] + eth[..., :, None] * dn_th_over_phi[..., None, :])
    P = EYE3 - n[..., :, None] * n[..., None, :]
    H = np.trace(W, axis1=-2, axis2=-1)
    K = 0.5 * (H * H - np.einsum("...ij,...ji->...", W, W))
    return dict(s=s, theta=th, phi=phi, dphi=dphi, ddphi=ddphi, psi=psi, dpsi=dpsi,
                ddpsi=ddpsi, y=y, ts=ts, eth=eth, n=n, dn_s=dn_s, W=W, P=P, H=H, K=K,
                at_pole=at_pole)


def fejer_weights(s: np.ndarray, L: float) -> np.ndarray:
    """Weights integrating ``sin(k pi s/L)``, ``k = 1..N``, exactly on ``[0, L]``."""
    N = len(s)
    k = np.arange(1, N + 1)
    S = np.sin(np.outer(s, k) * math.pi / L)
    c = L * (1.0 - (-1.0) ** k) / (k * math.pi)
    return np.linalg.solve(S.T, c)


# ---------------------------------------------------------------------------
# Surface
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Surface:
    """Surface of revolution plus its chart grid.

    Build with :meth:`sphere`, :meth:`torus`, :meth:`turning_angle` or
    :meth:`from_profile_csv`. Grid arrays are computed lazily and cached.
    """

    kind: str
    params: tuple
    profile: Profile = field(repr=False)
    Ns: int = 64
    Ntheta: int = 64

    def __post_init__(self):
        if self.Ns < 4 or self.Ntheta < 4:
            raise InvalidSurface("need Ns >= 4 and Ntheta >= 4")
        if self.profile.closure == "poles" and self.Ntheta % 2:
            raise InvalidSurface("pole surfaces need an even Ntheta")
        if self.profile.closure not in ("poles", "periodic"):
            raise InvalidSurface(f"unknown closure {self.profile.closure!r}")
        self._validate_profile()

    # constructors -----------------------------------------------------------
    @classmethod
    def sphere(cls, R: float = 1.0, Ns: int = 64, Ntheta: int = 64) -> "Surface":
        return cls("sphere", (("R", R),), sphere_profile(R), Ns, Ntheta)

    @classmethod
    def torus(cls, R: float = 3.0, a: float = 1.0, Ns: int = 64, Ntheta: int = 64) -> "Surface":
        return cls("torus", (("R", R), ("a", a)), torus_profile(R, a), Ns, Ntheta)

    @classmethod
    def turning_angle(cls, L: float = math.pi, beta: float = 0.2, Ns: int = 64,
                      Ntheta: int = 64) -> "Surface":
        return cls("revolution", (("L", L), ("beta", beta)),
                   turning_angle_profile(L, beta), Ns, Ntheta)

    @classmethod
    def from_profile_csv(cls, path, Ns: int = 64, Ntheta: int = 64) -> "Surface":
        return cls("revolution", (("profile_file", str(path)),), profile_from_csv(path), Ns, Ntheta)

    def with_resolution(self, Ns: int, Ntheta: int | None = None) -> "Surface":
        return Surface(self.kind, self.params, self.profile, Ns, Ns if Ntheta is None else Ntheta)

    def _validate_profile(self):
        p = self.profile
        s = np.linspace(0.0, p.L, 257)
        _, dphi, _, _, dpsi, _ = p.values(s)
        arc = np.abs(dphi ** 2 + dpsi ** 2 - 1.0)
        if arc.max() > p.arc_tol:
            raise InvalidSurface(f"profile is not arc-length parametrized (defect {arc.max():.2e})")
        phi = p.phi(s)
        if p.closure == "poles":
            if np.any(phi[1:-1] <= 0):
                raise InvalidSurface("phi must be positive away from the poles")
            if abs(dpsi[0]) > 1e3 * p.arc_tol or abs(dpsi[-1]) > 1e3 * p.arc_tol:
                raise InvalidSurface("pole regularity needs psi' = 0 at the poles")
        elif np.any(phi <= 0):
            raise InvalidSurface("periodic profile must stay off the axis")

    # basic info ---------------------------------------------------------------
    @property
    def L(self) -> float:
        return self.profile.L

    @property
    def has_poles(self) -> bool:
        return self.profile.closure == "poles"

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Ns, self.Ntheta)

    @cached_property
    def orientation(self) -> float:
        return _orientation(self.profile)

    @property
    def h_s(self) -> float:
        return self.L / self.Ns

    @property
    def h_theta(self) -> float:
        return 2 * math.pi / self.Ntheta

    @cached_property
    def s(self) -> np.ndarray:
        j = np.arange(self.Ns)
        if self.has_poles:
            return (j + 0.5) * self.h_s
        return j * self.h_s

    @cached_property
    def theta(self) -> np.ndarray:
        return np.arange(self.Ntheta) * self.h_theta

    @cached_property
    def _g(self) -> dict:
        S, TH = np.meshgrid(self.s, self.theta, indexing="ij")
        return _pointwise(self.profile, self.orientation, S, TH)

    # grid arrays
    @property
    def S(self):
        return self._g["s"]

    @property
    def TH(self):
        return self._g["theta"]

    @property
    def phi(self):
        return self._g["phi"]

    @property
    def y(self):
        return self._g["y"]

    @property
    def ts(self):
        return self._g["ts"]

    @property
    def eth(self):
        return self._g["eth"]

    @property
    def n(self):
        return self._g["n"]

    @property
    def W(self):
        return self._g["W"]

    @property
    def P(self):
        return self._g["P"]

    @property
    def H(self):
        return self._g["H"]

    @property
    def K(self):
        return self._g["K"]

    @cached_property
    def bth(self) -> np.ndarray:
        """Dual chart vector ``e_theta / phi`` (so that grad = ts d_s + bth d_theta)."""
        return self.eth / self.phi[..., None]

    @cached_property
    def K_profile(self) -> np.ndarray:
        """Gaussian curvature from the profile alone, ``-phi''/phi``."""
        return -self._g["ddphi"] / self.phi

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights: ``sum(weights * f)`` approximates the surface integral."""
        if self.has_poles:
            w = fejer_weights(self.s, self.L)
        else:
            w = np.full(self.Ns, self.h_s)
        w2 = (w * self.profile.phi(self.s) * self.h_theta)[:, None]
        return np.broadcast_to(w2, self.shape).copy()

    @cached_property
    def area(self) -> float:
        return float(np.sum(self.weights))

    # chart derivatives ------------------------------------------------------
    def d_s(self, f: np.ndarray, parity: float = 1.0) -> np.ndarray:
        """6th-order s-derivative. ``parity`` is the ghost sign across a pole."""
        self.check_shape(f)
        return _kernels.ds_fd6(f, self.h_s, 1 if self.has_poles else 0, parity)

    @cached_property
    def _theta_symbol(self) -> np.ndarray:
        # i*m per ring, Nyquist dropped; near a pole, modes finer than the
        # s-spacing are cut (polar filter) so rounding is not amplified by m/phi
        k = np.arange(self.Ntheta // 2 + 1, dtype=float)
        if self.Ntheta % 2 == 0:
            k[-1] = 0.0
        sym = np.broadcast_to(1j * k, (self.Ns, len(k))).copy()
        if self.has_poles:
            rel = self.profile.phi(self.s) / self.phi.max()
            cut = np.minimum(self.Ntheta // 2, np.ceil(self.Ntheta * rel) + POLAR_FILTER_MIN)
            sym[k[None, :] > cut[:, None]] = 0.0
        return sym

    @cached_property
    def theta_cut(self) -> np.ndarray:
        """Highest theta mode differentiated on each ring."""
        kept = self._theta_symbol.imag > 0
        return np.where(kept.any(axis=1), kept.shape[1] - 1 - np.argmax(kept[:, ::-1], axis=1), 0)

    @cached_property
    def _tangent_keep(self) -> np.ndarray:
        cut = self.theta_cut
        w, d = FILTER_WINDOW, FILTER_MARGIN
        lo = [cut[max(0, j - w):j + w + 1].min() for j in range(self.Ns)]
        return np.maximum(np.array(lo) - d, 0)

    def filter_tangent(self, v: np.ndarray) -> np.ndarray:
        """Drop frame modes of a tangent field that ``d_theta`` cannot resolve.

        The Cartesian components of a frame mode ``m`` carry modes ``m +- 1``;
        keeping ``|m| < theta_cut`` makes every component differentiable.
        The result is tangential and the map is an L2-orthogonal projection.
        """
        self.check_shape(v)
        frame = np.stack([np.sum(v * self.ts, axis=-1), np.sum(v * self.eth, axis=-1)], axis=-1)
        F = np.fft.rfft(frame, axis=1)
        k = np.arange(F.shape[1])
        F[k[None, :] > self._tangent_keep[:, None]] = 0.0
        frame = np.fft.irfft(F, n=self.Ntheta, axis=1)
        return frame[..., 0:1] * self.ts + frame[..., 1:2] * self.eth

    def d_theta(self, f: np.ndarray) -> np.ndarray:
        """Spectral theta-derivative (Nyquist mode dropped, polar filter on
        pole surfaces)."""
        self.check_shape(f)
        F = np.fft.rfft(f, axis=1)
        sym = self._theta_symbol.reshape(self._theta_symbol.shape + (1,) * (f.ndim - 2))
        return np.fft.irfft(F * sym, n=self.Ntheta, axis=1)

    def check_shape(self, f: np.ndarray):
        f = np.asarray(f)
        if f.shape[:2] != self.shape:
            raise GridMismatch(f"field of shape {f.shape} on a {self.shape} grid")

    def integrate(self, f: np.ndarray) -> np.ndarray | float:
        """Surface integral of a scalar (or componentwise of a vector) field."""
        self.check_shape(f)
        w = self.weights.reshape(self.shape + (1,) * (np.ndim(f) - 2))
        return np.sum(w * f, axis=(0, 1))

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """L2 inner product of scalar, vector or matrix fields."""
        prod = u * v
        if prod.ndim > 2:
            prod = prod.reshape(self.shape + (-1,)).sum(axis=-1)
        return float(np.sum(self.weights * prod))

    def norm(self, u: np.ndarray) -> float:
        return math.sqrt(max(self.inner(u, u), 0.0))

    def tangent(self, v: np.ndarray) -> np.ndarray:
        """Tangential part ``P v`` of a vector field."""
        return np.einsum("...ij,...j->...i", self.P, v)

    def describe(self) -> str:
        p = ", ".join(f"{k}={v}" for k, v in self.params)
        return f"{self.kind}({p}) Ns={self.Ns} Ntheta={self.Ntheta}"


# ---------------------------------------------------------------------------
# pointwise quantities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurfacePoint:
    s: float
    theta: float
    y: np.ndarray
    ds_mu: np.ndarray
    dtheta_mu: np.ndarray
    metric: np.ndarray
    n: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    W: np.ndarray
    H: float
    K: float


def surface_quantities(surface: Surface, s: float, theta: float) -> SurfacePoint:
    """All pointwise quantities at chart point ``(s, theta)``.

    ``W`` is assembled as ``-grad_Gamma n`` from the chart derivatives of the
    normal. At a pole the limit ``psi'/phi -> psi''/phi'`` is used.
    """
    L = surface.L
    if not (-1e-12 * L <= s <= L * (1 + 1e-12)):
        raise ChartOutOfRange(f"s={s} outside [0, {L}]")
    if not np.isfinite(theta):
        raise ChartOutOfRange("theta must be finite")
    d = _pointwise(surface.profile, surface.orientation, float(s), float(theta))
    if d["at_pole"] and abs(float(d["dphi"])) < 1e-12:
        raise PoleSingularity(f"no pole limit at s={s}")
    phi = float(d["phi"])
    dth = np.array([-phi * math.sin(theta), phi * math.cos(theta), 0.0])
    metric = np.diag([1.0, phi * phi])
    n = d["n"]
    Q = np.outer(n, n)
    return SurfacePoint(float(s), float(theta), d["y"], d["ts"], dth, metric, n,
                        d["P"], Q, d["W"], float(d["H"]), float(d["K"]))


def principal_weingarten(surface: Surface, s=None, theta=None) -> np.ndarray:
    """Weingarten map from the principal curvatures of the profile.

    Independent of :func:`surface_quantities`; used as an oracle.
    ``W = o k t (x) t + o (psi'/phi) e (x) e`` with ``k = phi' psi'' - phi'' psi'``.
    """
    if s is None:
        s, theta = surface.S, surface.TH
    phi, dphi, ddphi, psi, dpsi, ddpsi = surface.profile.values(s)
    o = surface.orientation
    c, sn = np.cos(theta), np.sin(theta)
    t = np.stack([dphi * c, dphi * sn, dpsi], axis=-1)
    e = np.stack([-sn, c, np.zeros_like(c)], axis=-1)
    k1 = o * (dphi * ddpsi - ddphi * dpsi)
    k2 = o * dpsi / phi
    return (k1[..., None, None] * t[..., :, None] * t[..., None, :]
            + k2[..., None, None] * e[..., :, None] * e[..., None, :])


def reach_ok(A: np.ndarray, J: np.ndarray) -> bool:
    """``I - rW`` is positive definite: its tangential eigenvalues
    ``1 - r kappa_i`` have positive product ``J`` and positive sum."""
    return bool(np.all(J > 0) and np.all(np.trace(A, axis1=-2, axis2=-1) > 1.0))


def shell_jacobian(W: np.ndarray, r) -> np.ndarray | float:
    """``J(y, r) = det(I - r W(y))``; raises :class:`OutsideReach` if ``J <= 0``.

    ``W`` may be one matrix or a stack; ``r`` broadcasts against the stack.
    """
    W = np.asarray(W, dtype=float)
    r = np.asarray(r, dtype=float)
    A = EYE3 - r[..., None, None] * W
    J = _kernels.det3(A)
    if not reach_ok(A, J):
        raise OutsideReach("I - rW is not positive definite here")
    return float(J) if J.ndim == 0 else J


def surface_integral(surface: Surface, field: np.ndarray) -> float:
    """Quadrature of a scalar field over the surface."""
    field = np.asarray(field, dtype=float)
    surface.check_shape(field)
    if field.shape != surface.shape:
        raise GridMismatch("surface_integral expects a scalar field")
    return float(np.sum(surface.weights * field))


def chart_gradient(surface: Surface, f: np.ndarray, parity: float = 1.0) -> np.ndarray:
    """Tangential gradient of a field of any trailing shape.

    Returns ``out[..., i, *rest] = D_i f[..., *rest]``.
    """
    fs = surface.d_s(f, parity)
    ft = surface.d_theta(f)
    extra = (None,) * (np.ndim(f) - 2)
    ts = surface.ts[(Ellipsis, slice(None)) + extra]
    bt = surface.bth[(Ellipsis, slice(None)) + extra]
    return ts * fs[:, :, None] + bt * ft[:, :, None]


def offset_surface_integral(surface: Surface, field: np.ndarray, h: np.ndarray) -> float:
    """Integral over ``Gamma_h = {y + h(y) n(y)}`` pulled back to the surface.

    Density ``J(y, h) sqrt(1 + |tau_h|^2)`` with
    ``tau_h = (I - hW)^{-1} grad_Gamma h``.
    """
    field = np.asarray(field, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), surface.shape)
    surface.check_shape(field)
    J = shell_jacobian(surface.W, h)
    gh = chart_gradient(surface, h)
    A = EYE3 - h[..., None, None] * surface.W
    tau = _kernels.solve3(A, gh)
    dens = J * np.sqrt(1.0 + np.sum(tau * tau, axis=-1))
    return float(np.sum((surface.weights * field) * dens))


# ---------------------------------------------------------------------------
# thin domain description
# ---------------------------------------------------------------------------

def _as_field(surface: Surface, g) -> np.ndarray:
    if callable(g):
        g = g(surface.y)
    g = np.asarray(g, dtype=float)
    return np.broadcast_to(g, surface.shape).copy()


@dataclass(frozen=True, eq=False)
class ThinDomainSpec:
    """Curved thin domain ``{y + r n : eps g0 < r < eps g1}``.

    ``g0`` and ``g1`` are arrays on the grid or callables of the embedded
    position ``y`` (shape ``(..., 3)``).
    """

    surface: Surface
    g0: np.ndarray
    g1: np.ndarray
    eps: float
    safety: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "g0", _as_field(self.surface, self.g0))
        object.__setattr__(self, "g1", _as_field(self.surface, self.g1))
        if not 0 < self.eps < 1:
            raise InvalidThinDomain("eps must lie in (0, 1)")
        if self.g.min() <= 0:
            raise InvalidThinDomain("g = g1 - g0 must be positive")
        kmax = np.abs(np.linalg.eigvalsh(0.5 * (self.surface.W + np.swapaxes(self.surface.W, -1, -2)))).max()
        gmax = max(np.abs(self.g0).max(), np.abs(self.g1).max())
        if self.eps * gmax * kmax >= self.safety:
            raise InvalidThinDomain(
                f"eps*max|g_i|*max|kappa| = {self.eps * gmax * kmax:.3g} >= {self.safety}")

    def with_eps(self, eps: float) -> "ThinDomainSpec":
        return ThinDomainSpec(self.surface, self.g0, self.g1, eps, self.safety)

    @cached_property
    def g(self) -> np.ndarray:
        return self.g1 - self.g0

    @cached_property
    def grad_g0(self) -> np.ndarray:
        return chart_gradient(self.surface, self.g0)

    @cached_property
    def grad_g1(self) -> np.ndarray:
        return chart_gradient(self.surface, self.g1)

    @cached_property
    def grad_g(self) -> np.ndarray:
        return self.grad_g1 - self.grad_g0

    def g_i(self, i: int) -> np.ndarray:
        return (self.g0, self.g1)[i]

    def grad_g_i(self, i: int) -> np.ndarray:
        return (self.grad_g0, self.grad_g1)[i]


@dataclass(frozen=True)
class BoundaryFrame:
    tau: np.ndarray
    normal: np.ndarray


def boundary_frame(spec: ThinDomainSpec, i: int) -> BoundaryFrame:
    """``tau = (I - eps g_i W)^{-1} grad g_i`` and the outer unit normal of
    the boundary sheet ``i``: ``(-1)^{i+1} (n - eps tau) / sqrt(1 + eps^2 |tau|^2)``.
    """
    if i not in (0, 1):
        raise ValueError("boundary index must be 0 or 1")
    surf = spec.surface
    r = spec.eps * spec.g_i(i)
    A = EYE3 - r[..., None, None] * surf.W
    if np.any(_kernels.det3(A) <= 1e-12):
        raise SingularResolvent("I - eps g_i W is singular")
    tau = _kernels.solve3(A, spec.grad_g_i(i))
    sign = 1.0 if i == 1 else -1.0
    nrm = np.sqrt(1.0 + spec.eps ** 2 * np.sum(tau * tau, axis=-1))
    normal = sign * (surf.n - spec.eps * tau) / nrm[..., None]
    return BoundaryFrame(tau, normal)


# ---------------------------------------------------------------------------
# rigid fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidField:
    """``w(x) = a x x + b``."""

    a: np.ndarray
    b: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.cross(np.broadcast_to(self.a, x.shape), x) + self.b

    @classmethod
    def from_coeffs(cls, c) -> "RigidField":
        c = np.asarray(c, dtype=float)
        return cls(c[:3].copy(), c[3:].copy())


@dataclass
class RigidScan:
    dims: dict
    bases: dict
    eigenvalues: dict
    residuals: dict


def _gram(surface: Surface, vec: np.ndarray) -> np.ndarray:
    # features of (a, b) -> w . vec = a . (x x vec) + b . vec
    feat = np.concatenate([np.cross(surface.y, vec), vec], axis=-1)
    return np.einsum("st,sti,stj->ij", surface.weights, feat, feat)


def _null_space(G: np.ndarray, rel: float):
    lam, V = np.linalg.eigh(0.5 * (G + G.T))
    top = max(lam.max(), np.finfo(float).tiny)
    mask = lam < rel * top
    return lam, [RigidField.from_coeffs(V[:, k]) for k in np.flatnonzero(mask)]


def rigid_field_scan(surface: Surface, spec: ThinDomainSpec | None = None,
                     threshold: float = 1e-8) -> RigidScan:
    """Dimensions and bases of the rigid fields tangent to the surface.

    Keys: ``"R"`` (tangential), and with ``spec`` also ``"R01"`` (tangential and
    orthogonal to both ``grad g_i``) and ``"Rg"`` (tangential and orthogonal to
    ``grad g``).
    """
    forms = {"R": _gram(surface, surface.n)}
    if spec is not None:
        G0 = _gram(surface, spec.grad_g0)
        G1 = _gram(surface, spec.grad_g1)
        forms["R01"] = forms["R"] + G0 + G1
        forms["Rg"] = forms["R"] + _gram(surface, spec.grad_g)
    dims, bases, eigs, res = {}, {}, {}, {}
    for key, G in forms.items():
        lam, basis = _null_space(G, threshold)
        dims[key] = len(basis)
        bases[key] = basis
        eigs[key] = lam
        worst = 0.0
        for w in basis:
            wv = w(surface.y)
            worst = max(worst, np.abs(np.sum(wv * surface.n, axis=-1)).max()
                        / max(np.abs(wv).max(), 1e-300))
        res[key] = worst
    return RigidScan(dims, bases, eigs, res)


def killing_eigen_check(surface: Surface, w: RigidField, tol: float = 1e-8) -> dict:
    """Residuals of ``W w = lambda w`` and ``a x n = -lambda w`` over the grid."""
    wv = w(surface.y)
    wmax = np.abs(wv).max()
    if wmax == 0 or np.abs(np.sum(wv * surface.n, axis=-1)).max() > tol * wmax:
        raise NotTangential("w is not tangent to the surface")
    Ww = np.einsum("...ij,...j->...i", surface.W, wv)
    w2 = np.sum(wv * wv, axis=-1)
    mask = w2 > (1e-8 * wmax) ** 2
    lam = np.where(mask, np.sum(Ww * wv, axis=-1) / np.where(mask, w2, 1.0), 0.0)
    wnorm = np.sqrt(w2)
    scale_w = np.abs(surface.W).max()
    r1 = np.linalg.norm(Ww - lam[..., None] * wv, axis=-1) / (scale_w * wnorm + 1e-300)
    axn = np.cross(np.broadcast_to(w.a, wv.shape), surface.n)
    r2 = np.linalg.norm(axn + lam[..., None] * wv, axis=-1) / (np.linalg.norm(w.a) + 1e-300)
    return {
        "collinearity": float(r1[mask].max()),
        "axn": float(r2[mask].max()),
        "lambda": lam,
    }
