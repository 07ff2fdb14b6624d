"""Residuals of the geometric identities used by the verification suites.

Algebraic residuals are pointwise maxima and resolution independent.
Differential residuals shrink at the differentiation order; ``order_study``
measures that order between two grids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .calculus import (bochner_laplacian, bochner_laplacian_frame, covariant_derivative,
                       directional_derivative, tangential_divergence, tangential_gradient,
                       vector_laplacian_killing_check)
from .helmholtz import project_weighted_solenoidal
from .surface import EYE3, Surface, ThinDomainSpec, killing_eigen_check, rigid_field_scan


def _mm(A, B):
    return np.einsum("...ij,...jk->...ik", A, B)


def algebraic_residuals(surface: Surface, radii=None) -> dict[str, float]:
    """Pointwise maxima of ``P^2 - P``, ``Wn``, ``PW - W``, ``WP - W``,
    ``tr W - H``, ``(H^2 - tr W^2)/2 - K`` and ``det(I - rW) - (1 - rH + r^2 K)``."""
    P, W, n, H, K = surface.P, surface.W, surface.n, surface.H, surface.K
    kmax = float(np.abs(W).max())
    if radii is None:
        radii = np.array([-0.4, -0.1, 0.1, 0.4]) / max(kmax, 1e-12)
    out = {
        "P2": float(np.abs(_mm(P, P) - P).max()),
        "Wn": float(np.abs(np.einsum("...ij,...j->...i", W, n)).max()),
        "PW": float(np.abs(_mm(P, W) - W).max()),
        "WP": float(np.abs(_mm(W, P) - W).max()),
        "trW": float(np.abs(np.trace(W, axis1=-2, axis2=-1) - H).max()),
        "K": float(np.abs(0.5 * (H ** 2 - np.einsum("...ij,...ji->...", W, W)) - K).max()),
    }
    worst = 0.0
    for r in radii:
        J = _kernels.det3(EYE3 - r * W)
        worst = max(worst, float(np.abs(J - (1 - r * H + r * r * K)).max()))
    out["J"] = worst
    return out


def unit_sphere_WP(surface: Surface) -> float:
    """``max |W + P|``; zero on the unit sphere with the outward normal."""
    return float(np.abs(surface.W + surface.P).max())


def smooth_test_fields(surface: Surface):
    """Fixed smooth scalar and tangent fields built from the coordinates."""
    y = surface.y
    x1, x2, x3 = y[..., 0], y[..., 1], y[..., 2]
    eta = np.sin(x1) + x2 * x3 ** 2 + 0.3 * x1 * x2
    X = surface.tangent(np.stack([x2 * x3, np.cos(x1), x1 + x3 ** 2], -1))
    Y = surface.tangent(np.stack([1 + x3, x1 * x2, np.sin(x2)], -1))
    return eta, X, Y


def differential_residuals(surface: Surface) -> dict[str, float]:
    """L2 residuals of ``div P - Hn``, the Gauss formula, the Bochner identity
    and ``2 P div D(v) - Delta_B v - K v`` on a projected solenoidal ``v``."""
    eta, X, Y = smooth_test_fields(surface)
    s = surface
    out = {}
    out["form_W"] = s.norm(tangential_divergence(s, s.P) - s.H[..., None] * s.n)
    WX = np.einsum("...ij,...j->...i", s.W, X)
    gauss = (directional_derivative(s, X, Y) - covariant_derivative(s, X, Y)
             - np.sum(WX * Y, axis=-1)[..., None] * s.n)
    out["gauss"] = s.norm(gauss) / s.norm(X)
    BL = bochner_laplacian(s, X)
    out["bochner"] = s.norm(BL - bochner_laplacian_frame(s, X)) / s.norm(BL)
    v0 = np.cross(s.n, tangential_gradient(s, eta)) + X
    v = project_weighted_solenoidal(s, 1.0, v0).solenoidal
    out["limit_eq"] = s.norm(vector_laplacian_killing_check(s, v)) / s.norm(v)
    return out


@dataclass
class OrderStudy:
    N: tuple
    residuals: dict
    slopes: dict


def order_study(surface: Surface, N=(64, 256)) -> OrderStudy:
    """Residuals at each ``N`` (``Ns = Ntheta = N``) and the log-log slopes
    ``-d log(residual) / d log(N)`` between the first and last grid."""
    res = {}
    for n in N:
        res[n] = differential_residuals(surface.with_resolution(n, n))
    slopes = {}
    a, b = N[0], N[-1]
    for k in res[a]:
        ra, rb = res[a][k], res[b][k]
        slopes[k] = math.log(ra / rb) / math.log(b / a) if ra > 0 and rb > 0 else math.inf
    return OrderStudy(tuple(N), res, slopes)


def appendix_checks(surface: Surface, g=None) -> dict:
    """Rigid-field dimensions, worst eigenrelation residual and the
    ``K = -phi''/phi`` cross-check for a surface of revolution."""
    spec = None
    if g is not None:
        gf = g(surface.y) if callable(g) else np.broadcast_to(g, surface.shape)
        kmax = float(np.abs(surface.W).max()) + 1.0
        spec = ThinDomainSpec(surface, 0.0, gf, 0.1 / (kmax * float(np.max(gf))))
    scan = rigid_field_scan(surface, spec)
    eig = 0.0
    for w in scan.bases["R"]:
        chk = killing_eigen_check(surface, w)
        eig = max(eig, chk["collinearity"], chk["axn"])
    return {
        "dims": scan.dims,
        "eigen_residual": eig,
        "K_profile": float(np.abs(surface.K - surface.K_profile).max()),
    }
