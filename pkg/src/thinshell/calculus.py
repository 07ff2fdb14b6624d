"""Discrete tangential calculus on a :class:`~thinshell.surface.Surface` grid.

Derivatives are taken in chart coordinates (6th-order differences in s,
Fourier in theta) and assembled into embedded 3-vectors through the dual
basis ``grad f = t_s d_s f + (e_theta / phi) d_theta f``. Conventions:

* ``grad_Gamma v`` has entries ``[i, j] = D_i v_j``;
* ``div_Gamma v = tr grad_Gamma v`` and ``[div_Gamma A]_j = sum_i D_i A_ij``;
* ``(Y . grad) X = (grad X)^T Y``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import EigSolverFailure, GridMismatch
from .surface import Surface, chart_gradient


def _mv(A, v):
    return np.einsum("...ij,...j->...i", A, v)


def _mm(A, B):
    return np.einsum("...ij,...jk->...ik", A, B)


def tangential_gradient(surface: Surface, f: np.ndarray, parity: float = 1.0) -> np.ndarray:
    """``grad_Gamma`` of a scalar field (vector output) or of a vector field
    (matrix output, ``[..., i, j] = D_i f_j``)."""
    f = np.asarray(f, dtype=float)
    if f.ndim not in (2, 3):
        raise GridMismatch("expected a scalar or vector field")
    return chart_gradient(surface, f, parity)


def tangential_divergence(surface: Surface, v: np.ndarray, parity: float = 1.0) -> np.ndarray:
    """Surface divergence of a vector field (scalar output) or of a matrix
    field (vector output, ``[div A]_j = sum_i D_i A_ij``)."""
    v = np.asarray(v, dtype=float)
    surface.check_shape(v)
    vs = surface.d_s(v, parity)
    vt = surface.d_theta(v)
    if v.ndim == 3:
        return np.sum(surface.ts * vs + surface.bth * vt, axis=-1)
    if v.ndim == 4:
        return (np.einsum("...i,...ij->...j", surface.ts, vs)
                + np.einsum("...i,...ij->...j", surface.bth, vt))
    raise GridMismatch("expected a vector or matrix field")


def laplace_beltrami(surface: Surface, f: np.ndarray) -> np.ndarray:
    """``div_Gamma grad_Gamma`` of a scalar, or componentwise of a vector field."""
    return tangential_divergence(surface, tangential_gradient(surface, f))


def strain_rate(surface: Surface, v: np.ndarray) -> np.ndarray:
    """``D_Gamma(v) = P (grad v)_S P``."""
    G = tangential_gradient(surface, v)
    S = 0.5 * (G + np.swapaxes(G, -1, -2))
    P = surface.P
    return _mm(P, _mm(S, P))


def directional_derivative(surface: Surface, X: np.ndarray, Y: np.ndarray,
                           parity: float = 1.0) -> np.ndarray:
    """``(Y . grad_Gamma) X``."""
    G = tangential_gradient(surface, X, parity)
    return np.einsum("...i,...ij->...j", Y, G)


def covariant_derivative(surface: Surface, X: np.ndarray, Y: np.ndarray,
                         parity: float = 1.0) -> np.ndarray:
    """Levi-Civita derivative ``P (Y . grad) X`` of ``X`` along ``Y``."""
    return surface.tangent(directional_derivative(surface, X, Y, parity))


def bochner_laplacian(surface: Surface, v: np.ndarray) -> np.ndarray:
    """``Delta_B v = P Delta_Gamma v + W^2 v``."""
    W = surface.W
    return surface.tangent(laplace_beltrami(surface, v)) + _mv(W, _mv(W, v))


def bochner_laplacian_frame(surface: Surface, v: np.ndarray) -> np.ndarray:
    """Connection Laplacian from the orthonormal frame ``{t_s, e_theta}``:
    ``sum_i (nabla_i nabla_i v - nabla_{nabla_i tau_i} v)``.

    The frame flips sign across a pole, so intermediate fields built from it
    are differentiated with odd ghost parity.
    """
    out = np.zeros_like(v)
    for tau in (surface.ts, surface.eth):
        first = covariant_derivative(surface, v, tau)           # odd across poles
        out += covariant_derivative(surface, first, tau, parity=-1.0)
        acc = covariant_derivative(surface, tau, tau, parity=-1.0)  # even
        out -= covariant_derivative(surface, v, acc)
    return out


def vector_laplacian_killing_check(surface: Surface, v: np.ndarray) -> np.ndarray:
    """``2 P div[D(v)] - Delta_B v - K v``; vanishes for ``div v = 0``."""
    lhs = 2.0 * surface.tangent(tangential_divergence(surface, strain_rate(surface, v)))
    return lhs - bochner_laplacian(surface, v) - surface.K[..., None] * v


# ---------------------------------------------------------------------------
# Korn constant
# ---------------------------------------------------------------------------

@dataclass
class KornEstimate:
    c_est: float
    dim: int
    eigenvalues: np.ndarray


def korn_trial_basis(surface: Surface, m_s: int = 6, m_theta: int = 6) -> list[np.ndarray]:
    """Gradients and rotated gradients of low chart harmonics."""
    S, TH, L = surface.S, surface.TH, surface.L
    fields = []
    for k in range(1, m_s + 1):
        for m in range(m_theta):
            if surface.has_poles:
                eta = np.cos(k * math.pi * S / L) * surface.phi ** m * np.cos(m * TH)
            else:
                eta = np.cos(2 * math.pi * k * S / L + 0.3 * k) * np.cos(m * TH)
            g = tangential_gradient(surface, eta)
            fields.append(g)
            fields.append(np.cross(surface.n, g))
    return fields


def korn_quotients(surface: Surface, fields: list[np.ndarray]):
    """Gram matrices ``A = (grad v_i, grad v_j)`` and ``B = (D v_i, D v_j) + (v_i, v_j)``."""
    grads = [tangential_gradient(surface, v) for v in fields]
    strains = [strain_rate(surface, v) for v in fields]
    n = len(fields)
    A = np.empty((n, n))
    B = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            A[i, j] = A[j, i] = surface.inner(grads[i], grads[j])
            B[i, j] = B[j, i] = surface.inner(strains[i], strains[j]) + surface.inner(fields[i], fields[j])
    return A, B


def korn_constant_estimate(surface: Surface, m_s: int = 6, m_theta: int = 6,
                           basis: list[np.ndarray] | None = None) -> KornEstimate:
    """Largest ``|grad v|^2 / (|D(v)|^2 + |v|^2)`` over a finite trial space.

    This is a lower bound for the Korn constant, valid only for the trial space
    used; it is reported together with the space dimension.
    """
    fields = korn_trial_basis(surface, m_s, m_theta) if basis is None else list(basis)
    if not fields:
        raise EigSolverFailure("empty trial space")
    A, B = korn_quotients(surface, fields)
    try:
        lam = scipy.linalg.eigh(A, B, eigvals_only=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise EigSolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(lam)) or lam.max() <= 0:
        raise EigSolverFailure("non-finite generalized eigenvalues")
    return KornEstimate(float(lam.max()), len(fields), lam)
