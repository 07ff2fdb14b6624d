"""Surface Poisson solvers and weighted Helmholtz-Leray decompositions.

All elliptic problems have the form ``div(a grad q) - c q = rhs`` with
positive ``a`` and nonnegative ``c`` on the collocation grid. They are
solved by GMRES, right-preconditioned with an exact solve of the operator
whose coefficients are averaged over theta. The averaged operator commutes
with rotations about the axis, so it splits into one ``Ns x Ns`` block per
Fourier mode. For axisymmetric coefficients the preconditioner is exact and
GMRES stops after one or two steps.
"""
from __future__ import annotations

import hashlib
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, gmres

from .calculus import tangential_divergence, tangential_gradient
from .errors import NoConvergence, NonpositiveWeight
from .surface import Surface

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10


# ---------------------------------------------------------------------------
# operator and mode-block preconditioner
# ---------------------------------------------------------------------------

def elliptic_apply(surface: Surface, q: np.ndarray, a: np.ndarray | float = 1.0,
                   c: np.ndarray | float = 0.0, b: np.ndarray | float = 0.0) -> np.ndarray:
    """``div_Gamma(a grad_Gamma q + b q n) - c q``."""
    flux = tangential_gradient(surface, q)
    flux = np.asarray(a)[..., None] * flux if np.ndim(a) else a * flux
    if np.ndim(b) or b != 0.0:
        flux = flux + (b * q)[..., None] * surface.n
    out = tangential_divergence(surface, flux)
    if np.ndim(c) or c != 0.0:
        out = out - c * q
    return out


class _ModeBlocks:
    """Per-Fourier-mode factorizations of the theta-averaged operator."""

    def __init__(self, surface: Surface, abar: np.ndarray, cbar: np.ndarray, bbar: np.ndarray):
        ns, nt = surface.shape
        a2 = np.broadcast_to(abar[:, None], surface.shape)
        c2 = np.broadcast_to(cbar[:, None], surface.shape)
        b2 = np.broadcast_to(bbar[:, None], surface.shape)
        nm = nt // 2 + 1
        blocks = np.empty((nm, ns, ns), dtype=complex)
        # impulse responses: the operator is circulant in theta
        imp = np.zeros(surface.shape)
        for j in range(ns):
            imp[j, 0] = 1.0
            col = elliptic_apply(surface, imp, a2, c2, b2)
            imp[j, 0] = 0.0
            blocks[:, :, j] = np.fft.rfft(col, axis=1).T
        self.ns, self.nt = ns, nt
        self.solvers = []
        self.kernels = {}
        for m in range(nm):
            B = blocks[m]
            if 2 * m == nt:
                # theta derivatives drop this mode, so the block is nearly singular
                # with a grid-dependent kernel; exclude it from the solution space
                self.solvers.append(("zero", None))
                eye = np.eye(ns)
                self.kernels[m] = (eye, eye)
                continue
            sv = np.linalg.svd(B, compute_uv=False)
            if sv[-1] < 1e-10 * sv[0]:
                pinv = np.linalg.pinv(B, rcond=1e-10)
                self.solvers.append(("pinv", pinv))
                U, s, Vh = np.linalg.svd(B)
                k = int(np.sum(s < 1e-10 * s[0]))
                self.kernels[m] = (U[:, -k:], Vh[-k:].conj().T)
            else:
                self.solvers.append(("lu", scipy.linalg.lu_factor(B)))

    def solve(self, r: np.ndarray) -> np.ndarray:
        R = np.fft.rfft(r.reshape(self.ns, self.nt), axis=1)
        X = np.empty_like(R)
        for m, (kind, fac) in enumerate(self.solvers):
            if kind == "lu":
                X[:, m] = scipy.linalg.lu_solve(fac, R[:, m])
            elif kind == "zero":
                X[:, m] = 0.0
            else:
                X[:, m] = fac @ R[:, m]
        return np.fft.irfft(X, n=self.nt, axis=1)

    def strip_kernel(self, q: np.ndarray) -> np.ndarray:
        """Remove right-kernel components of nonzero modes (the constant mode is left to the caller)."""
        modes = [m for m in self.kernels if m > 0]
        if not modes:
            return q
        Q = np.fft.rfft(q, axis=1)
        for m in modes:
            V = self.kernels[m][1]
            Q[:, m] -= V @ (V.conj().T @ Q[:, m])
            if 2 * m == self.nt:
                Q[:, m] = Q[:, m].real
        return np.fft.irfft(Q, n=self.nt, axis=1)

    def left_null(self) -> list[np.ndarray]:
        """Grid vectors orthogonal to the range of the averaged operator."""
        out = []
        for m, (U, _) in self.kernels.items():
            for k in range(U.shape[1]):
                u = U[:, k]
                th = np.arange(self.nt) * 2 * math.pi / self.nt
                z = np.outer(u, np.exp(1j * m * th))
                out.append(np.real(z))
                if 0 < m < self.nt / 2:
                    out.append(np.imag(z))
        return out


def _make_compatible(rhs: np.ndarray, null: list[np.ndarray]) -> np.ndarray:
    """Remove the part of ``rhs`` outside the range of the averaged operator.

    The left null space is rotated so that a single vector sees the
    constants; that component is removed by a constant shift (the usual
    mean-value correction), the rest by orthogonal projection.
    """
    if not null:
        return rhs.copy()
    Z, _ = np.linalg.qr(np.stack([z.ravel() for z in null], axis=1))
    ones = np.ones(Z.shape[0])
    u = Z.T @ ones
    b = rhs.ravel().copy()
    if np.linalg.norm(u) > 1e-8 * math.sqrt(Z.shape[0]):
        # basis: z1 along Z u, the rest orthogonal to it inside span(Z)
        Q, _ = np.linalg.qr(np.column_stack([u, np.eye(len(u))]))
        Zr = Z @ Q[:, :len(u)]
        z1 = Zr[:, 0]
        b -= (z1 @ b) / (z1 @ ones)
        rest = Zr[:, 1:]
    else:
        rest = Z
    if rest.shape[1]:
        b -= rest @ (rest.T @ b)
    return b.reshape(rhs.shape)


_CACHE: "OrderedDict[tuple, _ModeBlocks]" = OrderedDict()
_CACHE_SIZE = 12


def _digest(x) -> str:
    return hashlib.blake2b(np.ascontiguousarray(x, dtype=float).tobytes(), digest_size=12).hexdigest()


def _blocks(surface: Surface, a: np.ndarray, c: np.ndarray, b: np.ndarray | float = 0.0) -> _ModeBlocks:
    abar = np.mean(np.broadcast_to(a, surface.shape), axis=1)
    cbar = np.mean(np.broadcast_to(c, surface.shape), axis=1)
    bbar = np.mean(np.broadcast_to(b, surface.shape), axis=1)
    key = (id(surface.profile), surface.kind, surface.params, surface.Ns, surface.Ntheta,
           _digest(abar), _digest(cbar), _digest(bbar))
    blk = _CACHE.get(key)
    if blk is None:
        blk = _ModeBlocks(surface, abar, cbar, bbar)
        _CACHE[key] = blk
        while len(_CACHE) > _CACHE_SIZE:
            _CACHE.popitem(last=False)
    else:
        _CACHE.move_to_end(key)
    return blk


def clear_cache():
    _CACHE.clear()


# ---------------------------------------------------------------------------
# solves
# ---------------------------------------------------------------------------

@dataclass
class PoissonSolveReport:
    q: np.ndarray
    residual: float
    iterations: int
    mean: float
    notes: list = field(default_factory=list)


def _operator_norm(surface: Surface, a, c) -> float:
    """Rough bound on the grid norm of ``div(a grad .) - c``."""
    ks = math.pi / surface.h_s
    kt = float(np.max(np.abs(surface._theta_symbol)) / surface.phi.min()) if surface.has_poles \
        else surface.Ntheta / 2 / float(surface.phi.min())
    return max(ks, kt) ** 2 * float(np.max(a)) + float(np.max(c))


def mean_value(surface: Surface, q: np.ndarray) -> float:
    return float(np.sum(surface.weights * q) / surface.area)


def solve_elliptic(surface: Surface, rhs: np.ndarray, a: np.ndarray | float = 1.0,
                   c: np.ndarray | float = 0.0, tol: float = DEFAULT_TOL,
                   maxiter: int | None = None, mean_zero: bool = True,
                   rhs_scale: float = 0.0, b: np.ndarray | float = 0.0) -> PoissonSolveReport:
    """Solve ``div(a grad q + b q n) - c q = rhs`` on the grid.

    With ``c = 0`` the operator is singular; the part of ``rhs`` outside the
    discrete range (a constant shift, at truncation-error size for smooth
    data) is removed before the solve and ``q`` is returned with zero mean.

    The stopping test is ``|residual| <= tol * max(|rhs|, rhs_scale)`` in the
    grid 2-norm; ``rhs_scale`` lets callers whose right-hand side is nearly
    zero (e.g. re-projecting a projected field) stop at a meaningful level.
    """
    rhs = np.asarray(rhs, dtype=float)
    surface.check_shape(rhs)
    a = np.broadcast_to(np.asarray(a, dtype=float), surface.shape)
    c = np.broadcast_to(np.asarray(c, dtype=float), surface.shape)
    b_n = np.broadcast_to(np.asarray(b, dtype=float), surface.shape)
    if a.min() <= 0:
        raise NonpositiveWeight("elliptic weight must be positive")
    notes = []
    n = rhs.size
    blk = _blocks(surface, a, c, b_n)
    b = _make_compatible(rhs, blk.left_null())
    bnorm = np.linalg.norm(b)
    ref = max(bnorm, rhs_scale)
    if bnorm <= 1e-3 * tol * ref:
        return PoissonSolveReport(np.zeros(surface.shape), 0.0, 0, 0.0, notes)

    shape = surface.shape
    axisym = all(np.ptp(x, axis=1).max() == 0 for x in (a, c, b_n))

    def matvec(x):
        return elliptic_apply(surface, x.reshape(shape), a, c, b_n).ravel()

    A = LinearOperator((n, n), matvec=matvec, dtype=float)
    M = LinearOperator((n, n), matvec=lambda x: blk.solve(x).ravel(), dtype=float)
    if maxiter is None:
        maxiter = 8  # restart cycles
    count = [0]

    def cb(_):
        count[0] += 1

    x0 = blk.solve(b).ravel()
    if axisym:
        # the mode-block solve is exact; one refinement step cleans rounding
        x = x0 + blk.solve(b - matvec(x0).reshape(shape)).ravel()
    else:
        x, info = gmres(A, b.ravel(), x0=x0, M=M, rtol=0.0, atol=tol * ref,
                        restart=40, maxiter=maxiter, callback=cb, callback_type="pr_norm")
        if info > 0:
            # accept a stall at the rounding floor eps * |A| * |x|
            res = np.linalg.norm(matvec(x) - b.ravel())
            floor = 64 * np.finfo(float).eps * _operator_norm(surface, a, c) * np.linalg.norm(x)
            if res > max(tol * ref, floor):
                raise NoConvergence(f"GMRES did not reach {tol:g} (residual {res / ref:.2e})")
            notes.append(f"stopped at rounding floor, residual {res / ref:.2e}")
    q = blk.strip_kernel(x.reshape(shape))
    if mean_zero:
        q = q - mean_value(surface, q)
    res = float(np.linalg.norm(elliptic_apply(surface, q, a, c, b_n) - b) / ref)
    return PoissonSolveReport(q, res, count[0] + 1, mean_value(surface, q), notes)


def poisson_solve(surface: Surface, eta: np.ndarray, tol: float = DEFAULT_TOL) -> PoissonSolveReport:
    """Mean-zero ``q`` with ``-Delta_Gamma q = eta``."""
    return weighted_poisson_solve(surface, 1.0, eta, tol)


def weighted_poisson_solve(surface: Surface, g, xi: np.ndarray, tol: float = DEFAULT_TOL) -> PoissonSolveReport:
    """Mean-zero ``q`` with ``-div_Gamma(g grad_Gamma q) = xi``."""
    xi = np.asarray(xi, dtype=float)
    surface.check_shape(xi)
    g = np.broadcast_to(np.asarray(g, dtype=float), surface.shape)
    if g.min() <= 0:
        raise NonpositiveWeight("weight g must be positive")
    notes = []
    mean = surface.integrate(xi)
    l1 = float(np.sum(surface.weights * np.abs(xi)))
    if abs(mean) > 1e-10 * max(l1, 1e-300):
        log.warning("right-hand side has nonzero mean %.3e; subtracting it", mean)
        notes.append(f"subtracted mean {mean / surface.area:.3e}")
        xi = xi - mean / surface.area
    rep = solve_elliptic(surface, -xi, a=g, tol=tol)
    rep.notes.extend(notes)
    return rep


# ---------------------------------------------------------------------------
# decompositions
# ---------------------------------------------------------------------------

@dataclass
class DecompositionResult:
    solenoidal: np.ndarray
    q: np.ndarray
    gradient_part: np.ndarray
    orthogonality: float
    div_residual: float
    solve: PoissonSolveReport


def _orth_probe(surface: Surface, part: np.ndarray, make_potential) -> float:
    # low-degree polynomial potentials of the embedded coordinates
    y = surface.y
    probes = [y[..., 0], y[..., 1], y[..., 2], y[..., 0] * y[..., 1],
              y[..., 1] * y[..., 2], y[..., 2] ** 2 - y[..., 0] ** 2]
    nrm = surface.norm(part)
    worst = 0.0
    for xi in probes:
        pot = make_potential(xi)
        d = surface.norm(pot)
        if d > 0 and nrm > 0:
            worst = max(worst, abs(surface.inner(part, pot)) / (nrm * d))
    return worst


def project_weighted_solenoidal(surface: Surface, g, v: np.ndarray, tol: float = DEFAULT_TOL,
                                inner: str = "L2") -> DecompositionResult:
    """Split ``v`` into a part with ``div_Gamma(g v_g) = 0`` and a potential part.

    ``inner="L2"`` gives the L2-orthogonal projection, ``v = v_g + g grad q``.
    ``inner="weighted"`` is orthogonal in ``(g u, w)``: ``v = v_g + grad q``.
    """
    g = np.broadcast_to(np.asarray(g, dtype=float), surface.shape)
    if g.min() <= 0:
        raise NonpositiveWeight("weight g must be positive")
    v = surface.tangent(np.asarray(v, dtype=float))
    gv = g[..., None] * v
    rhs = tangential_divergence(surface, gv)
    scale = float(np.linalg.norm(tangential_gradient(surface, gv)))
    if inner == "L2":
        rep = solve_elliptic(surface, rhs, a=g * g, tol=tol, rhs_scale=scale)
        grad_part = g[..., None] * tangential_gradient(surface, rep.q)
        make = lambda xi: g[..., None] * tangential_gradient(surface, xi)
        weight = np.ones_like(g)
    elif inner == "weighted":
        rep = solve_elliptic(surface, rhs, a=g, tol=tol, rhs_scale=scale)
        grad_part = tangential_gradient(surface, rep.q)
        make = lambda xi: tangential_gradient(surface, xi)
        weight = g
    else:
        raise ValueError("inner must be 'L2' or 'weighted'")
    vs = v - grad_part
    div_res = surface.norm(tangential_divergence(surface, g[..., None] * vs))
    orth = _orth_probe(surface, weight[..., None] * vs, make)
    return DecompositionResult(vs, rep.q, grad_part, orth, div_res, rep)


def decompose_general(surface: Surface, v: np.ndarray, tol: float = DEFAULT_TOL) -> DecompositionResult:
    """``v = v_sigma + grad q + q H n`` for a (not necessarily tangential) field."""
    return decompose_general_weighted(surface, 1.0, v, tol)


def decompose_general_weighted(surface: Surface, g, v: np.ndarray,
                               tol: float = DEFAULT_TOL) -> DecompositionResult:
    """``v = v_g + g (grad q + q H n)`` with ``q`` the least-squares minimizer
    of ``|v - g (grad q + q H n)|``.

    Normal equation: ``div(g^2 (grad q + q H n)) = div(g v)``, i.e.
    ``div(g^2 grad q) - g^2 H^2 q = div(g v)``.
    """
    g = np.broadcast_to(np.asarray(g, dtype=float), surface.shape)
    if g.min() <= 0:
        raise NonpositiveWeight("weight g must be positive")
    v = np.asarray(v, dtype=float)
    surface.check_shape(v)
    H = surface.H
    if np.abs(H).max() < 1e-12:
        log.warning("mean curvature vanishes identically; q is only fixed up to a constant")
    elif np.abs(H).min() < 1e-3 * np.abs(H).max():
        log.info("mean curvature nearly vanishes somewhere; q conditioning may degrade")
    gv = g[..., None] * v
    rhs = tangential_divergence(surface, gv)
    scale = float(np.linalg.norm(tangential_gradient(surface, gv)))
    # the normal flux g^2 q H n is kept inside the divergence so the split is
    # divergence-consistent on the grid; div(q H n) = -H^2 q in the continuum
    rep = solve_elliptic(surface, rhs, a=g * g, b=g * g * H, tol=tol, mean_zero=False,
                         rhs_scale=scale)
    q = rep.q

    def potential(xi):
        return g[..., None] * (tangential_gradient(surface, xi) + (xi * H)[..., None] * surface.n)

    grad_part = potential(q)
    vs = v - grad_part
    div_res = surface.norm(tangential_divergence(surface, g[..., None] * vs))
    orth = _orth_probe(surface, vs, potential)
    return DecompositionResult(vs, q, grad_part, orth, div_res, rep)


def hminus1_proxy(surface: Surface, eta: np.ndarray, tol: float = DEFAULT_TOL) -> float:
    """``|grad (-Delta)^{-1} eta|_{L2}`` for (nearly) mean-zero ``eta``."""
    eta = np.asarray(eta, dtype=float) - mean_value(surface, eta)
    rep = solve_elliptic(surface, -eta, tol=tol)
    return surface.norm(tangential_gradient(surface, rep.q))
