"""Time integration of the thin-film limit Navier-Stokes equations.

The momentum equation

    g dv/dt + A_g v + g (grad_v v) + g grad q = g f,     div_Gamma(g v) = 0,

with ``A_g v = -2 nu {P div[g D(v)] - (1/g) grad g (grad g . v)} + (gamma0 + gamma1) v``
is divided by ``g`` and advanced by an IMEX projection scheme. The projection
``v -> v - grad q``, ``div(g grad q) = div(g v)`` is orthogonal in the
weighted inner product ``(g u, w)``; ``A_g / g`` is self-adjoint in that inner
product, so the viscous solve is a symmetric positive problem on
weighted-solenoidal fields and GMRES converges quickly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .calculus import strain_rate, tangential_divergence, tangential_gradient
from .errors import CFLViolation, ConfigError, LinearSolveFailure, NonpositiveWeight
from .helmholtz import solve_elliptic
from .surface import RigidField, Surface, ThinDomainSpec, rigid_field_scan

log = logging.getLogger(__name__)

SCHEMES = ("imex-euler", "imex-bdf2")


def _field(surface: Surface, g) -> np.ndarray:
    if callable(g):
        g = g(surface.y)
    return np.broadcast_to(np.asarray(g, dtype=float), surface.shape).copy()


# ---------------------------------------------------------------------------
# bilinear and trilinear forms
# ---------------------------------------------------------------------------

def form_a_g(surface: Surface, g, v1: np.ndarray, v2: np.ndarray, nu: float,
             gamma0: float = 0.0, gamma1: float = 0.0) -> float:
    """``2 nu {(g D v1, D v2) + (g^-1 (v1 . grad g), v2 . grad g)} + (gamma0 + gamma1)(v1, v2)``."""
    g = _field(surface, g)
    gg = tangential_gradient(surface, g)
    D1, D2 = strain_rate(surface, v1), strain_rate(surface, v2)
    visc = surface.inner(g[..., None, None] * D1, D2)
    s1 = np.sum(v1 * gg, axis=-1)
    s2 = np.sum(v2 * gg, axis=-1)
    visc += float(surface.integrate(s1 * s2 / g))
    return 2.0 * nu * visc + (gamma0 + gamma1) * surface.inner(v1, v2)


def form_b_g(surface: Surface, g, v1: np.ndarray, v2: np.ndarray, v3: np.ndarray) -> float:
    """``-(g v1 (x) v2, grad v3)``."""
    g = _field(surface, g)
    G3 = tangential_gradient(surface, v3)
    return -float(surface.integrate(g * np.einsum("sti,stj,stij->st", v1, v2, G3)))


def killing_basis(surface: Surface, g, threshold: float = 1e-8) -> list[np.ndarray]:
    """Rigid fields tangent to the surface and orthogonal to ``grad g``,
    orthonormalized in ``(g u, w)``."""
    g = _field(surface, g)
    kmax = float(np.abs(surface.W).max()) + 1.0
    spec = ThinDomainSpec(surface, 0.0, g, 0.1 / (kmax * g.max()))
    fields = [surface.tangent(w(surface.y)) for w in rigid_field_scan(surface, spec, threshold).bases["Rg"]]
    out: list[np.ndarray] = []
    for w in fields:
        for u in out:
            w = w - surface.inner(g[..., None] * w, u) * u
        nrm = math.sqrt(surface.inner(g[..., None] * w, w))
        if nrm > 1e-12:
            out.append(w / nrm)
    return out


def killing_mode_monitor(surface: Surface, g, v: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    """Weighted amplitudes ``(g v, w_k)``."""
    g = _field(surface, g)
    return np.array([surface.inner(g[..., None] * v, w) for w in basis])


# ---------------------------------------------------------------------------
# configuration and state
# ---------------------------------------------------------------------------

@dataclass
class LimitConfig:
    """Run parameters.

    ``forcing`` is ``None``, a fixed tangent field, or a callable
    ``f(t, surface) -> field``. ``g`` may be a number, a grid array or a
    callable of the embedded position.
    """

    surface: Surface
    v0: np.ndarray
    g: object = 1.0
    nu: float = 0.1
    gamma0: float = 0.0
    gamma1: float = 0.0
    forcing: object = None
    dt: float = 1e-3
    T: float = 1.0
    scheme: str = "imex-euler"
    output_every: int = 1
    proj_tol: float = 1e-10
    solve_tol: float = 1e-10
    cfl_max: float = 0.5
    project_f_Kg: bool = True
    filter_modes: bool = True

    def validate(self):
        if self.nu <= 0:
            raise ConfigError("nu must be positive")
        if self.gamma0 < 0 or self.gamma1 < 0:
            raise ConfigError("friction coefficients must be nonnegative")
        if self.dt <= 0 or self.T < 0:
            raise ConfigError("need dt > 0 and T >= 0")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.output_every < 1:
            raise ConfigError("output_every must be >= 1")
        self.surface.check_shape(np.asarray(self.v0))


@dataclass
class LimitState:
    t: float
    v: np.ndarray
    q: np.ndarray | None = None
    v_prev: np.ndarray | None = None
    dvdt: np.ndarray | None = None
    step_index: int = 0
    diagnostics: dict = field(default_factory=dict)


@dataclass
class Trajectory:
    states: list
    diagnostics: list
    killing_basis: list

    def column(self, key: str) -> np.ndarray:
        return np.array([d[key] for d in self.diagnostics])


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

class LimitSolver:
    """IMEX projection stepper for one configuration."""

    def __init__(self, config: LimitConfig):
        config.validate()
        self.cfg = config
        s = self.surface = config.surface
        self.g = _field(s, config.g)
        if self.g.min() <= 0:
            raise NonpositiveWeight("weight g must be positive")
        self.gg = tangential_gradient(s, self.g)
        self.gamma = config.gamma0 + config.gamma1
        self.basis = killing_basis(s, self.g)
        self.h_min = min(s.h_s, float(s.phi.min()) * s.h_theta)
        self.gmres_iters = 0
        if config.gamma0 + config.gamma1 == 0 and self.basis and config.project_f_Kg:
            log.info("projecting forcing off %d Killing modes", len(self.basis))
            self._drop_killing = True
        else:
            self._drop_killing = False
        if np.ptp(self.g) > 0.5 * self.g.min():
            log.info("strongly varying weight: max/min g = %.3g", self.g.max() / self.g.min())

    # --- operators -------------------------------------------------------
    def project(self, v: np.ndarray) -> np.ndarray:
        """Weighted projection ``v - grad q`` with ``div(g grad q) = div(g v)``.

        Theta modes the grid cannot differentiate are removed first (see
        :meth:`Surface.filter_tangent`); without this the collocated viscous
        operator has a few growing modes next to the poles.
        """
        s, g = self.surface, self.g
        v = s.tangent(v)
        if self.cfg.filter_modes:
            v = s.filter_tangent(v)
        gv = g[..., None] * v
        rhs = tangential_divergence(s, gv)
        scale = float(np.linalg.norm(tangential_gradient(s, gv)))
        rep = solve_elliptic(s, rhs, a=g, tol=self.cfg.proj_tol, rhs_scale=scale)
        return v - tangential_gradient(s, rep.q)

    def A_g(self, v: np.ndarray) -> np.ndarray:
        s, g, gg = self.surface, self.g, self.gg
        visc = s.tangent(tangential_divergence(s, g[..., None, None] * strain_rate(s, v)))
        visc -= gg * (np.sum(gg * v, axis=-1) / g)[..., None]
        return -2.0 * self.cfg.nu * visc + self.gamma * v

    def advection(self, v: np.ndarray) -> np.ndarray:
        """Skew-symmetric advection divided by ``g``:
        ``(1/2g) P[div(g v (x) v) + g (v . grad) v]``."""
        s, g = self.surface, self.g
        G = tangential_gradient(s, v)
        conv = np.einsum("sti,stij->stj", v, G)
        flux = tangential_divergence(s, g[..., None, None] * v[..., :, None] * v[..., None, :])
        return s.tangent(0.5 * (flux / g[..., None] + conv))

    def forcing(self, t: float) -> np.ndarray:
        f = self.cfg.forcing
        if f is None:
            return np.zeros(self.surface.shape + (3,))
        f = f(t, self.surface) if callable(f) else np.asarray(f, dtype=float)
        f = self.surface.tangent(f)
        if self._drop_killing:
            amps = killing_mode_monitor(self.surface, self.g, f, self.basis)
            for a, w in zip(amps, self.basis):
                f = f - a * w
        return f

    def energy(self, v: np.ndarray) -> float:
        return self.surface.inner(self.g[..., None] * v, v)

    def dissipation(self, v: np.ndarray) -> float:
        c = self.cfg
        return form_a_g(self.surface, self.g, v, v, c.nu, c.gamma0, c.gamma1)

    def div_residual(self, v: np.ndarray) -> float:
        return self.surface.norm(tangential_divergence(self.surface, self.g[..., None] * v))

    def cfl(self, v: np.ndarray) -> float:
        return float(np.linalg.norm(v, axis=-1).max()) * self.cfg.dt / self.h_min

    # --- stepping --------------------------------------------------------
    def initial_state(self) -> LimitState:
        v = self.project(np.asarray(self.cfg.v0, dtype=float))
        st = LimitState(0.0, v)
        st.diagnostics = self._diagnostics(v, None, 0.0, 0)
        return st

    def _solve(self, alpha: float, b: np.ndarray, x0: np.ndarray) -> tuple[np.ndarray, int]:
        shape = b.shape
        n = b.size
        dt = self.cfg.dt
        g3 = self.g[..., None]

        def mv(x):
            x = x.reshape(shape)
            return (alpha / dt * x + self.project(self.A_g(x) / g3)).ravel()

        bn = float(np.linalg.norm(b))
        if bn == 0.0:
            return np.zeros(shape), 0
        count = [0]

        def cb(_):
            count[0] += 1

        A = LinearOperator((n, n), matvec=mv, dtype=float)
        x, info = gmres(A, b.ravel(), x0=x0.ravel(), rtol=0.0, atol=self.cfg.solve_tol * bn,
                        restart=60, maxiter=20, callback=cb, callback_type="pr_norm")
        if info != 0:
            res = np.linalg.norm(mv(x) - b.ravel()) / bn
            raise LinearSolveFailure(f"implicit solve stalled (relative residual {res:.2e})")
        return x.reshape(shape), count[0]

    def step(self, state: LimitState) -> LimitState:
        cfg = self.cfg
        dt = cfg.dt
        t1 = state.t + dt
        v = state.v
        bdf2 = cfg.scheme == "imex-bdf2" and state.v_prev is not None
        if bdf2:
            vx = 2.0 * v - state.v_prev
            hist = 2.0 * v - 0.5 * state.v_prev
            alpha = 1.5
        else:
            vx, hist, alpha = v, v, 1.0
        c = self.cfl(vx)
        if c > cfg.cfl_max:
            raise CFLViolation(f"CFL number {c:.3f} exceeds {cfg.cfl_max}")
        f = self.forcing(t1)
        rhs = hist / dt - self.advection(vx) + f
        if not np.any(rhs):
            v1, iters = np.zeros_like(v), 0
        else:
            b = self.project(rhs)
            v1, iters = self._solve(alpha, b, v)
            v1 = self.project(v1)
        self.gmres_iters += iters
        if bdf2:
            dvdt = (1.5 * v1 - 2.0 * v + 0.5 * state.v_prev) / dt
        else:
            dvdt = (v1 - v) / dt
        new = LimitState(t1, v1, None, v, dvdt, state.step_index + 1)
        new.diagnostics = self._diagnostics(v1, state, t1, iters, f)
        return new

    def _diagnostics(self, v, prev: LimitState | None, t, iters, f=None) -> dict:
        E = self.energy(v)
        a = self.dissipation(v)
        d = {"t": t, "energy": E, "dissipation": a, "div_residual": self.div_residual(v),
             "gmres_iterations": iters, "cfl": self.cfl(v)}
        if prev is None:
            d["energy_residual"] = 0.0
        else:
            work = 0.0 if f is None else self.surface.inner(self.g[..., None] * f, v)
            d["energy_residual"] = (E - prev.diagnostics["energy"] + 2 * self.cfg.dt * a
                                    - 2 * self.cfg.dt * work)
        for k, amp in enumerate(killing_mode_monitor(self.surface, self.g, v, self.basis)):
            d[f"killing_amp_{k}"] = float(amp)
        return d

    def run(self) -> Trajectory:
        cfg = self.cfg
        st = self.initial_state()
        states, diags = [st], [st.diagnostics]
        nsteps = int(round(cfg.T / cfg.dt))
        for k in range(nsteps):
            st = self.step(st)
            diags.append(st.diagnostics)
            if (k + 1) % cfg.output_every == 0 or k + 1 == nsteps:
                states.append(st)
        return Trajectory(states, diags, self.basis)

    # --- pressure --------------------------------------------------------
    def pressure_recover(self, state: LimitState, tol: float = 1e-10) -> tuple[np.ndarray, dict]:
        """Mean-zero ``q`` with ``div(g grad q) = div r``,
        ``r = g f - g dv/dt - A_g v - g grad_v v``."""
        s, g = self.surface, self.g
        v = state.v
        dvdt = np.zeros_like(v) if state.dvdt is None else state.dvdt
        conv = s.tangent(np.einsum("sti,stij->stj", v, tangential_gradient(s, v)))
        g3 = g[..., None]
        r = g3 * self.forcing(state.t) - g3 * dvdt - self.A_g(v) - g3 * conv
        rhs = tangential_divergence(s, r)
        rep = solve_elliptic(s, rhs, a=g, tol=tol,
                             rhs_scale=float(np.linalg.norm(tangential_gradient(s, r))))
        gq = g3 * tangential_gradient(s, rep.q)
        rn = s.norm(r)
        info = {"solve_residual": rep.residual,
                "consistency": s.norm(r - gq) / rn if rn > 0 else 0.0}
        return rep.q, info


def step(state: LimitState, config: LimitConfig) -> LimitState:
    """One IMEX step (builds a fresh :class:`LimitSolver`)."""
    return LimitSolver(config).step(state)


def solve(config: LimitConfig) -> Trajectory:
    return LimitSolver(config).run()


def pressure_recover(state: LimitState, config: LimitConfig, tol: float = 1e-10):
    return LimitSolver(config).pressure_recover(state, tol)


def rotation_field(surface: Surface, axis=(0.0, 0.0, 1.0)) -> np.ndarray:
    """``a x y`` restricted to the surface."""
    return RigidField(np.asarray(axis, dtype=float), np.zeros(3))(surface.y)
