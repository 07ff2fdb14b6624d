"""``thinshell`` command line: verification suites, studies and solver runs.

Exit codes: 0 all checks pass, 1 a check failed or a numerical error
occurred, 2 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .calculus import korn_constant_estimate
from .errors import ConfigError, InvalidEpsilonList, ThinShellError
from .helmholtz import (decompose_general, decompose_general_weighted,
                        project_weighted_solenoidal)
from .identities import algebraic_residuals, appendix_checks, order_study, unit_sphere_WP
from .io import (Config, field_expression, load_tolerances, read_surface_field, write_csv,
                 write_surface_field)
from .surface import Surface, rigid_field_scan, ThinDomainSpec
from .thin_shell import ESTIMATES, epsilon_rate_study, random_tangent_field

log = logging.getLogger("thinshell")

COMMANDS = ("check-identities", "rate-study", "solve", "decompose", "killing-scan", "korn")


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class Check:
    check_id: str
    measured: float
    threshold: float
    relation: str  # "<=" or ">=" or "=="
    passed: bool


@dataclass
class CheckReport:
    command: str
    checks: list = field(default_factory=list)
    environment: dict = field(default_factory=dict)

    def add(self, check_id: str, measured, threshold, relation: str = "<="):
        m, t = float(measured), float(threshold)
        ok = {"<=": m <= t, ">=": m >= t, "==": m == t}[relation]
        self.checks.append(Check(check_id, m, t, relation, bool(ok)))
        return ok

    def band(self, check_id: str, measured: float, centre: float, half: float):
        ok = abs(measured - centre) <= half
        self.checks.append(Check(check_id, float(measured), float(half), f"|x-{centre:g}|<=", bool(ok)))
        return ok

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def write(self, out: Path):
        write_csv(out / "report.csv", ["check_id", "measured", "relation", "threshold", "pass"],
                  ([c.check_id, c.measured, c.relation, c.threshold, c.passed] for c in self.checks))
        with (out / "environment.txt").open("w", encoding="utf-8") as fh:
            for k in sorted(self.environment):
                fh.write(f"{k} = {self.environment[k]}\n")

    def summary(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.check_id}: {c.measured:.3e} {c.relation} {c.threshold:.3e}"
                 for c in self.checks]
        lines.append(f"{self.command}: {'PASS' if self.passed else 'FAIL'} "
                     f"({sum(c.passed for c in self.checks)}/{len(self.checks)})")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def preset_surface(kind: str, N: int) -> Surface:
    if kind == "sphere":
        return Surface.sphere(1.0, N, N)
    if kind == "torus":
        return Surface.torus(3.0, 1.0, N, N)
    if kind == "turning_angle":
        return Surface.turning_angle(Ns=N, Ntheta=N)
    raise ConfigError(f"unknown preset surface {kind!r}")


def build_surface(cfg: Config, prefix: str = "surface") -> Surface:
    default = "csv" if f"{prefix}.profile_file" in cfg else "sphere"
    kind = cfg.str(f"{prefix}.kind", default, {"sphere", "torus", "turning_angle", "csv"})
    Ns = cfg.int(f"{prefix}.Ns", 64, lo=8)
    Nt = cfg.int(f"{prefix}.Ntheta", Ns, lo=8)
    try:
        if kind == "sphere":
            return Surface.sphere(cfg.float(f"{prefix}.R", 1.0, lo=1e-12), Ns, Nt)
        if kind == "torus":
            return Surface.torus(cfg.float(f"{prefix}.R", 3.0, lo=1e-12),
                                 cfg.float(f"{prefix}.a", 1.0, lo=1e-12), Ns, Nt)
        if kind == "turning_angle":
            return Surface.turning_angle(cfg.float(f"{prefix}.L", np.pi, lo=1e-12),
                                         cfg.float(f"{prefix}.beta", 0.2), Ns, Nt)
        path = Path(cfg.str(f"{prefix}.profile_file"))
        if not path.is_file():
            raise ConfigError(f"profile file {path} not found")
        return Surface.from_profile_csv(path, Ns, Nt)
    except ThinShellError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid surface: {exc}") from exc


def _weight(cfg: Config, key: str, default: str = "1"):
    return field_expression(cfg.str(key, default))


def _env(cfg: Config, args) -> dict:
    return {"version": __version__, "numpy": np.__version__, "backend": _kernels.backend(),
            "seed": args.seed, "config": cfg.source}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_check_identities(cfg: Config, tol: Config, args, out: Path) -> CheckReport:
    rep = CheckReport("check-identities", environment=_env(cfg, args))
    kinds = cfg.list("identities.surfaces", "sphere, torus")
    N = cfg.int("identities.N", 128, lo=4)
    orders = [int(x) for x in cfg.floats("identities.orders", "64, 256")]
    alg = tol.float("identities.algebraic")
    rows = []
    for kind in kinds:
        surf = build_surface(cfg) if kind == "config" else preset_surface(kind, N)
        name = kind
        for key, val in algebraic_residuals(surf).items():
            rep.add(f"{name}.{key}", val, alg)
        if kind == "sphere":
            rep.add("sphere.W_plus_P", unit_sphere_WP(surf), tol.float("identities.sphere_WP"))
        if min(orders) < 16 or N < 16:
            log.warning("grid too coarse for refinement-order checks on %s; skipped", name)
            continue
        study = order_study(surf, tuple(orders))
        for key, slope in study.slopes.items():
            rep.add(f"{name}.{key}.order", slope, tol.float("identities.min_order"), ">=")
            rows.append([name, key] + [study.residuals[n][key] for n in orders] + [slope])
    write_csv(out / "orders.csv", ["surface", "identity"] + [f"N{n}" for n in orders] + ["slope"], rows)
    return rep


def cmd_rate_study(cfg: Config, tol: Config, args, out: Path) -> CheckReport:
    rep = CheckReport("rate-study", environment=_env(cfg, args))
    surf = build_surface(cfg)
    ests = cfg.list("rate.estimates", ", ".join(ESTIMATES))
    for e in ests:
        if e not in ESTIMATES:
            raise ConfigError(f"unknown estimate {e!r}")
    eps = cfg.floats("rate.eps", "0.1, 0.05, 0.025, 0.0125")
    g0 = _weight(cfg, "shell.g0", "0")
    g1 = _weight(cfg, "shell.g1", "1 + 0.2*y3")
    Nr = cfg.int("rate.Nr", 8, lo=2)
    check = cfg.bool("rate.spatial_check", True)
    band = tol.float("rate.band")
    for e in ests:
        study = epsilon_rate_study(e, surf, g0, g1, eps, seed=args.seed, Nr=Nr, check_spatial=check)
        comments = [f"slope = {study.slope:.6f}", f"prefactor = {study.prefactor:.6e}"]
        if study.spatial_check is not None:
            comments.append(f"spatial_change = {study.spatial_check:.3e}")
        header = ["epsilon", "quantity", "reference_norm"] + sorted(study.extra)
        rows = ([study.eps[i], study.quantity[i], study.reference[i]]
                + [study.extra[k][i] for k in sorted(study.extra)] for i in range(len(study.eps)))
        write_csv(out / f"rate_{e}.csv", header, rows, comments)
        if e == "adiv_tan":
            rep.add(f"{e}.slope", study.slope, tol.float("rate.adiv_tan.min_slope"), ">=")
        else:
            rep.band(f"{e}.slope", study.slope, tol.float(f"rate.{e}.slope"), band)
    return rep


def _initial_field(cfg: Config, surf: Surface, rng) -> np.ndarray:
    kind = cfg.str("solver.initial", "killing")
    if kind == "killing":
        return np.cross(np.array([0.0, 0.0, 1.0]), surf.y)
    if kind == "random":
        v = random_tangent_field(surf, rng)
        return cfg.float("solver.amplitude", 1.0) * v / np.linalg.norm(v, axis=-1).max()
    if kind == "zero":
        return np.zeros(surf.shape + (3,))
    if kind.startswith("file:"):
        return read_surface_field(kind[5:], surf)
    raise ConfigError(f"solver.initial = {kind!r}; expected killing, random, zero or file:<path>")


def _plots(out: Path, traj, surf: Surface):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "thinshell"
    meta = {"Date": None}
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(traj.column("t"), traj.column("energy"))
    ax.set_xlabel("t")
    ax.set_ylabel("E(t)")
    fig.tight_layout()
    fig.savefig(out / "energy.svg", format="svg", metadata=meta)
    plt.close(fig)
    v = traj.states[-1].v
    fig, ax = plt.subplots(figsize=(5, 3.2))
    im = ax.pcolormesh(surf.theta, surf.s, np.linalg.norm(v, axis=-1), shading="nearest")
    ax.set_xlabel("theta")
    ax.set_ylabel("s")
    fig.colorbar(im, ax=ax, label="|v|")
    fig.tight_layout()
    fig.savefig(out / "speed.svg", format="svg", metadata=meta)
    plt.close(fig)


def cmd_solve(cfg: Config, tol: Config, args, out: Path) -> CheckReport:
    from .limit_solver import LimitConfig, LimitSolver

    rep = CheckReport("solve", environment=_env(cfg, args))
    surf = build_surface(cfg)
    rng = np.random.default_rng(args.seed)
    v0 = _initial_field(cfg, surf, rng)
    forcing = cfg.str("solver.forcing", "none")
    f = None
    if forcing != "none":
        comps = [field_expression(x) for x in cfg.list("solver.forcing", "")]
        if len(comps) != 3:
            raise ConfigError("solver.forcing needs three comma separated component expressions")
        f = np.stack([c(surf.y) for c in comps], axis=-1)
    lc = LimitConfig(
        surface=surf, v0=v0, g=_weight(cfg, "solver.g"),
        nu=cfg.float("solver.nu", 0.1, lo=0), gamma0=cfg.float("solver.gamma0", 0.0, lo=0),
        gamma1=cfg.float("solver.gamma1", 0.0, lo=0), forcing=f,
        dt=cfg.float("solver.dt", 1e-3, lo=0), T=cfg.float("solver.T", 1.0, lo=0),
        scheme=cfg.str("solver.scheme", "imex-euler"),
        output_every=cfg.int("solver.output_every", 100, lo=1),
        project_f_Kg=cfg.bool("solver.project_f_Kg", True))
    solver = LimitSolver(lc)
    traj = solver.run()
    keys = list(traj.diagnostics[0])
    write_csv(out / "diagnostics.csv", keys, ([d[k] for k in keys] for d in traj.diagnostics))
    for st in traj.states:
        write_surface_field(out / f"v_{st.step_index:06d}.csv", surf, st.v)
    (out / "config_echo.txt").write_text(cfg.echo(), encoding="utf-8")
    _plots(out, traj, surf)

    E = traj.column("energy")
    rep.add("div_residual.max", traj.column("div_residual").max(), tol.float("solve.div"))
    initial = cfg.str("solver.initial", "killing")
    if initial == "killing" and f is None and lc.gamma0 + lc.gamma1 == 0:
        v0p = traj.states[0].v
        drift = max(np.sqrt(surf.inner(s.v - v0p, s.v - v0p) / surf.inner(v0p, v0p)) for s in traj.states)
        rep.add("killing.drift", drift, tol.float("solve.killing_drift"))
        rep.add("energy.flat", np.abs(E / E[0] - 1).max(), tol.float("solve.energy_flat"))
    if f is None and lc.gamma0 + lc.gamma1 > 0:
        rep.add("energy.max_increase", float(np.max(np.diff(E), initial=0.0)), 0.0)
    rep.environment["gmres_iterations"] = solver.gmres_iters
    return rep


def cmd_decompose(cfg: Config, tol: Config, args, out: Path) -> CheckReport:
    rep = CheckReport("decompose", environment=_env(cfg, args))
    surf = build_surface(cfg)
    kind = cfg.str("decompose.kind", "L2", {"L2", "weighted", "general", "general_weighted"})
    g = _weight(cfg, "decompose.g")(surf.y)
    rng = np.random.default_rng(args.seed)
    src = cfg.str("decompose.input", "random")
    if src == "random":
        v = random_tangent_field(surf, rng)
        if kind.startswith("general"):
            v = v + rng.normal() * surf.n * surf.y[..., 2:3]
    elif src.startswith("file:"):
        v = read_surface_field(src[5:], surf)
    else:
        raise ConfigError("decompose.input must be random or file:<path>")
    if kind == "L2":
        res = project_weighted_solenoidal(surf, g, v, inner="L2")
    elif kind == "weighted":
        res = project_weighted_solenoidal(surf, g, v, inner="weighted")
    elif kind == "general":
        res = decompose_general(surf, v)
    else:
        res = decompose_general_weighted(surf, g, v)
    vin = v if kind.startswith("general") else surf.tangent(v)
    round_trip = surf.norm(res.solenoidal + res.gradient_part - vin) / surf.norm(vin)
    rep.add("roundtrip", round_trip, tol.float("decompose.roundtrip"))
    rep.add("div_residual", res.div_residual / max(surf.norm(vin), 1e-300), tol.float("decompose.div"))
    rep.environment["orthogonality_probe"] = f"{res.orthogonality:.3e}"
    write_surface_field(out / "input.csv", surf, vin)
    write_surface_field(out / "solenoidal.csv", surf, res.solenoidal)
    write_surface_field(out / "potential.csv", surf, res.q)
    return rep


def cmd_killing_scan(cfg: Config, tol: Config, args, out: Path) -> CheckReport:
    rep = CheckReport("killing-scan", environment=_env(cfg, args))
    surf = build_surface(cfg)
    gexpr = cfg.str("killing.g", "")
    g = field_expression(gexpr) if gexpr else None
    res = appendix_checks(surf, g)
    for key, dim in res["dims"].items():
        rep.environment[f"dim_{key}"] = dim
        exp_key = f"killing.expect_{key}"
        if exp_key in cfg:
            rep.add(f"dim.{key}", dim, cfg.int(exp_key, lo=0), "==")
    rep.add("eigen_residual", res["eigen_residual"], tol.float("killing.eigen"))
    rep.add("K_profile", res["K_profile"], tol.float("killing.K_profile"))
    spec = None
    if g is not None:
        gf = g(surf.y)
        spec = ThinDomainSpec(surf, 0.0, gf, 0.1 / ((np.abs(surf.W).max() + 1) * gf.max()))
    scan = rigid_field_scan(surf, spec)
    rows = []
    for key in sorted(scan.bases):
        for k, w in enumerate(scan.bases[key]):
            rows.append([key, k, *w.a, *w.b])
    write_csv(out / "rigid_basis.csv", ["space", "index", "a1", "a2", "a3", "b1", "b2", "b3"], rows)
    return rep


def cmd_korn(cfg: Config, tol: Config, args, out: Path) -> CheckReport:
    rep = CheckReport("korn", environment=_env(cfg, args))
    surf = build_surface(cfg)
    est = korn_constant_estimate(surf, cfg.int("korn.m_s", 6, lo=1), cfg.int("korn.m_theta", 6, lo=1))
    rep.environment["c_est"] = f"{est.c_est:.6e}"
    rep.environment["trial_dim"] = est.dim
    write_csv(out / "korn_eigenvalues.csv", ["index", "eigenvalue"], enumerate(est.eigenvalues),
              [f"c_est = {est.c_est:.6e} (lower bound on the trial space, dim {est.dim})"])
    rep.add("c_est.finite", float(np.isfinite(est.c_est)), 1.0, "==")
    return rep


HANDLERS = {
    "check-identities": cmd_check_identities,
    "rate-study": cmd_rate_study,
    "solve": cmd_solve,
    "decompose": cmd_decompose,
    "killing-scan": cmd_killing_scan,
    "korn": cmd_korn,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thinshell", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="plain-text 'section.key = value' file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tolerances", help="threshold overrides (same format)")
    p.add_argument("--seed", type=int, default=0, help="u64 seed for generated fields")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    out = Path(args.out)
    try:
        cfg = Config.load(args.config)
        tol = load_tolerances(args.tolerances)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        rep = HANDLERS[args.command](cfg, tol, args, out)
    except (ConfigError, InvalidEpsilonList) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ThinShellError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    rep.write(out)
    print(rep.summary())
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - t0)
    return 0 if rep.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
