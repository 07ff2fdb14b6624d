"""Plain-text config parsing, field expressions and deterministic CSV writers."""
from __future__ import annotations

import csv
import math
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError


class Config:
    """Flat ``section.key = value`` mapping with typed getters.

    Blank lines and lines starting with ``#`` are ignored. Unknown keys are
    allowed; getters validate the keys they read.
    """

    def __init__(self, values: dict[str, str] | None = None, source: str = "<defaults>"):
        self.values = dict(values or {})
        self.source = source

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "Config":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
            key, val = (p.strip() for p in line.split("=", 1))
            if "." not in key or not all(key.split(".")) or " " in key:
                raise ConfigError(f"{source}:{lineno}: malformed key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            values[key] = val
        return cls(values, source)

    @classmethod
    def load(cls, path: str | Path | None) -> "Config":
        if path is None:
            return cls()
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        return cls.parse(p.read_text(encoding="utf-8"), str(p))

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def str(self, key: str, default: str | None = None, choices: Iterable[str] | None = None) -> str:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return default
        val = self.values[key]
        if choices is not None and val not in choices:
            raise ConfigError(f"{key} = {val!r}; expected one of {sorted(choices)}")
        return val

    def float(self, key: str, default: float | None = None, lo: float | None = None,
              hi: float | None = None) -> float:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return float(default)
        try:
            val = float(self.values[key])
        except ValueError:
            raise ConfigError(f"{key}: {self.values[key]!r} is not a number") from None
        if not math.isfinite(val) or (lo is not None and val < lo) or (hi is not None and val > hi):
            raise ConfigError(f"{key} = {val} outside [{lo}, {hi}]")
        return val

    def int(self, key: str, default: int | None = None, lo: int | None = None) -> int:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return int(default)
        try:
            val = int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key}: {self.values[key]!r} is not an integer") from None
        if lo is not None and val < lo:
            raise ConfigError(f"{key} = {val} must be >= {lo}")
        return val

    def bool(self, key: str, default: bool) -> bool:
        if key not in self.values:
            return default
        val = self.values[key].lower()
        if val in ("1", "true", "yes", "on"):
            return True
        if val in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: {self.values[key]!r} is not a boolean")

    def list(self, key: str, default: str) -> list[str]:
        raw = self.values.get(key, default)
        return [x.strip() for x in raw.split(",") if x.strip()]

    def floats(self, key: str, default: str) -> list[float]:
        try:
            return [float(x) for x in self.list(key, default)]
        except ValueError:
            raise ConfigError(f"{key}: expected a comma separated list of numbers") from None

    def echo(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values))


def load_tolerances(path: str | Path | None = None) -> Config:
    """Packaged defaults, overridden key by key by ``path`` if given."""
    text = resources.files("thinshell").joinpath("data/tolerances.txt").read_text(encoding="utf-8")
    tol = Config.parse(text, "tolerances.txt")
    if path is not None:
        tol.values.update(Config.load(path).values)
    return tol


# ---------------------------------------------------------------------------
# field expressions
# ---------------------------------------------------------------------------

_EXPR_NAMES = {name: getattr(np, name) for name in
               ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "arctan2", "abs", "pi")}


def field_expression(expr: str):
    """Compile an expression in ``y1, y2, y3`` into a callable of positions.

    Only numpy math functions and arithmetic are available.
    """
    try:
        code = compile(expr, "<expression>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {expr!r}: {exc.msg}") from None
    allowed = set(_EXPR_NAMES) | {"y1", "y2", "y3"}
    bad = [n for n in code.co_names if n not in allowed]
    if bad:
        raise ConfigError(f"expression {expr!r} uses unknown names {bad}")

    def fun(y: np.ndarray) -> np.ndarray:
        env = dict(_EXPR_NAMES, y1=y[..., 0], y2=y[..., 1], y3=y[..., 2])
        out = eval(code, {"__builtins__": {}}, env)  # noqa: S307 - names checked above
        return np.broadcast_to(np.asarray(out, dtype=float), y.shape[:-1]).copy()

    return fun


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def fmt(x) -> str:
    """Fixed, platform independent number formatting."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.12e}"
    return str(x)


def write_csv(path: str | Path, header: list[str], rows: Iterable[Iterable], comments: Iterable[str] = ()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
        for c in comments:
            fh.write(f"# {c}\n")


def write_surface_field(path: str | Path, surface, values: np.ndarray, names: list[str] | None = None):
    """Dump a scalar or vector field with ``s, theta`` columns."""
    values = np.asarray(values, dtype=float)
    flat = values.reshape(surface.Ns * surface.Ntheta, -1)
    if names is None:
        names = ["value"] if flat.shape[1] == 1 else [f"v{i + 1}" for i in range(flat.shape[1])]
    S, TH = surface.S.ravel(), surface.TH.ravel()
    write_csv(path, ["s", "theta"] + names, ([S[i], TH[i], *flat[i]] for i in range(len(S))))


def write_shell_field(path: str | Path, grid, values: np.ndarray):
    """Dump a shell field with ``s, theta, r`` columns."""
    surf = grid.surface
    values = np.asarray(values, dtype=float)
    flat = values.reshape(surf.Ns * surf.Ntheta * grid.Nr, -1)
    S = np.repeat(surf.S[..., None], grid.Nr, axis=2).ravel()
    TH = np.repeat(surf.TH[..., None], grid.Nr, axis=2).ravel()
    R = grid.r.ravel()
    names = ["value"] if flat.shape[1] == 1 else [f"v{i + 1}" for i in range(flat.shape[1])]
    write_csv(path, ["s", "theta", "r"] + names, ([S[i], TH[i], R[i], *flat[i]] for i in range(len(S))))


def read_surface_field(path: str | Path, surface) -> np.ndarray:
    """Read a vector field written by :func:`write_surface_field`."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"field file {p} not found")
    data = np.loadtxt(p, delimiter=",", skiprows=1, comments="#", ndmin=2)
    if data.shape[0] != surface.Ns * surface.Ntheta:
        raise ConfigError(f"{p}: expected {surface.Ns * surface.Ntheta} rows, got {data.shape[0]}")
    vals = data[:, 2:]
    return vals.reshape(surface.Ns, surface.Ntheta, -1).squeeze(-1) if vals.shape[1] == 1 \
        else vals.reshape(surface.Ns, surface.Ntheta, vals.shape[1])
