"""Run configuration: TOML text with one section per group of symbols.

Every key is checked against a fixed schema; unknown keys, missing required
keys, wrong types and violated model assumptions raise :class:`ConfigError`
naming the offending key.  :meth:`RunConfig.to_text` writes the normalized
configuration (defaults filled in), and parsing that text gives back an equal
configuration.

Sections
--------
``[grid]``         dim, cells, extent
``[time]``         T, dt (default T/1000)
``[model]``        gamma1..gamma4, tau, sigma_s, p_max, g | g_file
``[potential]``    kind (regular | logarithmic | obstacle), c0
``[control]``      eps, rho | rho_factor, delta_slide
``[phi0]``         kind = constant | tanh | file
``[phi_star]``     kind = constant | file
``[sigma0]``       kind = constant | file
``[mu_gamma]``     kind = constant | separable
``[certificate]``  c_sh, c_hat, rho_pilot, envelope_tol, estimator settings
``[solver]``       newton_tol, newton_maxiter, domain_margin
``[output]``       directory, snapshot_stride, pgm
"""
from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .. import potentials as pt
from ..core import TimeConfig, build_grid, validate_initial_data
from ..dynamics import ModelParams, Problem
from ..dynamics import sigma_star as _sigma_star
from ..elliptic import BoundaryData

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_config",
    "parse_config_text",
    "builtin_scenario",
    "BUILTIN_SCENARIOS",
    "sigma_star",
]


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted name of the culprit."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


_REQUIRED = object()


class _Spec:
    def __init__(self, kind, default=_REQUIRED, check=None, why=None):
        self.kind = kind
        self.default = default
        self.check = check
        self.why = why


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


_SCHEMA = {
    "grid": {
        "dim": _Spec("int", check=lambda v: v in (1, 2), why="only 1D and 2D boxes are supported"),
        "cells": _Spec("int_list", check=lambda v: all(c >= 4 for c in v),
                       why="every axis needs at least 4 cells"),
        "extent": _Spec("float_list", check=lambda v: all(e > 0 for e in v),
                        why="the domain must have positive side lengths"),
    },
    "time": {
        "T": _Spec("float", check=_positive, why="the final time must be positive"),
        "dt": _Spec("float", None, check=_positive, why="the time step must be positive"),
    },
    "model": {
        "gamma1": _Spec("float", 1.0, _nonneg, "proliferation and consumption rates are nonnegative"),
        "gamma2": _Spec("float", 0.5, _nonneg, "proliferation and consumption rates are nonnegative"),
        "gamma3": _Spec("float", 1.0, _nonneg, "proliferation and consumption rates are nonnegative"),
        "gamma4": _Spec("float", 1.0, _positive,
                        "the nutrient relaxation rate must be strictly positive"),
        "tau": _Spec("float", 4.0, _positive, "the viscosity coefficient must be strictly positive"),
        "sigma_s": _Spec("float", 1.0),
        "p_max": _Spec("float", 1.0, _positive,
                       "the proliferation function must be bounded with positive maximum"),
        "g": _Spec("float", 0.0),
        "g_file": _Spec("str", None),
    },
    "potential": {
        "kind": _Spec("str", check=lambda v: v in pt.KINDS, why=f"kind must be one of {pt.KINDS}"),
        "c0": _Spec("float", None),
    },
    "control": {
        "eps": _Spec("float", 0.05, lambda v: 0 < v <= 1,
                     "the regularization parameter must lie in (0, 1]"),
        "rho": _Spec("float", None, _nonneg, "the feedback gain must be nonnegative"),
        "rho_factor": _Spec("float", None, _positive, "the gain factor must be positive"),
        "delta_slide": _Spec("float", None, _positive, "the reaching threshold must be positive"),
    },
    "certificate": {
        "c_sh": _Spec("float_or_word:estimate", "estimate", _nonneg,
                      "the embedding constant is nonnegative"),
        "c_hat": _Spec("float_or_word:pilot", "pilot", _nonneg,
                       "the mu bound offset is nonnegative"),
        "rho_pilot": _Spec("float", None, _positive, "the pilot gain must be positive"),
        "envelope_tol": _Spec("float", 1e-2, _nonneg,
                              "relative envelope tolerance must be nonnegative"),
        "csh_random": _Spec("int", 1000, _nonneg),
        "csh_max_freq": _Spec("int", 8, _positive),
        "csh_seed": _Spec("int", 0),
    },
    "solver": {
        "newton_tol": _Spec("float", 1e-10, _positive),
        "newton_maxiter": _Spec("int", 50, _positive),
        "domain_margin": _Spec("float", 1e-6, _positive),
    },
    "output": {
        "directory": _Spec("str", "out"),
        "snapshot_stride": _Spec("int", 100, _nonneg),
        "pgm": _Spec("bool", True),
    },
}

# field sections: keys per kind
_FIELD_KINDS = {
    "phi0": {
        "constant": {"value": _Spec("float")},
        "tanh": {
            "center": _Spec("float_list"),
            "radius": _Spec("float", check=_nonneg, why="radius must be nonnegative"),
            "width": _Spec("float", check=_positive, why="interface width must be positive"),
            "inner": _Spec("float"),
            "outer": _Spec("float"),
        },
        "file": {"path": _Spec("str")},
    },
    "phi_star": {
        "constant": {"value": _Spec("float")},
        "file": {"path": _Spec("str")},
    },
    "sigma0": {
        "constant": {"value": _Spec("float")},
        "file": {"path": _Spec("str")},
    },
    "mu_gamma": {
        "constant": {"value": _Spec("float", 0.0)},
        "separable": {
            "times": _Spec("float_list"),
            "amplitudes": _Spec("float_list"),
            "profile": _Spec("float", None),
            "profile_file": _Spec("str", None),
        },
    },
}

_OPTIONAL_SECTIONS = {"certificate", "solver", "output", "mu_gamma", "control", "model"}
_SECTION_ORDER = ("grid", "time", "model", "potential", "control", "phi0", "phi_star",
                  "sigma0", "mu_gamma", "certificate", "solver", "output")


def _coerce(key, spec, v):
    kind = spec.kind
    if kind == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(key, f"expected an integer, got {v!r}")
        return v
    if kind == "float":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(key, f"expected a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            raise ConfigError(key, "must be finite")
        return v
    if kind == "bool":
        if not isinstance(v, bool):
            raise ConfigError(key, f"expected true or false, got {v!r}")
        return v
    if kind == "str":
        if not isinstance(v, str):
            raise ConfigError(key, f"expected a string, got {v!r}")
        return v
    if kind in ("int_list", "float_list"):
        if not isinstance(v, list) or not v:
            raise ConfigError(key, f"expected a non-empty list, got {v!r}")
        item = _Spec(kind.split("_")[0])
        return [_coerce(key, item, x) for x in v]
    if kind.startswith("float_or_word:"):
        word = kind.split(":", 1)[1]
        if v == word:
            return v
        if isinstance(v, str):
            raise ConfigError(key, f"expected a number or {word!r}, got {v!r}")
        return _coerce(key, _Spec("float"), v)
    raise AssertionError(kind)


def _check_keys(section, raw, specs):
    unknown = sorted(set(raw) - set(specs))
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}",
                          f"unknown key (allowed: {', '.join(sorted(specs))})")
    out = {}
    for k, spec in specs.items():
        key = f"{section}.{k}"
        if k not in raw:
            if spec.default is _REQUIRED:
                raise ConfigError(key, "missing required key")
            out[k] = copy.deepcopy(spec.default)
            continue
        v = _coerce(key, spec, raw[k])
        if spec.check is not None and not isinstance(v, str) and not spec.check(v):
            raise ConfigError(key, f"invalid value {v!r}: {spec.why or 'constraint violated'}")
        out[k] = v
    return out


def _normalize(raw):
    if not isinstance(raw, dict):
        raise ConfigError("", "configuration must be a table of sections")
    known = set(_SCHEMA) | set(_FIELD_KINDS)
    for s in raw:
        if s not in known:
            raise ConfigError(s, f"unknown section (allowed: {', '.join(_SECTION_ORDER)})")
        if not isinstance(raw[s], dict):
            raise ConfigError(s, "expected a section table")
    out = {}
    for s in _SECTION_ORDER:
        present = s in raw
        if not present and s not in _OPTIONAL_SECTIONS:
            raise ConfigError(s, "missing required section")
        sec = raw.get(s, {})
        if s in _SCHEMA:
            out[s] = _check_keys(s, sec, _SCHEMA[s])
        else:
            kinds = _FIELD_KINDS[s]
            kind = sec.get("kind", "constant" if s == "mu_gamma" else None)
            if kind is None:
                raise ConfigError(f"{s}.kind", "missing required key")
            if kind not in kinds:
                raise ConfigError(f"{s}.kind", f"unknown kind {kind!r} (allowed: {', '.join(kinds)})")
            body = {k: v for k, v in sec.items() if k != "kind"}
            out[s] = {"kind": kind, **_check_keys(s, body, kinds[kind])}
    _cross_checks(out)
    return out


def _drop_none(d):
    return {k: v for k, v in d.items() if v is not None}


def _cross_checks(c):
    g = c["grid"]
    if not len(g["cells"]) == len(g["extent"]) == g["dim"]:
        raise ConfigError("grid.cells", f"need {g['dim']} cell counts and extents")
    t = c["time"]
    if t["dt"] is None:
        t["dt"] = t["T"] / 1000.0
    try:
        TimeConfig(t["T"], t["dt"])
    except ValueError as exc:
        raise ConfigError("time.dt", str(exc)) from None
    m = c["model"]
    if m["g_file"] is not None and m["g"] != 0.0:
        raise ConfigError("model.g_file", "give either g or g_file, not both")
    p = c["potential"]
    if p["c0"] is None and p["kind"] != "regular":
        p["c0"] = 2.0 if p["kind"] == "logarithmic" else 1.0
    if p["kind"] == "regular" and p["c0"] is not None:
        raise ConfigError("potential.c0", "the regular potential takes no c0")
    try:
        pt.PotentialSpec(p["kind"], p["c0"] if p["c0"] is not None else 1.0)
    except ValueError as exc:
        raise ConfigError("potential.c0", str(exc)) from None
    ctl = c["control"]
    if (ctl["rho"] is None) == (ctl["rho_factor"] is None):
        raise ConfigError("control.rho", "give exactly one of rho or rho_factor")
    if c["phi0"]["kind"] == "tanh" and len(c["phi0"]["center"]) != g["dim"]:
        raise ConfigError("phi0.center", f"needs {g['dim']} coordinates")
    mg = c["mu_gamma"]
    if mg["kind"] == "separable":
        if len(mg["times"]) != len(mg["amplitudes"]):
            raise ConfigError("mu_gamma.amplitudes", "needs one amplitude per time")
        if (mg["profile"] is None) == (mg["profile_file"] is None):
            raise ConfigError("mu_gamma.profile", "give exactly one of profile or profile_file")


@dataclass
class RunConfig:
    """Validated configuration.  ``base_dir`` resolves relative file paths."""

    data: dict
    base_dir: Path = field(default_factory=Path.cwd, compare=False)

    def __getitem__(self, section):
        return self.data[section]

    def to_text(self):
        return tomli_w.dumps({s: _drop_none(self.data[s]) for s in _SECTION_ORDER})

    def with_changes(self, **sections):
        """Copy with some keys replaced: ``with_changes(control={"rho": 0.0})``."""
        d = copy.deepcopy(self.data)
        for s, changes in sections.items():
            d[s].update(changes)
        return RunConfig(_normalize({s: _drop_none(v) for s, v in d.items()}), self.base_dir)

    def path(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    # -- assembly ---------------------------------------------------------

    @property
    def grid(self):
        g = self.data["grid"]
        return build_grid(g["dim"], g["cells"], g["extent"])

    @property
    def time(self):
        return TimeConfig(self.data["time"]["T"], self.data["time"]["dt"])

    @property
    def potential(self):
        p = self.data["potential"]
        if p["kind"] == "regular":
            return pt.regular()
        return pt.PotentialSpec(p["kind"], p["c0"])

    def _field(self, section, grid):
        spec = self.data[section]
        kind = spec["kind"]
        if kind == "constant":
            return np.full(grid.shape, spec["value"])
        if kind == "file":
            from .io import read_field_csv
            try:
                return read_field_csv(self.path(spec["path"]), grid).reshape(grid.shape)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"{section}.path", str(exc)) from None
        # tanh profile around a centre point
        coords = grid.coordinates()
        d = np.sqrt(sum((x - c) ** 2 for x, c in zip(coords, spec["center"])))
        s = 0.5 * (1.0 - np.tanh((d - spec["radius"]) / spec["width"]))
        return spec["outer"] + (spec["inner"] - spec["outer"]) * s

    def fields(self, grid=None):
        """``(phi0, sigma0, phi_star)`` as grid-shaped arrays."""
        grid = grid or self.grid
        return (self._field("phi0", grid), self._field("sigma0", grid),
                self._field("phi_star", grid))

    def params(self, grid=None):
        m = self.data["model"]
        g = m["g"]
        if m["g_file"] is not None:
            from .io import read_field_csv
            grid = grid or self.grid
            try:
                g = read_field_csv(self.path(m["g_file"]), grid).reshape(grid.shape)
            except (OSError, ValueError) as exc:
                raise ConfigError("model.g_file", str(exc)) from None
        kw = {k: m[k] for k in ("gamma1", "gamma2", "gamma3", "gamma4", "tau",
                                "sigma_s", "p_max")}
        return ModelParams(g=g, **kw)

    def mu_gamma(self, grid=None):
        spec = self.data["mu_gamma"]
        if spec["kind"] == "constant":
            return BoundaryData(constant=spec["value"])
        grid = grid or self.grid
        if spec["profile"] is not None:
            prof = np.full(grid.boundary_index.size, spec["profile"])
        else:
            from .io import read_field_csv
            try:
                full = read_field_csv(self.path(spec["profile_file"]), grid)
            except (OSError, ValueError) as exc:
                raise ConfigError("mu_gamma.profile_file", str(exc)) from None
            prof = np.ravel(full)[grid.boundary_index]
        try:
            return BoundaryData(times=spec["times"], amplitudes=spec["amplitudes"], profile=prof)
        except ValueError as exc:
            raise ConfigError("mu_gamma.times", str(exc)) from None

    def build_problem(self, rho):
        """Validated :class:`~phaseslide.dynamics.Problem` at gain ``rho``."""
        grid = self.grid
        pot = self.potential
        phi0, sigma0, phi_star = self.fields(grid)
        report = validate_initial_data(phi0, sigma0, phi_star, pot,
                                       self.data["solver"]["domain_margin"])
        if not report.ok:
            raise ConfigError("phi0", "initial data violate the domain assumptions:\n"
                              + report.summary())
        solver = self.data["solver"]
        try:
            return Problem(grid, self.time, self.params(grid), pot, self.data["control"]["eps"],
                           float(rho), phi0, sigma0, phi_star, self.mu_gamma(grid),
                           newton_tol=solver["newton_tol"],
                           newton_maxiter=solver["newton_maxiter"])
        except ValueError as exc:
            raise ConfigError("time.dt" if "dt" in str(exc) else "", str(exc)) from None


def parse_config_text(text, base_dir=None):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"not valid TOML: {exc}") from None
    return RunConfig(_normalize(raw), Path(base_dir) if base_dir else Path.cwd())


def parse_config(path):
    """Read and validate a configuration file; relative paths resolve next to it."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc}") from None
    return parse_config_text(text, path.resolve().parent)


def sigma_star(params, g, sigma0):
    """``max(||sigma_s + g / gamma4||_inf, ||sigma0||_inf)``."""
    return _sigma_star(params, sigma0, g)


SCENARIO_1D_ERADICATION = """\
# Tumor core on [0, 0.6] driven to the healthy state -0.9.
[grid]
dim = 1
cells = [256]
extent = [1.0]

[time]
T = 1.0
dt = 0.001

[model]
gamma1 = 1.0
gamma2 = 0.5
gamma3 = 1.0
gamma4 = 1.0
tau = 4.0
sigma_s = 1.0
p_max = 1.0
g = 0.0

[potential]
kind = "obstacle"
c0 = 1.0

[control]
eps = 0.05
rho_factor = 1.25

[phi0]
kind = "tanh"
center = [0.0]
radius = 0.6
width = 0.05
inner = 0.9
outer = -0.9

[phi_star]
kind = "constant"
value = -0.9

[sigma0]
kind = "constant"
value = 0.5

[mu_gamma]
kind = "constant"
value = 0.0

[certificate]
c_sh = "estimate"
c_hat = "pilot"
"""

SCENARIO_2D_SMOKE = """\
# Small 2D disc-shaped tumor, for quick checks of the 2D code path.
[grid]
dim = 2
cells = [24, 24]
extent = [1.0, 1.0]

[time]
T = 0.05
dt = 0.001

[potential]
kind = "obstacle"
c0 = 1.0

[control]
eps = 0.05
rho_factor = 1.25

[phi0]
kind = "tanh"
center = [0.5, 0.5]
radius = 0.3
width = 0.05
inner = 0.9
outer = -0.9

[phi_star]
kind = "constant"
value = -0.9

[sigma0]
kind = "constant"
value = 0.5

[certificate]
csh_random = 100
"""

BUILTIN_SCENARIOS = {
    "scenario-1d-eradication": SCENARIO_1D_ERADICATION,
    "scenario-2d-smoke": SCENARIO_2D_SMOKE,
}


def builtin_scenario(name="scenario-1d-eradication"):
    try:
        text = BUILTIN_SCENARIOS[name]
    except KeyError:
        raise ConfigError("", f"unknown scenario {name!r}; known: {sorted(BUILTIN_SCENARIOS)}") from None
    return parse_config_text(text)
