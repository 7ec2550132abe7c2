"""Run configuration: ``key = value`` files, CLI overrides and defaults.

Every physics default lives in ``KEYS`` below.  A few defaults depend on
the run mode (``MODE_DEFAULTS``).  Precedence is CLI flag > config file >
environment (``DJUMP_SEED`` only) > mode default > global default.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .coupling import DEFAULT_RATIO_13, DEFAULT_RATIO_23, Geometry, TransitionRates
from .dynamics import STEPPERS, SimulationParams
from .errors import ConfigError

MODES = ("coupling-scan", "trajectory", "validate", "sweep", "fit")
MIN_R = 0.01


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _choice(*allowed: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = text.strip()
        if t not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}; got {t!r}")
        return t

    return parse


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str
    echo: bool = True


# None means "resolved from MODE_DEFAULTS or another key".
KEYS: dict[str, Key] = {
    "seed": Key(_int, 1, "master seed (falls back to $DJUMP_SEED)"),
    "rabi": Key(float, 8.0, "Omega_R in units of gamma13 (2 Omega_R is the Rabi frequency)"),
    "gamma13": Key(float, 1.0, "1<->3 half-rate; sets the unit of rates"),
    "gamma12": Key(float, 2e-2, "1<->2 half-rate"),
    "gamma23": Key(float, None, "2<->3 half-rate (default: gamma12)"),
    "theta": Key(float, math.pi / 2, "angle between the 1<->2 dipole and the interatomic axis"),
    "theta13": Key(float, math.pi / 2, "dipole angle on 1<->3"),
    "theta23": Key(float, math.pi / 2, "dipole angle on 2<->3"),
    "wavelength_ratio_13": Key(float, DEFAULT_RATIO_13, "lambda13 / lambda12"),
    "wavelength_ratio_23": Key(float, DEFAULT_RATIO_23, "lambda23 / lambda12"),
    "optical_cross_terms": Key(_bool, False, "include dipole-dipole terms on 1<->3 and 2<->3"),
    "transition": Key(_choice("t12", "t13", "t23"), "t12", "transition for coupling-scan"),
    "r": Key(float, 0.5, "separation in units of lambda12"),
    "r_min": Key(float, 0.1, "smallest separation of scans and sweeps"),
    "r_max": Key(float, 3.0, "largest separation of scans and sweeps"),
    "r_points": Key(_int, None, "grid points (uniform for scans, log-spaced for sweeps)"),
    "dt": Key(float, 1e-3, "time step in units of 1/gamma13"),
    "t_max": Key(float, None, "length of each trajectory"),
    "trajectories": Key(_int, None, "trajectories (per sweep point)"),
    "bin_width": Key(float, 50.0, "click-summation interval"),
    "threshold": Key(_int, 3, "clicks per bin for a detector to count as bright"),
    "stepper": Key(_choice(*STEPPERS), None, "euler (first order) or exact"),
    "reprepare": Key(_bool, True, "re-prepare |1,2> after any undetected jump"),
    "sample_every": Key(_int, 1000, "population sampling interval in steps (0 = off)"),
    "checkpoint": Key(float, 1.0, "validate: checkpoint interval"),
    "dt_ode": Key(float, 2.5e-4, "validate: RK4 step of the master-equation oracle"),
    "sweep_csv": Key(str, "", "fit: existing sweep CSV to fit instead of simulating"),
    "workers": Key(_int, 1, "worker threads", echo=False),
    "out": Key(str, ".", "output directory", echo=False),
}

MODE_DEFAULTS: dict[str, dict[str, Any]] = {
    "coupling-scan": {"r_points": 30, "t_max": 0.0, "trajectories": 0, "stepper": "euler"},
    "trajectory": {"r_points": 12, "t_max": 2000.0, "trajectories": 1, "stepper": "euler"},
    "validate": {"r_points": 12, "t_max": 20.0, "trajectories": 2000, "stepper": "euler"},
    "sweep": {"r_points": 12, "t_max": 20000.0, "trajectories": 10, "stepper": "exact"},
    "fit": {"r_points": 12, "t_max": 20000.0, "trajectories": 10, "stepper": "exact"},
}


@dataclass
class RunConfig:
    mode: str
    values: dict[str, Any]
    sources: dict[str, str] = field(default_factory=dict)

    def __getattr__(self, name: str) -> Any:
        values = self.__dict__.get("values", {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    def echo(self) -> dict[str, Any]:
        """Resolved settings that influence results (workers/out excluded)."""
        return {k: self.values[k] for k in sorted(self.values) if KEYS[k].echo}

    def header_lines(self) -> list[str]:
        return [f"# djump {self.mode}"] + [f"# {k} = {v}" for k, v in self.echo().items()]

    @property
    def rates(self) -> TransitionRates:
        return TransitionRates(self.gamma13, self.gamma12, self.gamma23)

    @property
    def geometry(self) -> Geometry:
        return Geometry(
            r=self.r,
            theta12=self.theta,
            theta13=self.theta13,
            theta23=self.theta23,
            wavelength_ratio_13=self.wavelength_ratio_13,
            wavelength_ratio_23=self.wavelength_ratio_23,
        )

    @property
    def params(self) -> SimulationParams:
        return SimulationParams(
            rates=self.rates,
            geom=self.geometry,
            rabi=self.rabi,
            dt=self.dt,
            t_max=self.t_max,
            seed=self.seed,
            optical_cross_terms=self.optical_cross_terms,
            stepper=self.stepper,
        )


def parse_text(text: str) -> dict[str, tuple[Any, str]]:
    """``key = value`` lines; ``#`` starts a comment.  Returns key -> (value, source)."""
    out: dict[str, tuple[Any, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        where = f"line {lineno}"
        out[key] = (_convert(key, value, where), where)
    return out


def _convert(key: str, value: Any, where: str) -> Any:
    if key not in KEYS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    if not isinstance(value, str):
        return value
    try:
        return KEYS[key].parse(value)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None


def parse_config(
    mode: str,
    text: str = "",
    overrides: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """Resolve a RunConfig from file text plus CLI overrides.

    ``overrides`` maps key -> value (already typed or a string); their
    source is reported as the matching ``--flag``.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    env = os.environ if env is None else env
    values: dict[str, Any] = {}
    sources: dict[str, str] = {}
    for key, entry in KEYS.items():
        values[key] = entry.default
        sources[key] = "default"
    for key, v in MODE_DEFAULTS[mode].items():
        values[key] = v
        sources[key] = f"default for {mode}"
    if "DJUMP_SEED" in env:
        values["seed"] = _convert("seed", env["DJUMP_SEED"], "env DJUMP_SEED")
        sources["seed"] = "env DJUMP_SEED"
    for key, (v, where) in parse_text(text).items():
        values[key] = v
        sources[key] = where
    for key, v in (overrides or {}).items():
        key = key.replace("-", "_")
        where = f"flag --{key.replace('_', '-')}"
        values[key] = _convert(key, v, where)
        sources[key] = where
    if values["gamma23"] is None:
        values["gamma23"] = values["gamma12"]
        sources["gamma23"] = "= gamma12"
    cfg = RunConfig(mode, values, sources)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    v, src = cfg.values, cfg.sources

    def fail(msg: str, *keys: str) -> None:
        ctx = ", ".join(f"{k} from {src[k]}" for k in keys)
        raise ConfigError(f"{msg} ({ctx})" if ctx else msg)

    if v["r"] < MIN_R:
        fail(f"r must be >= {MIN_R}", "r")
    if not MIN_R <= v["r_min"] < v["r_max"]:
        fail(f"need {MIN_R} <= r_min < r_max", "r_min", "r_max")
    if v["r_points"] < 2:
        fail("r_points must be >= 2", "r_points")
    if cfg.mode in ("sweep", "fit") and not (0.05 <= v["r_min"] and v["r_max"] <= 10.0):
        fail("sweep separations must lie in [0.05, 10]", "r_min", "r_max")
    if cfg.mode == "fit" and v["r_points"] < 3 and not v["sweep_csv"]:
        fail("fit needs r_points >= 3", "r_points")
    if v["threshold"] < 1:
        fail("threshold must be >= 1", "threshold")
    if not v["bin_width"] > 0:
        fail("bin_width must be > 0", "bin_width")
    if cfg.mode != "coupling-scan":
        if v["trajectories"] < 1:
            fail("trajectories must be >= 1", "trajectories")
        if not v["t_max"] >= 0:
            fail("t_max must be >= 0", "t_max")
    if v["sample_every"] < 0:
        fail("sample_every must be >= 0", "sample_every")
    if not v["dt_ode"] > 0 or not v["checkpoint"] > 0:
        fail("dt_ode and checkpoint must be > 0", "dt_ode", "checkpoint")
    if v["workers"] < 1:
        fail("workers must be >= 1", "workers")
    try:
        cfg.params
    except ConfigError as exc:
        msg = str(exc)
        keys = ("dt", "rabi") if "rabi" in msg else ("dt", "gamma13", "gamma12", "gamma23")
        fail(msg, *keys)
    except ValueError as exc:
        fail(str(exc))
