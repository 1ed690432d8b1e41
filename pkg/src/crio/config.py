"""Run configuration files.

Grammar: an INI file (``configparser``) with an optional ``[run]`` section
and one section per command::

    [run]
    seed = 0
    rtol = 1e-8
    atol = 1e-10

    [sweep-fe]
    kappas = 1, 2
    gammas = 0.1, 0.2
    omega = 0

Lists are comma separated, booleans are ``true``/``false``. Keys not listed
in :data:`SCHEMAS` are rejected, and every missing key takes its default.
:meth:`RunConfig.echo` renders the normalized configuration; parsing the
echo gives back an identical configuration.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import ConfigError

COMMANDS = ("protocol-run", "sweep-fe", "gate-sim", "avg-fidelity")
GATE_MODES = ("IdealUnitary", "EffectiveResonant", "EffectiveDynamical", "FullResonant", "FullDynamical")


@dataclass(frozen=True)
class Field:
    kind: str  # int | float | bool | floats | choice | str
    default: Any
    nonneg: bool = False
    choices: tuple[str, ...] = ()
    optional: bool = False


def _physical() -> dict[str, Field]:
    # Rabi frequencies and detunings in units of Omega; rates in 1/us
    return {
        "mode": Field("choice", "FullResonant", choices=GATE_MODES),
        "omega_mhz": Field("float", 10.0, nonneg=True),
        "omega0": Field("float", 1.0, nonneg=True),
        "omega1": Field("float", 1.0, nonneg=True),
        "omega2": Field("float", 1.0, nonneg=True),
        "delta0": Field("float", 10.0),
        "delta1": Field("float", 30.0),
        "delta2": Field("float", 30.0),
        "v0": Field("float", 1.0 / 30.0),
        "delta_mhz": Field("float", 3.36),
        "theta": Field("float", None, optional=True),
        "phi": Field("float", None, optional=True),
        "noise": Field("bool", True),
        "tau": Field("float", 400.0, nonneg=True),
        "gamma0": Field("float", None, nonneg=True, optional=True),
        "gamma1": Field("float", None, nonneg=True, optional=True),
        "kappa_c": Field("float", None, nonneg=True, optional=True),
        "kappa_cc": Field("float", None, nonneg=True, optional=True),
        "compensate": Field("bool", True),
        "calibrate": Field("bool", True),
    }


SCHEMAS: dict[str, dict[str, Field]] = {
    "run": {
        "seed": Field("int", 0, nonneg=True),
        "rtol": Field("float", 1e-8, nonneg=True),
        "atol": Field("float", 1e-10, nonneg=True),
    },
    "protocol-run": {
        "n_parties": Field("int", 3),
        "trials": Field("int", 1, nonneg=True),
        "random": Field("bool", False),
        "alphas": Field("floats", (0.0,)),
        "axis_thetas": Field("floats", (0.0,)),
        "axis_phis": Field("floats", (0.0,)),
        "target_thetas": Field("floats", (0.0,)),
        "target_phis": Field("floats", (0.0,)),
        "alice_measures": Field("bool", True),
    },
    "sweep-fe": {
        "kappas": Field("floats", (1.0, 2.0), nonneg=True),
        "gammas": Field("floats", (0.1, 0.2), nonneg=True),
        "omega": Field("float", 0.0),
        "clamp_r0": Field("bool", True),
    },
    "gate-sim": {
        **_physical(),
        "betas": Field("floats", None, optional=True),
        "n_points": Field("int", 201),
    },
    "avg-fidelity": {
        **_physical(),
        "average": Field("choice", "angles", choices=("angles", "inputs")),
        "n_theta": Field("int", 8),
        "n_phi": Field("int", 8),
        "n_polar": Field("int", 5),
        "n_phase": Field("int", 4),
    },
}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _parse_float(text: str) -> float:
    val = float(text)
    if not math.isfinite(val):
        raise ValueError("must be finite")
    return val


_PARSERS: dict[str, Callable[[str], Any]] = {
    "int": lambda t: int(t.strip()),
    "float": _parse_float,
    "bool": _parse_bool,
    "floats": lambda t: tuple(_parse_float(x) for x in t.split(",") if x.strip()),
    "str": lambda t: t.strip(),
}


def _coerce(section: str, key: str, fld: Field, raw: Any) -> Any:
    where = f"{section}.{key}"
    if raw is None:
        return fld.default
    if isinstance(raw, str):
        text = raw.strip()
        if fld.optional and text.lower() in ("", "none"):
            return None
        try:
            if fld.kind == "choice":
                if text not in fld.choices:
                    raise ValueError(f"must be one of {', '.join(fld.choices)}")
                val = text
            else:
                val = _PARSERS[fld.kind](text)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    else:
        val = raw
    if fld.nonneg:
        items = val if isinstance(val, tuple) else (val,)
        if any(v is not None and v < 0 for v in items):
            raise ConfigError(f"{where}: must be non-negative")
    if fld.kind == "floats" and val is not None and not val:
        raise ConfigError(f"{where}: list must not be empty")
    return val


def _format(fld: Field, val: Any) -> str:
    if val is None:
        return "none"
    if fld.kind == "bool":
        return "true" if val else "false"
    if fld.kind == "floats":
        return ", ".join(repr(float(v)) for v in val)
    if fld.kind == "float":
        return repr(float(val))
    return str(val)


@dataclass(frozen=True)
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    rtol: float = 1e-8
    atol: float = 1e-10

    def echo(self) -> str:
        """Canonical text form; ``parse_config(echo, command)`` reproduces this config."""
        lines = ["[run]"]
        run = SCHEMAS["run"]
        for key, val in (("atol", self.atol), ("rtol", self.rtol), ("seed", self.seed)):
            lines.append(f"{key} = {_format(run[key], val)}")
        lines += ["", f"[{self.command}]"]
        schema = SCHEMAS[self.command]
        for key in sorted(schema):
            lines.append(f"{key} = {_format(schema[key], self.params[key])}")
        return "\n".join(lines) + "\n"


def parse_config(
    text: str | None,
    command: str,
    *,
    seed: int | None = None,
    tol: float | None = None,
) -> RunConfig:
    """Validate config text for ``command``; ``seed``/``tol`` flags override the file."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str  # keep key case so typos are reported verbatim
    try:
        cp.read_string(text or "")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for sec in cp.sections():
        if sec not in SCHEMAS:
            raise ConfigError(f"unknown section [{sec}]")
    others = [s for s in cp.sections() if s in COMMANDS and s != command]
    if others and not cp.has_section(command):
        # a file written for another command would otherwise run silently on defaults
        raise ConfigError(f"config has no [{command}] section (found [{others[0]}])")

    def read(section: str) -> dict:
        schema = SCHEMAS[section]
        raw = dict(cp[section]) if cp.has_section(section) else {}
        unknown = sorted(set(raw) - set(schema))
        if unknown:
            raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}")
        return {k: _coerce(section, k, fld, raw.get(k)) for k, fld in schema.items()}

    run = read("run")
    params = read(command)
    if seed is not None:
        if seed < 0:
            raise ConfigError("--seed must be non-negative")
        run["seed"] = int(seed)
    if tol is not None:
        if not (tol > 0 and math.isfinite(tol)):
            raise ConfigError("--tol must be a positive number")
        run["rtol"] = float(tol)
        run["atol"] = float(tol) / 100
    _validate(command, params)
    return RunConfig(command, params, run["seed"], run["rtol"], run["atol"])


def _validate(command: str, p: dict) -> None:
    if command == "protocol-run":
        n = p["n_parties"]
        if n < 3 or n % 2 == 0:
            raise ConfigError("protocol-run.n_parties: must be odd and >= 3")
        if p["trials"] < 1:
            raise ConfigError("protocol-run.trials: must be >= 1")
        if not p["random"]:
            need = (n - 1) // 2
            for key in ("alphas", "axis_thetas", "axis_phis", "target_thetas", "target_phis"):
                if len(p[key]) not in (1, need):
                    raise ConfigError(f"protocol-run.{key}: expected 1 or {need} values")
            for th in p["axis_thetas"] + p["target_thetas"]:
                if not 0 <= th <= math.pi:
                    raise ConfigError("protocol-run: polar angles must lie in [0, pi]")
    if command in ("gate-sim", "avg-fidelity"):
        if p["omega_mhz"] <= 0:
            raise ConfigError(f"{command}.omega_mhz: must be positive")
        if (p["theta"] is None) != (p["phi"] is None):
            raise ConfigError(f"{command}: theta and phi must be given together")
    if command == "gate-sim":
        if p["betas"] is not None and len(p["betas"]) != 6:
            raise ConfigError("gate-sim.betas: expected six angles")
        if p["n_points"] < 2:
            raise ConfigError("gate-sim.n_points: must be >= 2")
    if command == "avg-fidelity":
        for key in ("n_theta", "n_phi", "n_polar", "n_phase"):
            if p[key] < 1:
                raise ConfigError(f"avg-fidelity.{key}: must be >= 1")
