"""Command-line front-end: ``crio <command> [--config F] [--out P] [--format csv|json]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.

The payload written to ``--out`` depends only on the configuration, so
repeated runs are byte-identical. Wall time and version go to the envelope
file ``<out>.envelope.json``. Without ``--out`` the payload is printed.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .cavity import fe_csv, fe_sweep
from .config import COMMANDS, RunConfig, parse_config
from .core import BlochAxis, StateVector
from .errors import ConfigError, CrioError, RegimeError
from .io import atomic_write, dumps_json
from .protocol import run_crio
from .rydberg import (
    DrivingParams,
    GateMode,
    InputStateParams,
    NoiseParams,
    average_fidelity_inputs,
    fidelity_grid_angles,
    simulate_gate,
    steer,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


@dataclass(frozen=True)
class ResultEnvelope:
    config_echo: str
    version: str
    wall_time: float
    fmt: str
    payload: str

    def to_dict(self, payload_path: str | None = None) -> dict:
        if payload_path is not None:
            body: object = payload_path
        elif self.fmt == "json":
            body = json.loads(self.payload)
        else:
            body = self.payload
        return {
            "config": self.config_echo,
            "format": self.fmt,
            "payload": body,
            "version": self.version,
            "wall_time_s": self.wall_time,
        }


def _qubit(theta: float, phi: float) -> StateVector:
    return StateVector((2,), [math.cos(theta / 2), complex(math.cos(phi), math.sin(phi)) * math.sin(theta / 2)])


def _broadcast(vals: tuple[float, ...], n: int) -> list[float]:
    return list(vals) * n if len(vals) == 1 else list(vals)


def _protocol(cfg: RunConfig, fmt: str) -> str:
    p = cfg.params
    n = (p["n_parties"] - 1) // 2
    rng = np.random.default_rng(cfg.seed)
    trials = []
    for _ in range(p["trials"]):
        if p["random"]:
            alphas = [float(rng.uniform(0, 2 * math.pi)) for _ in range(n)]
            axes = [BlochAxis.random(rng) for _ in range(n)]
            tgt = [BlochAxis.random(rng) for _ in range(n)]
            tgt_angles = [(a.theta, a.phi) for a in tgt]
        else:
            alphas = _broadcast(p["alphas"], n)
            axes = [
                BlochAxis(t, ph % (2 * math.pi))
                for t, ph in zip(_broadcast(p["axis_thetas"], n), _broadcast(p["axis_phis"], n))
            ]
            tgt_angles = list(zip(_broadcast(p["target_thetas"], n), _broadcast(p["target_phis"], n)))
        targets = [_qubit(t, ph) for t, ph in tgt_angles]
        run = run_crio(p["n_parties"], alphas, axes, targets, alice_measures=p["alice_measures"])
        trials.append((alphas, axes, tgt_angles, run))

    if fmt == "csv":
        lines = ["trial,branch,receiver,probability,fidelity"]
        for k, (_, _, _, run) in enumerate(trials):
            for b in run.branches:
                for j, f in enumerate(b.fidelities):
                    lines.append(f"{k},{b.transcript.branch},{j},{b.probability:.9f},{f:.6f}")
        return "\n".join(lines) + "\n"
    out = []
    for alphas, axes, tgt_angles, run in trials:
        out.append(
            {
                "alphas": alphas,
                "axes": [[a.theta, a.phi] for a in axes],
                "targets": [list(t) for t in tgt_angles],
                "min_fidelity": run.min_fidelity,
                "branches": [
                    {
                        "label": b.transcript.branch,
                        "probability": b.probability,
                        "fidelities": list(b.fidelities),
                        "events": [e.as_dict() for e in b.transcript.events],
                    }
                    for b in run.branches
                ],
            }
        )
    return dumps_json({"command": cfg.command, "n_parties": p["n_parties"], "trials": out})


def _sweep(cfg: RunConfig, fmt: str) -> str:
    p = cfg.params
    rows = fe_sweep(p["kappas"], p["gammas"], p["omega"], clamp_r0=p["clamp_r0"])
    if fmt == "csv":
        return fe_csv(rows)
    return dumps_json(
        {
            "command": cfg.command,
            "rows": [
                {"kappa_over_g": r.kappa_over_g, "gamma_over_g": r.gamma_over_g,
                 "omega_over_g": r.omega_over_g, "F": r.F, "E": r.E}
                for r in rows
            ],
        }
    )


def gate_inputs(params: dict) -> tuple[DrivingParams, NoiseParams | None, GateMode]:
    """Physical parameters from a validated ``gate-sim``/``avg-fidelity`` section."""
    unit = 2 * math.pi * params["omega_mhz"]
    p = DrivingParams(
        omega0=params["omega0"] * unit,
        omega1=params["omega1"] * unit,
        omega2=params["omega2"] * unit,
        delta0=params["delta0"] * unit,
        delta1=params["delta1"] * unit,
        delta2=params["delta2"] * unit,
        V0=params["v0"] * unit,
        base_unit=unit,
        dynamical_delta=2 * math.pi * params["delta_mhz"],
    )
    mode = GateMode.parse(params["mode"])
    if params["theta"] is not None and mode != GateMode.IDEAL_UNITARY:
        p = steer(p, mode, params["theta"], params["phi"])
    noise = None
    if params["noise"]:
        noise = NoiseParams(
            tau=params["tau"],
            gamma0=params["gamma0"],
            gamma1=params["gamma1"],
            kappa_c=params["kappa_c"],
            kappa_C=params["kappa_cc"],
        )
    return p, noise, mode


def _gate(cfg: RunConfig, fmt: str) -> str:
    p, noise, mode = gate_inputs(cfg.params)
    psi0 = None
    if cfg.params["betas"] is not None:
        psi0 = InputStateParams(*cfg.params["betas"]).state()
    res = simulate_gate(
        p, noise, mode, psi0,
        n_points=cfg.params["n_points"], rtol=cfg.rtol, atol=cfg.atol,
        calibrate=cfg.params["calibrate"], compensate=cfg.params["compensate"],
    )
    if fmt == "csv":
        return res.trace.to_csv()
    return dumps_json(res.summary())


def _average(cfg: RunConfig, fmt: str) -> str:
    prm = cfg.params
    p, noise, mode = gate_inputs(prm)
    if prm["average"] == "angles":
        grid, vals = fidelity_grid_angles(
            p, noise, mode, n_theta=prm["n_theta"], n_phi=prm["n_phi"], compensate=prm["compensate"]
        )
        mean = math.fsum(vals.tolist()) / len(vals)
        if fmt == "csv":
            lines = ["theta,phi,fidelity"] + [f"{t:.9f},{ph:.9f},{f:.9f}" for (t, ph), f in zip(grid, vals)]
            return "\n".join(lines) + "\n"
        return dumps_json(
            {"average": "angles", "mean_fidelity": mean, "mode": mode.value,
             "grid": {"n_theta": prm["n_theta"], "n_phi": prm["n_phi"]},
             "points": [[t, ph, float(f)] for (t, ph), f in zip(grid, vals)]}
        )
    angles = (math.pi / 2, math.pi) if prm["theta"] is None else (prm["theta"], prm["phi"])
    mean = average_fidelity_inputs(
        p, noise, mode, angles, n_polar=prm["n_polar"], n_phase=prm["n_phase"], compensate=prm["compensate"]
    )
    if fmt == "csv":
        return f"average,mode,theta,phi,mean_fidelity\ninputs,{mode.value},{angles[0]:.9f},{angles[1]:.9f},{mean:.9f}\n"
    return dumps_json(
        {"average": "inputs", "mean_fidelity": mean, "mode": mode.value,
         "angles": list(angles), "grid": {"n_polar": prm["n_polar"], "n_phase": prm["n_phase"]}}
    )


_DISPATCH = {"protocol-run": _protocol, "sweep-fe": _sweep, "gate-sim": _gate, "avg-fidelity": _average}


def run_command(cfg: RunConfig, fmt: str = "json") -> ResultEnvelope:
    """Run one validated configuration and wrap the payload with provenance."""
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown format {fmt!r}")
    t0 = time.perf_counter()
    payload = _DISPATCH[cfg.command](cfg, fmt)
    return ResultEnvelope(cfg.echo(), __version__, time.perf_counter() - t0, fmt, payload)


def emit_results(env: ResultEnvelope, out: str | Path) -> tuple[Path, Path]:
    """Write the payload to ``out`` and the envelope next to it, both atomically."""
    out = Path(out)
    payload = atomic_write(out, env.payload)
    envelope = atomic_write(out.with_name(out.name + ".envelope.json"), dumps_json(env.to_dict(str(out))))
    return payload, envelope


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crio", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI file with [run] and [%s] sections" % name)
        sp.add_argument("--out", help="payload path (printed to stdout when omitted)")
        sp.add_argument("--format", choices=("csv", "json"), default="json")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--tol", type=float, help="integrator rtol (atol = tol / 100)")
        sp.add_argument("--echo-config", action="store_true", help="print the normalized config and exit")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8") if args.config else None
        cfg = parse_config(text, args.command, seed=args.seed, tol=args.tol)
    except (ConfigError, OSError, UnicodeDecodeError) as exc:
        print(f"crio: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.echo_config:
        sys.stdout.write(cfg.echo())
        return EXIT_OK
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            env = run_command(cfg, args.format)
    except (ConfigError, RegimeError) as exc:
        print(f"crio: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CrioError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"crio: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.out:
        try:
            emit_results(env, args.out)
        except OSError as exc:
            print(f"crio: cannot write results: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
    else:
        sys.stdout.write(env.payload)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
