from __future__ import annotations

import json
import math
import os
import subprocess
import sys

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from crio import cli
from crio.config import COMMANDS, SCHEMAS, parse_config
from crio.errors import ConfigError, IntegrationError


def run(tmp_path, command, text=None, *extra):
    args = [command]
    if text is not None:
        cfg = tmp_path / f"{command}.ini"
        cfg.write_text(text)
        args += ["--config", str(cfg)]
    return cli.main(args + list(extra))


# --- config ---------------------------------------------------------------


def test_defaults_and_seed():
    cfg = parse_config(None, "gate-sim")
    assert cfg.seed == 0
    assert cfg.params["mode"] == "FullResonant"
    assert cfg.params["omega_mhz"] == 10.0
    assert cfg.params["v0"] == pytest.approx(1 / 30)


def test_flags_override_file():
    cfg = parse_config("[run]\nseed = 4\nrtol = 1e-6\n", "sweep-fe", seed=9, tol=1e-9)
    assert cfg.seed == 9
    assert cfg.rtol == 1e-9 and cfg.atol == pytest.approx(1e-11)


@pytest.mark.parametrize(
    "text, field",
    [
        ("[gate-sim]\nomega_zero = 1\n", "omega_zero"),
        ("[gate-sim]\ngamma0 = -0.1\n", "gate-sim.gamma0"),
        ("[gate-sim]\nmode = Resonant\n", "gate-sim.mode"),
        ("[gate-sim]\ntau = abc\n", "gate-sim.tau"),
        ("[sweep-fe]\nkappas = 1, -2\n", "sweep-fe.kappas"),
        ("[protocol-run]\nn_parties = 4\n", "protocol-run.n_parties"),
        ("[nonsense]\n", "nonsense"),
        ("[gate-sim]\ntheta = 1.0\n", "theta and phi"),
    ],
)
def test_validation_messages_name_the_field(text, field):
    command = "protocol-run" if "protocol" in text else "sweep-fe" if "sweep" in text else "gate-sim"
    with pytest.raises(ConfigError, match=field):
        parse_config(text, command)


def test_config_for_other_command_is_rejected():
    with pytest.raises(ConfigError, match=r"no \[gate-sim\]"):
        parse_config("[sweep-fe]\nomega = 0\n", "gate-sim")


def test_unknown_command():
    with pytest.raises(ConfigError):
        parse_config(None, "teleport")


def _value(fld, draw):
    if fld.kind == "int":
        return str(draw(st.integers(2, 9)))
    if fld.kind == "float":
        return repr(draw(st.floats(0.01, 100.0)))
    if fld.kind == "bool":
        return draw(st.sampled_from(["true", "false", "yes", "0"]))
    if fld.kind == "floats":
        xs = draw(st.lists(st.floats(0.0, 3.0), min_size=1, max_size=3))
        return ",".join(repr(x) for x in xs)
    return draw(st.sampled_from(fld.choices))


@st.composite
def section_text(draw, command):
    schema = SCHEMAS[command]
    keys = draw(st.lists(st.sampled_from(sorted(schema)), unique=True, max_size=6))
    lines = [f"[{command}]"]
    for k in keys:
        if k in ("theta", "phi", "betas", "n_parties", "alphas", "axis_thetas", "axis_phis",
                 "target_thetas", "target_phis", "delta_mhz", "delta0", "delta1", "delta2", "v0"):
            continue  # these carry cross-field constraints
        lines.append(f"{k} = {_value(schema[k], draw)}")
    seed = draw(st.integers(0, 2**32))
    return f"[run]\nseed = {seed}\n\n" + "\n".join(lines) + "\n"


@settings(max_examples=60, suppress_health_check=[HealthCheck.too_slow])
@given(st.data())
def test_echo_round_trips(data):
    command = data.draw(st.sampled_from(COMMANDS))
    text = data.draw(section_text(command))
    cfg = parse_config(text, command)
    again = parse_config(cfg.echo(), command)
    assert again == cfg
    assert again.echo() == cfg.echo()


# --- exit codes -----------------------------------------------------------


def test_sweep_csv_row(tmp_path, capsys):
    assert run(tmp_path, "sweep-fe", "[sweep-fe]\nkappas = 1, 2\ngammas = 0.1, 0.2\nomega = 0\n", "--format", "csv") == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "kappa_over_g,gamma_over_g,omega_over_g,F,E"
    assert "2.000000,0.200000,0.000000,0.995380,0.909190" in out


def test_protocol_identity_run(tmp_path, capsys):
    assert run(tmp_path, "protocol-run", "[protocol-run]\nn_parties = 3\nalphas = 0\naxis_thetas = 0\n", "--format", "csv") == 0
    rows = capsys.readouterr().out.splitlines()[1:]
    assert len(rows) == 8
    assert all(r.endswith(",1.000000") for r in rows)


def test_protocol_json_transcripts(tmp_path, capsys):
    assert run(tmp_path, "protocol-run", "[protocol-run]\nn_parties = 5\nrandom = true\n", "--seed", "3") == 0
    doc = json.loads(capsys.readouterr().out)
    (trial,) = doc["trials"]
    assert trial["min_fidelity"] > 1 - 1e-9
    assert len(trial["branches"]) == 32
    first = trial["branches"][0]["events"]
    assert first[0]["actor"] == "Alice"


@pytest.mark.parametrize(
    "text",
    [
        "[gate-sim]\nfoo = 1\n",
        "[gate-sim]\nkappa_c = -1\n",
        "not an ini file",
        "[gate-sim]\nmode = FullDynamical\ndelta_mhz = 0.01\n",
        "[gate-sim]\ndelta0 = 2\ndelta1 = 22\ndelta2 = 22\n",
    ],
)
def test_config_errors_exit_2(tmp_path, text, capsys):
    assert run(tmp_path, "gate-sim", text) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert cli.main(["sweep-fe", "--config", str(tmp_path / "absent.ini")]) == 2


def test_bad_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep-fe", "--format", "xml"])
    assert exc.value.code == 2


def test_numerical_failure_exits_3(tmp_path, monkeypatch, capsys):
    def boom(cfg, fmt):
        raise IntegrationError("dop853: step size becomes too small")

    monkeypatch.setitem(cli._DISPATCH, "gate-sim", boom)
    assert run(tmp_path, "gate-sim") == 3
    assert "numerical failure" in capsys.readouterr().err


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(
    st.sampled_from(["omega0", "tau", "gamma1", "n_points", "noise", "mode", "kappa_cc"]),
    st.text(alphabet="abcxyz-!%", min_size=1, max_size=6),
)
def test_malformed_values_always_exit_2(tmp_path, key, junk):
    assert run(tmp_path, "gate-sim", f"[gate-sim]\n{key} = {junk}\n") == 2


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.text(alphabet="abcdefgh_", min_size=1, max_size=10))
def test_unknown_keys_always_exit_2(tmp_path, key):
    if key in SCHEMAS["sweep-fe"]:
        return
    assert run(tmp_path, "sweep-fe", f"[sweep-fe]\n{key} = 1\n") == 2


# --- outputs --------------------------------------------------------------


def test_out_writes_payload_and_envelope(tmp_path):
    out = tmp_path / "res" / "sweep.csv"
    assert run(tmp_path, "sweep-fe", None, "--out", str(out), "--format", "csv") == 0
    env = json.loads((tmp_path / "res" / "sweep.csv.envelope.json").read_text())
    assert env["payload"] == str(out)
    assert env["version"] == "0.1.0"
    assert env["config"] == parse_config(None, "sweep-fe").echo()
    assert env["wall_time_s"] >= 0
    assert sorted(p.name for p in out.parent.iterdir()) == ["sweep.csv", "sweep.csv.envelope.json"]


def test_envelope_echo_reparses(tmp_path):
    out = tmp_path / "g.json"
    assert run(tmp_path, "gate-sim", "[gate-sim]\nmode = EffectiveResonant\ntheta = 1\nphi = 2\n", "--out", str(out)) == 0
    env = json.loads((tmp_path / "g.json.envelope.json").read_text())
    cfg = parse_config(env["config"], "gate-sim")
    assert cfg.echo() == env["config"]


def test_gate_json_keys(tmp_path, capsys):
    assert run(tmp_path, "gate-sim", "[gate-sim]\nmode = EffectiveResonant\n") == 0
    doc = json.loads(capsys.readouterr().out)
    assert list(doc) == ["T_us", "fidelity", "max_pRR", "mode", "params"]
    assert doc["fidelity"] == pytest.approx(0.998302, abs=2e-6)


def test_gate_csv_trace(tmp_path, capsys):
    assert run(tmp_path, "gate-sim", "[gate-sim]\nmode = EffectiveDynamical\nn_points = 11\n", "--format", "csv") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "t_us,p00,p01,p10,p11,pRR,fidelity"
    assert len(lines) == 12


def test_gate_with_angles_and_betas(tmp_path, capsys):
    text = "[gate-sim]\nmode = EffectiveResonant\nnoise = false\ntheta = 0.7\nphi = 1.9\nbetas = 0.3, 0.4, 0.5, 1, 2, 3\n"
    assert run(tmp_path, "gate-sim", text) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["fidelity"] == pytest.approx(1.0, abs=1e-7)
    assert doc["params"]["theta"] == pytest.approx(0.7)
    assert doc["params"]["phi"] == pytest.approx(1.9)


def test_gate_full_resonant_default(tmp_path, capsys):
    assert run(tmp_path, "gate-sim") == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["mode"] == "FullResonant"
    # regression value of this implementation; the acceptance suite compares against 0.9865
    assert doc["fidelity"] == pytest.approx(0.990523, abs=2e-6)


def test_avg_fidelity_inputs(tmp_path, capsys):
    text = "[avg-fidelity]\nmode = EffectiveResonant\naverage = inputs\nn_polar = 3\nn_phase = 2\nnoise = false\n"
    assert run(tmp_path, "avg-fidelity", text) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["mean_fidelity"] == pytest.approx(1.0, abs=1e-7)
    assert doc["angles"] == pytest.approx([math.pi / 2, math.pi])


def test_avg_fidelity_angles_csv(tmp_path, capsys):
    text = "[avg-fidelity]\nmode = EffectiveDynamical\nn_theta = 2\nn_phi = 2\n"
    assert run(tmp_path, "avg-fidelity", text, "--format", "csv") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "theta,phi,fidelity" and len(lines) == 5


def test_echo_config_flag(tmp_path, capsys):
    assert cli.main(["sweep-fe", "--echo-config"]) == 0
    assert capsys.readouterr().out == parse_config(None, "sweep-fe").echo()


# --- determinism ----------------------------------------------------------


@pytest.mark.parametrize(
    "command, text, fmt",
    [
        ("sweep-fe", "[sweep-fe]\nkappas = 0.5, 1, 2\ngammas = 0.1, 0.2\n", "csv"),
        ("protocol-run", "[protocol-run]\nrandom = true\ntrials = 3\nn_parties = 5\n", "json"),
        ("gate-sim", "[gate-sim]\nmode = EffectiveDynamical\n", "csv"),
    ],
)
def test_repeated_runs_are_byte_identical(tmp_path, command, text, fmt):
    a, b = tmp_path / "a.out", tmp_path / "b.out"
    assert run(tmp_path, command, text, "--out", str(a), "--format", fmt, "--seed", "7") == 0
    assert run(tmp_path, command, text, "--out", str(b), "--format", fmt, "--seed", "7") == 0
    assert a.read_bytes() == b.read_bytes()


def test_seed_changes_random_protocol_payload(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    text = "[protocol-run]\nrandom = true\n"
    run(tmp_path, "protocol-run", text, "--out", str(a), "--seed", "1")
    run(tmp_path, "protocol-run", text, "--out", str(b), "--seed", "2")
    assert a.read_bytes() != b.read_bytes()


def test_worker_cap_does_not_change_sweep(tmp_path, monkeypatch):
    text = "[sweep-fe]\nkappas = 0.5, 1, 2\ngammas = 0.1, 0.2\n"
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    monkeypatch.setenv("CRIO_NUM_WORKERS", "1")
    run(tmp_path, "sweep-fe", text, "--out", str(a), "--format", "csv")
    monkeypatch.setenv("CRIO_NUM_WORKERS", "2")
    run(tmp_path, "sweep-fe", text, "--out", str(b), "--format", "csv")
    assert a.read_bytes() == b.read_bytes()


def test_module_entry_point(tmp_path):
    env = {**os.environ, "CRIO_NUM_WORKERS": "1"}
    res = subprocess.run(
        [sys.executable, "-m", "crio", "sweep-fe", "--format", "csv"], capture_output=True, text=True, env=env
    )
    assert res.returncode == 0
    assert res.stdout.startswith("kappa_over_g,")
