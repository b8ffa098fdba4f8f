import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from relsense.cli import main
from relsense.config import ConfigError, parse_config


def _run(tmp_path, text, command, *extra):
    cfg = tmp_path / "exp.ini"
    cfg.write_text(text)
    out = tmp_path / command
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def _summary(out):
    return json.loads((out / "summary.json").read_text())


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


CHAIN = """
[plant]
type = chain
subsystems = {m}
"""


def test_spectrum_chain(tmp_path):
    code, out = _run(tmp_path, CHAIN.format(m=100), "spectrum")
    assert code == 0
    rows = _rows(out / "spectrum.csv")
    assert rows[0] == ["k", "sigma", "lambda", "noise_variance"]
    assert len(rows) == 101 and rows[1][0] == "1"
    s = _summary(out)
    assert s["zero_modes"] == 1 and s["n_observable"] == 99
    assert s["census_count"] == 6
    assert s["relative_valid"] and s["local_valid"]
    assert (out / "B.coo").exists() and not (out / "geometry.json").exists()


def test_spectrum_hex_zero_modes(tmp_path):
    code, out = _run(tmp_path, "[plant]\ntype = hex_mirror\nrings = 5\n", "spectrum")
    assert code == 0
    assert _summary(out)["zero_modes"] == 4
    assert (out / "geometry.json").exists()


def test_empty_config_exits_2(tmp_path, capsys):
    code, _ = _run(tmp_path, "", "spectrum")
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_key_reports_line(tmp_path, capsys):
    code, _ = _run(tmp_path, "[plant]\ntype = chain\n\nsubsytems = 4\n", "spectrum")
    assert code == 2
    assert "exp.ini:4:" in capsys.readouterr().err


def test_config_errors():
    with pytest.raises(ConfigError, match=":2:"):
        parse_config("[plant]\ntype = torus\n", "x.ini")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[plants]\ntype = chain\n", "x.ini")
    with pytest.raises(ConfigError):
        parse_config("[plant]\ntype = chain\ntype = ring\n", "x.ini")
    with pytest.raises(ConfigError, match=":3:"):
        parse_config("[simulation]\n# a comment\ndt_s = fast\n", "x.ini")
    cfg = parse_config("[controller]\nrolloff_hz = none\n", "x.ini")
    assert cfg["controller"]["rolloff_hz"] is None
    assert cfg["plant"]["type"] == "chain"


def test_worstcase_zero_eps_identical_poles(tmp_path):
    code, out = _run(tmp_path, CHAIN.format(m=6) + "[uncertainty]\neps = 0\n", "worstcase")
    assert code == 0
    assert _rows(out / "poles_nominal.csv") == _rows(out / "poles_delta.csv")
    assert _summary(out)["mode"] == 5


HEX_WORST = """
[plant]
type = hex_mirror
rings = 4
[uncertainty]
eps = {eps}
[controller]
kind = {kind}
rolloff_hz = none
"""


def _hex_eps():
    from relsense.robustness import phi_b_value
    from relsense.sensing_model import build_hex_mirror
    from relsense.spectral import decompose

    m = build_hex_mirror(4)[1]
    d = decompose(m)
    return 2.0 / -phi_b_value(m, d, d.n_observable - 1, 1.0)


def test_worstcase_pure_integrator_exits_3(tmp_path):
    code, out = _run(tmp_path, HEX_WORST.format(eps=_hex_eps(), kind="integral"), "worstcase")
    assert code == 3
    s = _summary(out)
    assert s["destabilized"] and s["max_real_delta"] > 0 and s["phi_b"] < -1
    assert _rows(out / "phi_sweep.csv")[0] == ["b", "lambda_b", "phi_b"]
    assert (out / "delta.coo").read_text().strip()


def test_worstcase_tuned_leakage_exits_0(tmp_path):
    code, out = _run(tmp_path, HEX_WORST.format(eps=_hex_eps(), kind="modal"), "worstcase")
    assert code == 0
    assert _summary(out)["below_minus_p0"]


def test_worstcase_invalid_mode(tmp_path):
    code, _ = _run(tmp_path, CHAIN.format(m=4), "worstcase", "--mode", "4")
    assert code == 2


LOWEST = """
[uncertainty]
eps = {eps}
[nyquist]
stencil = chain
lattice_sizes = 100
loop_gain_rad_per_s = {gain}
points_per_decade = 64
"""


def test_nyquist_lowest_frequency(tmp_path):
    code, out = _run(tmp_path, LOWEST.format(eps=0.05, gain=0), "nyquist")
    assert code == 0
    rows = _rows(out / "sweep.csv")
    assert rows[0] == ["xi_1", "xi_2", "lambda_xi", "abs_phi_bar", "theta", "zone_crosses_imag_axis"]
    first = rows[2]
    assert float(first[3]) == pytest.approx(1.591, abs=1e-3)
    assert first[5] == "1"
    half = next(r for r in rows[1:] if float(r[0]) == pytest.approx(np.pi))
    assert float(half[4]) == pytest.approx(0.0, abs=1e-12)
    assert _summary(out)["circulant_ratio"] == pytest.approx(2.0)
    zone = json.loads((out / "zone_lowest.json").read_text())
    assert zone["crosses_imag_axis"]


def test_nyquist_zero_eps(tmp_path):
    code, out = _run(tmp_path, LOWEST.format(eps=0.0, gain=0), "nyquist")
    assert code == 0
    rows = _rows(out / "sweep.csv")[2:]
    assert all(float(r[4]) == 0.0 and r[5] == "0" for r in rows)
    assert _summary(out)["n_crossing"] == 1  # the zero frequency row


def test_nyquist_clearance_violation(tmp_path):
    code, out = _run(tmp_path, LOWEST.format(eps=0.05, gain=1.0), "nyquist")
    assert code == 3
    assert _summary(out)["violation"]
    assert _rows(out / "clearance.csv")[0][:3] == ["xi_1", "xi_2", "min_distance"]


SIM = """
[plant]
type = chain
subsystems = 4
[controller]
kind = {kind}
uniform_gain_rad_per_s = 2.0
rolloff_hz = none
[simulation]
dt_s = 0.01
duration_s = 60
segment_s = 10
burn_in_s = 5
trace_format = {fmt}
"""


def test_simulate_controller_off_ratio_is_one(tmp_path):
    code, out = _run(tmp_path, SIM.format(kind="off", fmt="none"), "simulate")
    assert code == 0
    rows = _rows(out / "ratio_mode1.csv")
    assert rows[0] == ["freq_hz", "ratio", "unreliable"]
    ok = [float(r[1]) for r in rows[1:] if r[2] == "0"]
    assert np.allclose(ok, 1.0, atol=1e-9)
    s = _summary(out)
    assert not s["diverged"] and s["rms_open"] == pytest.approx(s["rms_closed"])
    assert (out / "psd_open_mode1.csv").exists() and (out / "psd_closed_mode3.csv").exists()
    assert not (out / "trace_open.bin").exists()


def test_simulate_is_deterministic(tmp_path):
    text = SIM.format(kind="uniform", fmt="binary")
    for name in "abc":
        (tmp_path / name).mkdir()
    _, a = _run(tmp_path / "a", text, "simulate")
    _, b = _run(tmp_path / "b", text, "simulate")
    assert (a / "trace_closed.bin").read_bytes() == (b / "trace_closed.bin").read_bytes()
    assert (a / "rms.csv").read_text() == (b / "rms.csv").read_text()
    _, c = _run(tmp_path / "c", text, "simulate", "--seed", "99")
    assert (a / "trace_closed.bin").read_bytes() != (c / "trace_closed.bin").read_bytes()
    assert _summary(c)["seed"] == 99


def test_simulate_divergence_exits_4(tmp_path):
    # a negative gain is a positive-feedback integrator
    text = SIM.format(kind="uniform", fmt="none").replace("= 2.0", "= -2.0")
    code, out = _run(tmp_path, text, "simulate")
    assert code == 4
    assert _summary(out)["diverged"]


def test_simulate_step_too_large(tmp_path):
    text = SIM.format(kind="uniform", fmt="none").replace("= 2.0", "= 200.0")
    code, _ = _run(tmp_path, text, "simulate")
    assert code == 2


def test_tune_defaults_monotone(tmp_path):
    code, out = _run(tmp_path, "[plant]\ntype = hex_mirror\nrings = 3\n", "tune")
    assert code == 0
    rows = _rows(out / "tuning.csv")
    assert rows[0] == ["k", "lambda", "K_I", "A_I", "phi_k", "dc_sensitivity"]
    n0 = _summary(out)["n_observable"]
    dc = np.array([float(r[5]) for r in rows[1:n0 + 1]])
    # per-mode phi_k makes the curve ragged; its decile means still rise toward low lambda
    deciles = [c.mean() for c in np.array_split(dc, 10)]
    assert np.all(np.diff(deciles) >= -1e-12)
    assert dc[0] == 0.0 and deciles[-1] > deciles[0]
    assert json.loads((out / "controller.json").read_text())


def test_tune_zero_eps_no_leakage(tmp_path):
    code, out = _run(tmp_path, CHAIN.format(m=20) + "[uncertainty]\neps = 0\n", "tune")
    assert code == 0
    for r in _rows(out / "tuning.csv")[1:]:
        lam, K, A = float(r[1]), float(r[2]), float(r[3])
        if K * np.sqrt(lam) >= 0.2 * np.pi:
            assert A == 0.0


def test_tune_doubled_eps_never_improves(tmp_path):
    dcs = []
    for eps in (0.01, 0.02):
        (tmp_path / str(eps)).mkdir()
        _, out = _run(tmp_path / str(eps), CHAIN.format(m=30) + f"[uncertainty]\neps = {eps}\n", "tune")
        dcs.append(np.array([float(r[5]) for r in _rows(out / "tuning.csv")[1:]]))
    assert np.all(dcs[1] >= dcs[0] - 1e-12)


def test_tune_ring_ltsi(tmp_path):
    code, out = _run(tmp_path, "[plant]\ntype = ring\nsubsystems = 24\n[controller]\nltsi_fit = true\n", "tune")
    assert code == 0
    assert _summary(out)["ltsi"]["verify_stable"]
    code, _ = _run(tmp_path, CHAIN.format(m=8) + "[controller]\nltsi_fit = true\n", "tune")
    assert code == 2


def test_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("RELSENSE_THREADS", "1")
    assert _run(tmp_path, CHAIN.format(m=5), "spectrum")[0] == 0
    monkeypatch.setenv("RELSENSE_THREADS", "zero")
    assert _run(tmp_path, CHAIN.format(m=5), "spectrum")[0] == 2


def test_console_entry_point(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(CHAIN.format(m=3))
    env = dict(os.environ, RELSENSE_THREADS="1")
    res = subprocess.run([sys.executable, "-m", "relsense.cli", "spectrum", "--config", str(cfg),
                          "--out", str(tmp_path / "o")], capture_output=True, env=env)
    assert res.returncode == 0
    res = subprocess.run([sys.executable, "-m", "relsense.cli", "spectrum", "--config", str(tmp_path / "missing.ini"),
                          "--out", str(tmp_path / "o")], capture_output=True, env=env)
    assert res.returncode == 2
