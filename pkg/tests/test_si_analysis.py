import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import cycle_eigenvalues, noise_floor_count as nfc_oracle, phi_bar_1d
from relsense.plant_sim import PlantModel
from relsense.sensing_model import build_hex_mirror
from relsense.si_analysis import (
    EstimationError,
    ExclusionZone,
    GridError,
    LtsiController,
    SIStencil,
    UndefinedModeError,
    circulant_check,
    exclusion_arc,
    lambda_xi,
    local_estimator,
    ltsi_eval,
    ltsi_fit,
    ltsi_verify,
    margin_zone,
    noise_floor_count,
    nyquist_clearance,
    phi_bar,
    save_zone_json,
    si_dc_sensitivity,
    write_sweep_csv,
)


def test_stencil_validation():
    with pytest.raises(ValueError):
        SIStencil((10,), [[1], [-1]])
    with pytest.raises(ValueError):
        SIStencil((10,), [[0]])
    with pytest.raises(ValueError):
        SIStencil((10, 10), [[1]])
    s = SIStencil.hexagonal(6)
    assert s.n_sensors_per_node == 6 and s.rho_prime == 1 and s.grid().shape == (36, 2)


def test_lambda_xi_values():
    s = SIStencil.chain(8)
    assert lambda_xi(s, [0.0]) == 0.0
    assert lambda_xi(s, [np.pi]) == pytest.approx(2.0)
    with pytest.raises(GridError):
        lambda_xi(s, [0.1])


def test_lambda_xi_small_angle_scaling():
    vals = [lambda_xi(SIStencil.chain(M), [2 * np.pi / M]) * M**2 for M in (200, 400, 800)]
    assert np.allclose(vals, 2 * np.pi**2, rtol=1e-3)


def test_circulant_factor_two():
    s = SIStencil.chain(12)
    chk = circulant_check(s)
    assert chk.ratio == pytest.approx(2.0)
    assert chk.max_ratio_spread < 1e-12
    assert np.allclose(chk.circulant, cycle_eigenvalues(12), atol=1e-12)
    assert circulant_check(SIStencil.hexagonal(6)).ratio == pytest.approx(2.0)


def test_noise_floor_count_examples():
    s = SIStencil.chain(100)
    assert noise_floor_count(0.5, s) == 15 == nfc_oracle(0.5, [100], 2, 1, 1)
    assert noise_floor_count(1e-3, s) == 1
    with pytest.raises(ValueError):
        noise_floor_count(0.0, s)


@given(st.floats(0.01, 3.0), st.integers(4, 300), st.integers(4, 300))
def test_noise_floor_count_monotone_and_oracle(c, m1, m2):
    lo, hi = sorted((m1, m2))
    a = noise_floor_count(c, SIStencil.hexagonal(lo, lo))
    b = noise_floor_count(c, SIStencil.hexagonal(hi, hi))
    assert a <= b
    assert a == nfc_oracle(c, [lo, lo], 6, 2, 1)


@given(st.floats(0.05, 1.0), st.integers(8, 60), st.booleans())
def test_noise_floor_count_is_a_lower_bound(c, m, hexagonal):
    s = SIStencil.hexagonal(m) if hexagonal else SIStencil.chain(m)
    lam = lambda_xi(s, s.grid(), check=False)
    # noise on a mode is amplified by 1 / lambda_xi, so lambda_xi <= c^2 is the noisy set
    assert np.count_nonzero(lam <= c * c * (1 + 1e-12)) >= noise_floor_count(c, s)


def test_phi_bar_closed_form():
    s = SIStencil.chain(100)
    xi = 2 * np.pi / 100
    pb = phi_bar(s, 0.05, [xi])
    assert pb.real == 0.0
    assert pb == pytest.approx(phi_bar_1d(0.05, xi), rel=1e-12)
    assert abs(pb) == pytest.approx(1.591, abs=1e-3)
    assert abs(phi_bar(s, 0.05, [np.pi])) < 1e-15
    with pytest.raises(UndefinedModeError):
        phi_bar(s, 0.05, [0.0])


@given(st.integers(1, 49))
def test_phi_bar_purely_imaginary_hex(k):
    s = SIStencil.hexagonal(50)
    pb = phi_bar(s, 0.02, [2 * np.pi * k / 50, 2 * np.pi * (k % 7) / 50])
    assert pb.real == 0.0


def test_phi_bar_grows_as_xi_vanishes():
    mags = [abs(phi_bar(SIStencil.chain(M), 0.05, [2 * np.pi / M])) for M in (10, 100, 1000, 10000)]
    assert np.all(np.diff(mags) > 0)


def test_arc_geometry():
    assert exclusion_arc(0.0).endpoints() == (-1.0, -1.0)
    z = exclusion_arc(1j)
    assert np.allclose(z.endpoints(), [-0.5 + 0.5j, -0.5 - 0.5j])
    assert z.theta == pytest.approx(np.pi / 2)
    near = exclusion_arc(1e8)
    assert np.abs(np.array(near.endpoints())).max() < 1e-7


@given(st.floats(0.0, 1e6))
def test_arc_points_on_circle(t):
    z = ExclusionZone(t)
    pts = np.concatenate([z.arc_points(33), z.endpoints()])
    assert np.abs(np.abs(pts + 0.5) - 0.5).max() < 1e-12
    assert z.contains(pts, tol=1e-9).all()


def test_degenerate_zone_is_point():
    z = margin_zone(exclusion_arc(0.0), 1.0, 0.0)
    assert z.contains([-1.0]).all()
    assert not z.contains([-1.001, -0.999, -1 + 1e-3j]).any()


def test_sector_zone():
    z = margin_zone(exclusion_arc(0.0), 2.0, np.pi / 4)
    inside = [-1.0, -0.5, 0.75 * np.exp(1j * (np.pi + 0.7))]
    outside = [-0.49, -1.01, 0.75 * np.exp(1j * (np.pi + 0.8)), 0.0]
    assert z.contains(inside).all()
    assert not z.contains(outside).any()
    assert not z.crosses_imag_axis()


def test_lowest_frequency_zone_crosses_axis():
    pb = phi_bar(SIStencil.chain(100), 0.05, [2 * np.pi / 100])
    assert margin_zone(exclusion_arc(pb), 2.0, np.pi / 4).crosses_imag_axis()
    assert not exclusion_arc(pb).crosses_imag_axis()


def test_distance_brute_force():
    z = ExclusionZone(1.2, 1.5, 0.3)
    u = np.linspace(-z.u_max, z.u_max, 200)
    a = np.linspace(-z.phi_m, z.phi_m, 120)
    r = np.linspace(1 / z.g_m, 1, 60)
    U, A, R = np.meshgrid(u, a, r, indexing="ij")
    cloud = (R * np.cos(U) * np.exp(1j * (np.pi + A - U))).ravel()
    pts = np.random.default_rng(1).normal(size=50) + 1j * np.random.default_rng(2).normal(size=50)
    brute = np.array([np.abs(cloud - p).min() for p in pts])
    d = z.distance(pts)
    assert np.all(d <= brute + 1e-12)
    assert np.all(brute - d < 0.02)


def test_clearance_integrator_line():
    w = np.logspace(-3, 3, 5000)
    cl = nyquist_clearance(3.0 / (1j * w), margin_zone(exclusion_arc(0.0), 1.0, 0.0))
    assert cl.min_distance == pytest.approx(1.0, abs=1e-5)
    assert not cl.violation


def test_clearance_violation_through_minus_half():
    zone = margin_zone(exclusion_arc(1j), 2.0, 0.0)
    curve = np.linspace(-0.5 - 1j, -0.5 + 1j, 201)
    assert nyquist_clearance(curve, zone).violation
    # the bare arc does not contain -0.5
    assert not exclusion_arc(1j).contains([-0.5]).any()


def test_clearance_winding_and_empty():
    circle = -0.5 + 0.8 * np.exp(1j * np.linspace(0, 2 * np.pi, 400))
    cl = nyquist_clearance(circle, exclusion_arc(0.3j), mirror=False)
    assert cl.winding == (1, 1) and cl.encircles
    with pytest.raises(ValueError):
        nyquist_clearance([], exclusion_arc(0.3j))


def test_ltsi_eval_examples():
    k = np.arange(1.0, 5.0)
    c = LtsiController(k, np.zeros(4))
    K, A = ltsi_eval(c, [0.0, 0.0])
    assert K[0, 0] == pytest.approx(10.0) and A[0, 0] == 0
    K, _ = ltsi_eval(c, [np.pi, np.pi])
    assert K[0, 0] == pytest.approx(1 - 2 - 3 + 4)
    flat = LtsiController([2.0, 0, 0, 0], [0.0] * 4)
    assert all(ltsi_eval(flat, xi)[0][0, 0] == 2.0 for xi in SIStencil.hexagonal(4).grid())
    with pytest.raises(ValueError):
        ltsi_eval(c, [0.3])


def test_ltsi_fit_examples():
    s = SIStencil.hexagonal(8)
    grid = s.grid()
    fit = ltsi_fit(grid, np.full(len(grid), 3.0), np.full(len(grid), 0.5))
    assert fit.residual_k < 1e-12 and fit.residual_a < 1e-12
    assert fit.controller.k[0, 0, 0] == pytest.approx(3.0)
    fit = ltsi_fit(grid, np.cos(grid[:, 0]), np.zeros(len(grid)))
    assert fit.residual_k < 1e-12 and fit.controller.k[1, 0, 0] == pytest.approx(1.0)
    fit = ltsi_fit(grid, np.cos(2 * grid[:, 0]), np.zeros(len(grid)))
    assert fit.residual_k > 0.1
    with pytest.raises(ValueError):
        ltsi_fit(SIStencil.hexagonal(3).grid(), np.ones(9), np.ones(9))


def test_ltsi_fit_clamps_negative_leakage():
    s = SIStencil.chain(16)
    grid = s.grid()
    fit = ltsi_fit(grid, np.ones(16), np.cos(grid[:, 0]))
    assert fit.shift == pytest.approx(1.0)
    A = [ltsi_eval(fit.controller, xi)[1][0, 0] for xi in grid]
    assert min(A) >= -1e-12
    assert fit.residual_a_clamped > fit.residual_a


def test_ltsi_zero_frequency_leakage_nonnegative():
    c = LtsiController([1.0, 0.5, 0.2, 0.1], [0.3, -0.1, 0.0, 0.0])
    assert ltsi_eval(c, [0.0, 0.0])[1][0, 0] >= 0


def test_ltsi_verify_detects_instability():
    s = SIStencil.chain(32)
    good = LtsiController([1.0, 0, 0, 0], [0.7, 0, 0, 0], p=40.0)
    assert ltsi_verify(good, s, eps=0.025).stable
    bad = LtsiController([1.0, 0, 0, 0], [-0.5, 0, 0, 0])
    res = ltsi_verify(bad, s, eps=0.025)
    assert not res.stable and res.max_real > 0
    assert ltsi_verify(good, s, plant=PlantModel.mirror(dof=1)).max_real < 0


def test_local_estimator(tmp_path):
    _, m, g = build_hex_mirror(4)
    centre = int(np.argmin(np.linalg.norm(g.centers, axis=1)))
    est = local_estimator(g, centre)
    assert est.matrix.shape == (3, 12)
    y = np.zeros(m.n_outputs)
    y[3 * centre:3 * centre + 3] = 1.0
    assert np.allclose(est.estimate(m.B @ y), 1.0)
    assert np.allclose(est.estimate(m.B @ np.ones(m.n_outputs)), 0.0)
    corner = int(np.argmax(np.linalg.norm(g.centers, axis=1)))
    assert local_estimator(g, corner).matrix.shape[1] < 12


def test_local_estimator_underestimates_smooth_piston():
    _, m, g = build_hex_mirror(6)
    centre = int(np.argmin(np.linalg.norm(g.centers, axis=1)))
    height = np.cos(np.linalg.norm(g.centers, axis=1) / (g.centers.max() * 2))
    y = np.repeat(height, 3)
    est = local_estimator(g, centre).estimate(m.B @ y)
    assert abs(est.mean()) < 0.1 * abs(height[centre])


def test_local_estimator_rejects_few_sensors():
    _, _, g = build_hex_mirror(1)
    with pytest.raises(EstimationError):
        local_estimator(g, 0)


def test_dc_sensitivity_si():
    assert si_dc_sensitivity(np.inf).infinite_rejection
    assert si_dc_sensitivity(np.inf).norm == 0.0
    assert si_dc_sensitivity(9.0).S[0, 0] == pytest.approx(0.1)
    assert si_dc_sensitivity(0.0017 * 5.7 / 0.7).norm == pytest.approx(0.986, abs=1e-3)
    with pytest.raises(ValueError):
        si_dc_sensitivity(-1.0)


def test_sweep_outputs(tmp_path):
    s = SIStencil.chain(8)
    write_sweep_csv(s, 0.0, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "xi_1,xi_2,lambda_xi,abs_phi_bar,theta,zone_crosses_imag_axis"
    rows = [l.split(",") for l in lines[2:]]
    assert all(float(r[4]) == 0.0 and r[5] == "0" for r in rows)
    save_zone_json(margin_zone(exclusion_arc(0.5j), 2.0, 0.1), tmp_path / "z.json")
    data = json.loads((tmp_path / "z.json").read_text())
    assert data["center"] == [-0.5, 0.0] and data["gain_range"] == [1.0, 2.0]
