"""``relsense <command> --config <path> --out <dir> [--seed N]``.

Exit codes: 0 ok, 2 configuration error, 3 robustness violation detected,
4 simulation divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import controller as ctl
from . import plant_sim as ps
from . import robustness as rb
from . import si_analysis as si
from . import spectral as spc
from .config import ConfigError, ExperimentConfig, load_config
from .sensing_model import (
    build_chain,
    build_hex_mirror,
    build_ring,
    validate_local,
    validate_relative,
    write_coo,
)

EXIT_OK, EXIT_CONFIG, EXIT_ROBUSTNESS, EXIT_DIVERGED = 0, 2, 3, 4
POLE_TOL = 1e-9


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _finite(x):
    x = float(x)
    return x if np.isfinite(x) else str(x)


def build_system(cfg: ExperimentConfig):
    """Measurement map, optional hex geometry and locality range from ``[plant]``."""
    p = cfg["plant"]
    try:
        if p["type"] == "chain":
            m = build_chain(p["subsystems"])
            return m, None, 1.5
        if p["type"] == "ring":
            m = build_ring(p["subsystems"])
            return m, None, 1.5
        _, m, geom = build_hex_mirror(p["rings"], p["hole_rings"], p["edge_length_m"],
                                      p["sensor_offset_fraction"])
        return m, geom, 1.3
    except ValueError as exc:
        raise ConfigError(f"[plant]: {exc}") from None


def build_plant(cfg: ExperimentConfig, mmap) -> ps.PlantModel:
    p = cfg["plant"]
    try:
        if p["dynamics"] == "static":
            return ps.PlantModel.static(p["static_gain"])
        if p["dynamics"] == "vehicle":
            return ps.PlantModel.vehicle(p["mass_kg"], p["drag_n_s_per_m"])
        return ps.PlantModel.mirror(p["resonance_hz"], p["damping_ratio"], p["stiffness_n_per_m"],
                                    mmap.block_size)
    except ValueError as exc:
        raise ConfigError(f"[plant]: {exc}") from None


def _mode_list(text: str, n0: int, section: str) -> np.ndarray | None:
    if text.strip().lower() in ("all", "auto"):
        return None
    try:
        idx = np.array([int(v) for v in text.replace(",", " ").split()], dtype=int)
    except ValueError:
        raise ConfigError(f"[{section}]: modes must be 'all' or 1-based indices") from None
    if idx.size == 0 or idx.min() < 1 or idx.max() > n0:
        raise ConfigError(f"[{section}]: mode indices must lie in 1..{n0}")
    return idx - 1


def tuning_config(cfg: ExperimentConfig) -> ctl.TuningConfig:
    c = cfg["controller"]
    roll = c["rolloff_hz"]
    try:
        return ctl.TuningConfig(c["k0_rad_per_s"], c["k1_rad_per_s"], c["p0_hz"] * ctl.HZ,
                                cfg["uncertainty"]["eps"], None if roll is None else roll * ctl.HZ)
    except ValueError as exc:
        raise ConfigError(f"[controller]: {exc}") from None


def build_controller(cfg: ExperimentConfig, mmap, decomp) -> ctl.ModalController:
    c = cfg["controller"]
    tc = tuning_config(cfg)
    n0 = decomp.n_observable
    if c["kind"] == "modal":
        phis = rb.worst_case_phis(mmap, decomp, tc.eps)
        out = ctl.tune_modal(decomp, tc, phis)
    elif c["kind"] == "uniform":
        out = ctl.uniform_gain(decomp, c["uniform_gain_rad_per_s"], tc.p)
    else:
        K = np.zeros(decomp.n_outputs)
        if c["kind"] == "integral":
            K[:n0] = np.minimum(tc.k0 / decomp.sigma[:n0], tc.k1)
        out = ctl.ModalController(K, np.zeros_like(K), tc.p, decomp)
    keep = _mode_list(c["modes"], n0, "controller")
    if keep is not None:
        mask = np.zeros(decomp.n_outputs, dtype=bool)
        mask[keep] = True
        out = ctl.ModalController(np.where(mask, out.K_I, 0.0), np.where(mask, out.A_I, 0.0),
                                  out.p, decomp, out.phi)
    return out


def cmd_spectrum(cfg, out: Path, args) -> int:
    mmap, geom, rho = build_system(cfg)
    decomp = spc.decompose(mmap, cfg["plant"]["rank_tol"])
    spc.write_spectrum_csv(decomp, out / "spectrum.csv", cfg["simulation"]["noise_per_sqrt_hz"])
    write_coo(mmap.B, out / "B.coo")
    if geom is not None:
        geom.save_json(out / "geometry.json")
    census = spc.small_eigen_census(decomp, 0.01)
    summary = {
        "map": mmap.name,
        "n_sensors": mmap.n_sensors,
        "n_outputs": mmap.n_outputs,
        "n_observable": decomp.n_observable,
        "zero_modes": census.zero_count,
        "census_threshold": census.threshold,
        "census_count": census.count,
        "sigma_1": float(decomp.sigma[0]),
        "relative_valid": bool(validate_relative(mmap)),
        "local_valid": bool(validate_local(mmap, rho=rho)),
    }
    _write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_worstcase(cfg, out: Path, args) -> int:
    mmap, _, _ = build_system(cfg)
    decomp = spc.decompose(mmap, cfg["plant"]["rank_tol"])
    n0 = decomp.n_observable
    b = args.mode if args.mode is not None else cfg["worstcase"]["mode"] or n0
    if not 1 <= b <= n0:
        raise ConfigError(f"mode {b} is not observable: choose 1..{n0}")
    eps = cfg["uncertainty"]["eps"]
    plant = build_plant(cfg, mmap)
    controller = build_controller(cfg, mmap, decomp)
    delta = rb.worst_case_delta(mmap, decomp, b - 1, eps)
    write_coo(delta, out / "delta.coo")
    nominal = rb.closed_loop_poles(plant, controller, mmap)
    perturbed = rb.closed_loop_poles(plant, controller, mmap, delta)
    rb.write_poles_csv(nominal, out / "poles_nominal.csv")
    rb.write_poles_csv(perturbed, out / "poles_delta.csv")
    rb.write_phi_sweep_csv(mmap, decomp, eps, out / "phi_sweep.csv")
    top = float(perturbed[0].real) if len(perturbed) else -np.inf
    destabilized = top > POLE_TOL
    p0 = tuning_config(cfg).p0
    _write_json(out / "summary.json", {
        "mode": b,
        "eps": eps,
        "phi_b": rb.phi_b_value(mmap, decomp, b - 1, eps),
        "max_real_nominal": _finite(nominal[0].real) if len(nominal) else None,
        "max_real_delta": _finite(top),
        "p0_rad_per_s": p0,
        "below_minus_p0": bool(top <= -p0 * (1 - 1e-6)),
        "destabilized": destabilized,
    })
    return EXIT_ROBUSTNESS if destabilized else EXIT_OK


def cmd_nyquist(cfg, out: Path, args) -> int:
    n = cfg["nyquist"]
    sizes = n["lattice_sizes"]
    try:
        stencil = si.SIStencil.chain(sizes[0]) if n["stencil"] == "chain" else si.SIStencil.hexagonal(*sizes[:2])
        if len(sizes) != stencil.dimension:
            raise ValueError(f"{n['stencil']} stencil needs {stencil.dimension} lattice sizes")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[nyquist]: {exc}") from None
    eps = cfg["uncertainty"]["eps"]
    g_m, phi_m = n["gain_margin"], n["phase_margin_rad"]
    si.write_sweep_csv(stencil, eps, out / "sweep.csv", g_m, phi_m)

    rows = list(si.sweep_rows(stencil, eps, g_m, phi_m))
    first = rows[1] if len(rows) > 1 else rows[0]
    si.save_zone_json(si.ExclusionZone(first[2], g_m, phi_m), out / "zone_lowest.json")
    summary = {
        "eps": eps,
        "gain_margin": g_m,
        "phase_margin_rad": phi_m,
        "n_frequencies": len(rows),
        "n_crossing": int(sum(r[4] for r in rows)),
        "circulant_ratio": si.circulant_check(stencil).ratio if np.prod(sizes) <= 4096 else None,
    }

    violation = False
    if n["loop_gain_rad_per_s"] > 0:
        decades = np.log10(n["omega_max_rad_per_s"] / n["omega_min_rad_per_s"])
        omega = np.logspace(np.log10(n["omega_min_rad_per_s"]), np.log10(n["omega_max_rad_per_s"]),
                            int(decades * n["points_per_decade"]) + 1)
        s = 1j * omega
        # single-DOF plant: the loop of one spatial frequency
        plant = build_plant(cfg, build_chain(2))
        roll = tuning_config(cfg).p
        C = n["loop_gain_rad_per_s"] / (s + n["leakage_rad_per_s"])
        if roll is not None:
            C = C / (s / roll + 1) ** 2
        loop = plant.scalar_tf(s) * C
        with open(out / "clearance.csv", "w") as fh:
            fh.write("xi_1,xi_2,min_distance,violation,winding_upper,winding_lower\n")
            worst = np.inf
            for xi, lam, ab, _, _ in rows:
                if lam <= 0 or not np.isfinite(ab):
                    continue
                cl = si.nyquist_clearance(loop, si.ExclusionZone(ab, g_m, phi_m))
                worst = min(worst, cl.min_distance)
                violation |= cl.violation
                x2 = repr(float(xi[1])) if len(xi) > 1 else ""
                fh.write(f"{float(xi[0])!r},{x2},{cl.min_distance!r},{int(cl.violation)},"
                         f"{cl.winding[0]},{cl.winding[1]}\n")
        summary.update({"omega_points": len(omega), "omega_range_rad_per_s":
                        [n["omega_min_rad_per_s"], n["omega_max_rad_per_s"]],
                        "min_clearance": _finite(worst), "violation": bool(violation)})
    _write_json(out / "summary.json", summary)
    return EXIT_ROBUSTNESS if violation else EXIT_OK


def _report_modes(text: str, decomp) -> np.ndarray:
    n0 = decomp.n_observable
    picked = _mode_list(text, n0, "simulation")
    if picked is None:
        return np.unique([0, n0 - 1])
    return picked


def cmd_simulate(cfg, out: Path, args) -> int:
    sim = cfg["simulation"]
    mmap, _, _ = build_system(cfg)
    decomp = spc.decompose(mmap, cfg["plant"]["rank_tol"])
    plant = build_plant(cfg, mmap)
    controller = build_controller(cfg, mmap, decomp)
    seed = args.seed if args.seed is not None else sim["seed"]
    dist = ps.DisturbanceModel(sim["static_amplitude_m"], sim["wind_rms"], sim["wind_cutoff_hz"],
                               sim["correlation_length_pitch"])
    dt, T = sim["dt_s"], sim["duration_s"]
    runs = {}
    try:
        for name, c in (("open", None), ("closed", controller)):
            system = ps.assemble_closed_loop(plant, c, mmap)
            runs[name] = ps.simulate(system, dist, sim["noise_per_sqrt_hz"], dt, T, seed)
    except ValueError as exc:
        raise ConfigError(f"[simulation]: {exc}") from None
    fmt = sim["trace_format"]
    for name, tr in runs.items():
        if fmt == "binary":
            ps.write_trace_binary(tr, out / f"trace_{name}.bin")
        elif fmt == "csv":
            ps.write_trace_csv(tr, out / f"trace_{name}.csv")

    diverged = runs["closed"].diverged or runs["open"].diverged
    burn = int(round(sim["burn_in_s"] / dt))
    summary = {"seed": seed, "dt_s": dt, "duration_s": T, "diverged": diverged,
               "n_observable": decomp.n_observable}
    if not diverged:
        Yo, Yc = decomp.modal(runs["open"].y), decomp.modal(runs["closed"].y)
        with open(out / "rms.csv", "w") as fh:
            fh.write("k,lambda,rms_open,rms_closed\n")
            for k in range(decomp.n_outputs):
                fh.write(f"{k + 1},{float(decomp.lam[k])!r},{ps.rms_metric(Yo[:, k], start=burn)!r},"
                         f"{ps.rms_metric(Yc[:, k], start=burn)!r}\n")
        seg = int(round(sim["segment_s"] / dt))
        n_avg = None
        try:
            for k in _report_modes(sim["report_modes"], decomp):
                for name, Y in (("open", Yo), ("closed", Yc)):
                    f, P, n_avg = ps.psd(Y[burn:, k], dt, seg, sim["overlap_fraction"])
                    ps.write_psd_csv(f, P, out / f"psd_{name}_mode{k + 1}.csv")
                r = ps.rejection_ratio(runs["closed"], runs["open"], decomp.Q[:, k], seg, sim["overlap_fraction"])
                with open(out / f"ratio_mode{k + 1}.csv", "w") as fh:
                    fh.write("freq_hz,ratio,unreliable\n")
                    for fr, v, bad in zip(r.freq, r.ratio, r.unreliable):
                        fh.write(f"{float(fr)!r},{float(v)!r},{int(bad)}\n")
        except ValueError as exc:
            raise ConfigError(f"[simulation]: {exc}") from None
        summary.update({
            "welch_averages": n_avg,
            "rms_open": ps.rms_metric(Yo[:, :decomp.n_observable], start=burn),
            "rms_closed": ps.rms_metric(Yc[:, :decomp.n_observable], start=burn),
        })
    _write_json(out / "summary.json", summary)
    return EXIT_DIVERGED if diverged else EXIT_OK


def _ltsi_for_ring(cfg, decomp, mmap) -> dict:
    """Fit the cosine-series controller to the modal schedule on a ring lattice."""
    if cfg["plant"]["type"] != "ring":
        raise ConfigError("[controller]: ltsi_fit needs a ring plant (periodic lattice)")
    tc = tuning_config(cfg)
    stencil = si.SIStencil.chain(mmap.n_subsystems)
    grid = stencil.grid()
    ratio = si.circulant_check(stencil).ratio
    lam = ratio * si.lambda_xi(stencil, grid, check=False)
    s = np.sqrt(lam)
    K = np.where(s > 0, np.minimum(tc.k0 / np.where(s > 0, s, 1), tc.k1), tc.k1)
    absphi = np.array([abs(si.phi_bar(stencil, cfg["controller"]["ltsi_eps"], x, check=False)) if l > 0 else 0.0
                       for x, l in zip(grid, lam)])
    A = np.maximum(0.0, tc.p0 - K * s * (1 - absphi))
    fit = si.ltsi_fit(grid, K, A, tc.p)
    check = si.ltsi_verify(fit.controller, stencil, cfg["controller"]["ltsi_eps"])
    return {
        "controller": fit.controller.to_json(),
        "residual_k": fit.residual_k,
        "residual_a": fit.residual_a,
        "residual_a_clamped": fit.residual_a_clamped,
        "leakage_shift": fit.shift,
        "verify_max_real": check.max_real,
        "verify_stable": check.stable,
    }


def cmd_tune(cfg, out: Path, args) -> int:
    mmap, _, _ = build_system(cfg)
    decomp = spc.decompose(mmap, cfg["plant"]["rank_tol"])
    controller = build_controller(cfg, mmap, decomp)
    controller.save_json(out / "controller.json")
    ctl.write_tuning_csv(controller, out / "tuning.csv")
    summary = {
        "kind": cfg["controller"]["kind"],
        "n_observable": decomp.n_observable,
        "crossover_sqrt_lambda": tuning_config(cfg).crossover_sqrt_lambda,
        "max_dc_sensitivity": float(ctl.dc_sensitivity(controller)[:decomp.n_observable].max()),
    }
    if cfg["controller"]["ltsi_fit"]:
        summary["ltsi"] = _ltsi_for_ring(cfg, decomp, mmap)
    _write_json(out / "summary.json", summary)
    return EXIT_OK


COMMANDS = {
    "spectrum": cmd_spectrum,
    "worstcase": cmd_worstcase,
    "nyquist": cmd_nyquist,
    "simulate": cmd_simulate,
    "tune": cmd_tune,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relsense", description="Relative-sensing control experiments.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="INI experiment configuration")
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.add_argument("--seed", type=int, help="override [simulation] seed")
    p.add_argument("--mode", type=int, help="worstcase: 1-based mode index b (default N_0)")
    return p


def _thread_limit():
    raw = os.environ.get("RELSENSE_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"RELSENSE_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with _thread_limit():
            return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"relsense: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
