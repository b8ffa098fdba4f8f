"""Plant models, closed-loop assembly and time-domain simulation.

The closed loop follows

    y = G (u + d),    z = (B + Delta) y + n,    u = -C z

with a modal controller ``C``.  Continuous-time systems are discretised
exactly (zero-order hold) before simulation.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import linalg, signal

from .sensing_model import MeasurementMap, SpatialStructure

__all__ = [
    "PlantModel",
    "ClosedLoopSystem",
    "DisturbanceModel",
    "SimulationTrace",
    "WindField",
    "assemble_closed_loop",
    "simulate",
    "wind_field",
    "psd",
    "rejection_ratio",
    "rms_metric",
    "write_trace_csv",
    "write_trace_binary",
    "read_trace_binary",
    "write_psd_csv",
]

TRACE_MAGIC = b"RSTRACE1"


@dataclass
class PlantModel:
    """Per-subsystem linear dynamics, repeated on every subsystem.

    ``static``: ``y = gain * (u + d)``.
    ``mirror``: ``(J s^2 + b_a s + k_a) y = k (u + d)`` per segment.
    ``vehicle``: ``(m s^2 + c s) y = u + d``.
    """

    kind: str = "static"
    gain: float = 1.0
    J: np.ndarray | None = None
    k_a: float = 1.0
    b_a: float = 0.0
    k: float = 1.0
    mass: float = 1.0
    drag: float = 0.1

    def __post_init__(self):
        if self.kind not in ("static", "mirror", "vehicle"):
            raise ValueError(f"unknown plant kind {self.kind!r}")
        if self.kind == "mirror":
            J = np.atleast_2d(np.asarray(self.J, dtype=float))
            if not np.allclose(J, J.T) or np.any(np.linalg.eigvalsh(J) <= 0):
                raise ValueError("inertia matrix J must be symmetric positive definite")
            if min(self.k_a, self.b_a, self.k) <= 0:
                raise ValueError("k_a, b_a and k must be positive")
            self.J = J
        if self.kind == "vehicle" and (self.mass <= 0 or self.drag < 0):
            raise ValueError("vehicle mass must be positive and drag nonnegative")

    @classmethod
    def static(cls, gain: float = 1.0) -> "PlantModel":
        return cls("static", gain=gain)

    @classmethod
    def mirror(
        cls, resonance_hz: float = 50.0, damping: float = 0.01, k_a: float = 1.0, dof: int = 3
    ) -> "PlantModel":
        """Isotropic segment with the given resonance and modal damping, unit DC gain."""
        wn = 2 * np.pi * resonance_hz
        j = k_a / wn**2
        b_a = 2 * damping * np.sqrt(k_a * j)
        return cls("mirror", J=j * np.eye(dof), k_a=k_a, b_a=b_a, k=k_a)

    @classmethod
    def vehicle(cls, mass: float = 1.0, drag: float = 0.1) -> "PlantModel":
        return cls("vehicle", mass=mass, drag=drag)

    def subsystem_ss(self, n: int):
        """``(A, B, C, D)`` of one subsystem with ``n`` outputs."""
        if self.kind == "static":
            return np.zeros((0, 0)), np.zeros((0, n)), np.zeros((n, 0)), self.gain * np.eye(n)
        if self.kind == "mirror":
            if self.J.shape != (n, n):
                raise ValueError(f"inertia is {self.J.shape}, subsystems have {n} outputs")
            Ji = np.linalg.inv(self.J)
            I, Z = np.eye(n), np.zeros((n, n))
            A = np.block([[Z, I], [-self.k_a * Ji, -self.b_a * Ji]])
            B = np.vstack([Z, self.k * Ji])
            return A, B, np.hstack([I, Z]), Z
        I, Z = np.eye(n), np.zeros((n, n))
        A = np.block([[Z, I], [Z, -self.drag / self.mass * I]])
        return A, np.vstack([Z, I / self.mass]), np.hstack([I, Z]), Z

    def scalar_tf(self, s):
        """Transfer function shared by all outputs; fails when the plant couples them."""
        s = np.asarray(s)
        if self.kind == "static":
            return self.gain * np.ones_like(s)
        if self.kind == "mirror":
            j = self.J[0, 0]
            if not np.allclose(self.J, j * np.eye(len(self.J))):
                raise ValueError("unsupported structure: inertia is not a multiple of identity")
            return self.k / (j * s**2 + self.b_a * s + self.k_a)
        return 1.0 / (self.mass * s**2 + self.drag * s)

    def fastest_rate(self) -> float:
        A = self.subsystem_ss(len(self.J) if self.J is not None else 1)[0]
        return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0


@dataclass
class ClosedLoopSystem:
    """Continuous-time closed loop ``x' = A x + B [d; n]``, ``[y; u; z] = C x + D [d; n]``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    n_y: int
    n_z: int
    mmap: MeasurementMap
    active_modes: np.ndarray
    n_plant_states: int

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    def output_rows(self, name: str) -> slice:
        return {
            "y": slice(0, self.n_y),
            "u": slice(self.n_y, 2 * self.n_y),
            "z": slice(2 * self.n_y, 2 * self.n_y + self.n_z),
        }[name]

    def poles(self) -> np.ndarray:
        ev = np.linalg.eigvals(self.A) if self.n_states else np.zeros(0, complex)
        return ev[np.argsort(-ev.real, kind="stable")]

    def is_stable(self, tol: float = 1e-9) -> bool:
        return bool(self.n_states == 0 or self.poles()[0].real <= tol)


def assemble_closed_loop(plant: PlantModel, controller, mmap: MeasurementMap, delta=None) -> ClosedLoopSystem:
    """Build the closed-loop state-space model.

    State order: plant states, then (when the controller has a roll-off pole)
    two filter states per active mode, then one integrator state per active
    mode.  Only modes with nonzero integral gain are realised.
    """
    N = mmap.block_size
    M = mmap.n_subsystems
    n_y, n_z = mmap.n_outputs, mmap.n_sensors
    Bt = mmap.dense()
    if delta is not None:
        D_ = delta.toarray() if sp.issparse(delta) else np.asarray(delta, dtype=float)
        if D_.shape != Bt.shape:
            raise ValueError(f"Delta has shape {D_.shape}, expected {Bt.shape}")
        Bt = Bt + D_

    a, b, c, d = plant.subsystem_ss(N)
    I_M = np.eye(M)
    Ap, Bp, Cp, Dp = (np.kron(I_M, m) for m in (a, b, c, d))
    n_p = Ap.shape[0]

    if controller is None:
        active = np.zeros(0, dtype=int)
        K = A_I = np.zeros(0)
        Qa = np.zeros((n_y, 0))
        Ua = np.zeros((n_z, 0))
        p = None
    else:
        if controller.U.shape != (n_z, n_y):
            raise ValueError("controller and sensing map dimensions disagree")
        active = controller.active
        K, A_I = controller.K_I[active], controller.A_I[active]
        Qa, Ua = controller.Q[:, active], controller.U[:, active]
        p = controller.p
    n_a = len(active)
    n_f = 2 * n_a if p is not None else 0
    n_x = n_p + n_f + n_a
    n_in = n_y + n_z

    # outputs as functions of the full state and of [d; n]
    Cy = np.zeros((n_y, n_x))
    Cy[:, :n_p] = Cp
    Cy[:, n_p + n_f:] = -Dp @ Qa
    Dy = np.hstack([Dp, np.zeros((n_y, n_z))])
    Cu = np.zeros((n_y, n_x))
    Cu[:, n_p + n_f:] = -Qa
    Cz = Bt @ Cy
    Dz = Bt @ Dy + np.hstack([np.zeros((n_z, n_y)), np.eye(n_z)])
    E, ED = Ua.T @ Cz, Ua.T @ Dz

    A = np.zeros((n_x, n_x))
    Bin = np.zeros((n_x, n_in))
    A[:n_p, :n_p] = Ap
    A[:n_p, n_p + n_f:] = -Bp @ Qa
    Bin[:n_p, :n_y] = Bp
    w = slice(n_p + n_f, n_x)
    if p is not None:
        r1, r2 = slice(n_p, n_p + n_a), slice(n_p + n_a, n_p + 2 * n_a)
        A[r1] = p * E
        A[r1, r1] -= p * np.eye(n_a)
        Bin[r1] = p * ED
        A[r2, r1] = p * np.eye(n_a)
        A[r2, r2] = -p * np.eye(n_a)
        A[w, r2] = np.diag(K)
    else:
        A[w] = K[:, None] * E
        Bin[w] = K[:, None] * ED
    A[w, w] -= np.diag(A_I)

    C = np.vstack([Cy, Cu, Cz])
    D = np.vstack([Dy, np.zeros((n_y, n_in)), Dz])
    return ClosedLoopSystem(A, Bin, C, D, n_y, n_z, mmap, active, n_p)


@dataclass
class WindField:
    series: np.ndarray  # (n_steps, M)
    regularized: bool


def _spatial_factor(structure: SpatialStructure, corr_length: float):
    from scipy.spatial.distance import cdist

    if corr_length <= 0:
        raise ValueError("correlation length must be positive")
    if not np.isfinite(corr_length):
        # fully correlated limit: one shared series
        return np.ones((structure.size, 1)), False
    dist = cdist(structure.positions, structure.positions)
    cov = np.exp(-dist / corr_length)
    try:
        return np.linalg.cholesky(cov), False
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(cov + 1e-10 * np.eye(len(cov))), True


def wind_field(
    structure: SpatialStructure,
    corr_length: float,
    cutoff_hz: float,
    rms: float,
    dt: float,
    T: float,
    seed,
) -> WindField:
    """Spatially correlated, first-order low-pass wind per subsystem.

    Spatial covariance ``exp(-dist / corr_length)`` (positions in lattice
    pitches); temporal AR(1) equal to the exact sampling of a first-order
    low-pass at ``cutoff_hz``.  The initial sample is drawn from the stationary
    distribution, so the series is stationary from the start.
    """
    n = int(round(T / dt))
    factor, regularized = _spatial_factor(structure, corr_length)
    rng = np.random.default_rng(seed)
    a = np.exp(-2 * np.pi * cutoff_hz * dt)
    white = rng.standard_normal((n, factor.shape[1])) @ factor.T
    drive = np.sqrt(1 - a * a) * white
    drive[0] = white[0]
    series = signal.lfilter([1.0], [1.0, -a], drive, axis=0)
    return WindField(rms * series, regularized)


@dataclass(frozen=True)
class DisturbanceModel:
    """Static offsets plus low-frequency wind, both entering at the plant input.

    Static offsets are independent per output with standard deviation
    ``static_amplitude``.  Wind is a per-subsystem force (applied equally to
    all outputs of the subsystem) with RMS ``wind_rms``.
    """

    static_amplitude: float = 1e-3
    wind_rms: float = 1.0
    wind_cutoff_hz: float = 0.1
    correlation_length: float = 5.0

    def generate(self, mmap: MeasurementMap, dt: float, n_steps: int, seed_seq) -> np.ndarray:
        s_static, s_wind = seed_seq.spawn(2)
        N = mmap.block_size
        d = np.zeros((n_steps, mmap.n_outputs))
        if self.static_amplitude:
            d += self.static_amplitude * np.random.default_rng(s_static).standard_normal(mmap.n_outputs)
        if self.wind_rms:
            if mmap.structure is None:
                raise ValueError("wind needs subsystem positions")
            wind = wind_field(
                mmap.structure, self.correlation_length, self.wind_cutoff_hz,
                self.wind_rms, dt, n_steps * dt, s_wind,
            ).series
            d += np.repeat(wind, N, axis=1)
        return d


@dataclass
class SimulationTrace:
    dt: float
    T: float
    seed: int
    t: np.ndarray
    signals: dict[str, np.ndarray]
    diverged: bool = False
    meta: dict = field(default_factory=dict)

    def channel_names(self) -> list[str]:
        return [f"{name}{i}" for name, x in self.signals.items() for i in range(x.shape[1])]

    def matrix(self) -> np.ndarray:
        return np.hstack(list(self.signals.values()))

    @property
    def y(self):
        return self.signals.get("y")

    @property
    def u(self):
        return self.signals.get("u")

    @property
    def z(self):
        return self.signals.get("z")


def simulate(
    system: ClosedLoopSystem,
    disturbance: DisturbanceModel | None,
    sigma_n: float,
    dt: float,
    T: float,
    seed: int,
    outputs=("y", "u", "z"),
    x0=None,
    check_step: bool = True,
) -> SimulationTrace:
    """Zero-order-hold simulation of a closed loop.

    Sensor noise is white with density ``sigma_n`` per sqrt(Hz); each sample
    is held over one step with standard deviation ``sigma_n / sqrt(dt)``.
    Disturbance and noise use independent streams derived from ``seed``, so
    runs with equal seeds see identical inputs.  Divergence is flagged when
    the state norm exceeds ``1e6`` times its initial scale; integration stops
    (remaining samples are NaN) once the norm passes ``1e100``.
    """
    if check_step and system.n_states:
        fastest = float(np.max(np.abs(np.linalg.eigvals(system.A))))
        if dt * fastest >= 0.1:
            raise ValueError(f"time step too large: dt * |fastest pole| = {dt * fastest:.3g} >= 0.1")
    n = int(round(T / dt))
    n_x, n_in = system.n_states, system.n_inputs
    ss_d, ss_n = np.random.SeedSequence(seed).spawn(2)
    d = disturbance.generate(system.mmap, dt, n, ss_d) if disturbance else np.zeros((n, system.n_y))
    noise = np.random.default_rng(ss_n).standard_normal((n, system.n_z)) * (sigma_n / np.sqrt(dt))
    inputs = np.hstack([d, noise])

    if n_x:
        big = np.zeros((n_x + n_in, n_x + n_in))
        big[:n_x, :n_x] = system.A
        big[:n_x, n_x:] = system.B
        Phi = linalg.expm(big * dt)
        Ad, Bd = Phi[:n_x, :n_x], Phi[:n_x, n_x:]
    rows = np.concatenate([np.arange(system.C.shape[0])[system.output_rows(o)] for o in outputs])
    C, D = system.C[rows], system.D[rows]

    X = np.zeros((n, n_x))
    x = np.zeros(n_x) if x0 is None else np.asarray(x0, dtype=float).copy()
    diverged = False
    scale = float(np.linalg.norm(x))
    ref_steps = max(10, n // 100)
    if n_x:
        drive = inputs @ Bd.T
        for k in range(n):
            X[k] = x
            x = Ad @ x + drive[k]
            nx = np.linalg.norm(x)
            if k < ref_steps or scale == 0.0:
                scale = max(scale, nx)
            elif nx > 1e6 * scale:
                diverged = True
                if nx > 1e100:
                    X[k + 1:] = np.nan
                    break
    out = X @ C.T + inputs @ D.T
    signals, col = {}, 0
    for o in outputs:
        width = len(np.arange(system.C.shape[0])[system.output_rows(o)])
        signals[o] = out[:, col:col + width]
        col += width
    return SimulationTrace(dt, T, seed, dt * np.arange(n), signals, diverged,
                           {"sigma_n": sigma_n, "disturbance": None if disturbance is None else disturbance.__dict__})


def psd(x, dt: float, segment_length: int, overlap: float = 0.5):
    """Welch PSD (Hann window), two-sided density on ``f >= 0``.

    For a white sequence of variance ``v`` the density is ``v * dt``; the
    signal variance equals the integral over ``[-f_N, f_N]``.
    Returns ``(freq_hz, power, n_averages)``.
    """
    x = np.asarray(x, dtype=float)
    if segment_length > x.shape[0] or segment_length < 8:
        raise ValueError(f"trace of {x.shape[0]} samples is too short for segments of {segment_length}")
    noverlap = int(round(overlap * segment_length))
    f, P = signal.welch(x, fs=1.0 / dt, window="hann", nperseg=segment_length,
                        noverlap=noverlap, detrend="constant", axis=0)
    P = np.array(P)
    inner = slice(1, -1) if segment_length % 2 == 0 else slice(1, None)
    P[inner] /= 2.0
    step = segment_length - noverlap
    n_avg = 1 + (x.shape[0] - segment_length) // step
    return f, P, n_avg


@dataclass
class RatioResult:
    freq: np.ndarray
    ratio: np.ndarray
    unreliable: np.ndarray
    n_averages: int


def rejection_ratio(closed: SimulationTrace, open_: SimulationTrace, mode_vector,
                    segment_length: int, overlap: float = 0.5, floor: float = 1e-12) -> RatioResult:
    """PSD of a modal output with feedback divided by the open-loop one.

    Both traces must come from the same seed (same disturbance).  Frequencies
    where the open-loop density falls below ``floor`` times its peak are
    flagged as unreliable.
    """
    if closed.seed != open_.seed or closed.dt != open_.dt:
        raise ValueError("traces were generated with different seeds or time steps")
    v = np.asarray(mode_vector, dtype=float)
    f, pc, n_avg = psd(closed.y @ v, closed.dt, segment_length, overlap)
    _, po, _ = psd(open_.y @ v, open_.dt, segment_length, overlap)
    bad = po <= floor * po.max()
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bad, np.nan, pc / po)
    return RatioResult(f, ratio, bad, n_avg)


def rms_metric(signal_array, projection=None, channels=None, start: int = 0) -> float:
    """RMS over selected channels and samples ``start:``.

    ``projection`` (``n_channels x m``) maps to e.g. modal coordinates first.
    """
    x = np.asarray(signal_array, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    x = x[start:]
    if projection is not None:
        x = x @ projection
    if channels is not None:
        x = x[:, channels]
    if x.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(x**2)))


def write_trace_csv(trace: SimulationTrace, path) -> None:
    names = trace.channel_names()
    data = trace.matrix()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "channel_id", "value"])
        for i, t in enumerate(trace.t):
            for name, v in zip(names, data[i]):
                w.writerow([repr(float(t)), name, repr(float(v))])


def write_trace_binary(trace: SimulationTrace, path) -> None:
    """``RSTRACE1`` container: little-endian header, then float64 samples row-major.

    Header: magic, dt, T (float64), seed (int64), n_samples, n_channels
    (uint64), then per channel a uint16 byte length and UTF-8 name.
    """
    names = trace.channel_names()
    data = np.ascontiguousarray(trace.matrix(), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(TRACE_MAGIC)
        fh.write(struct.pack("<ddqQQ", trace.dt, trace.T, trace.seed, data.shape[0], data.shape[1]))
        for name in names:
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
        fh.write(data.tobytes())


def read_trace_binary(path):
    """Return ``(header dict, channel names, samples)`` from an ``RSTRACE1`` file."""
    with open(path, "rb") as fh:
        if fh.read(8) != TRACE_MAGIC:
            raise ValueError("not an RSTRACE1 file")
        dt, T, seed, n, m = struct.unpack("<ddqQQ", fh.read(40))
        names = []
        for _ in range(m):
            (length,) = struct.unpack("<H", fh.read(2))
            names.append(fh.read(length).decode())
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(n, m)
    return {"dt": dt, "T": T, "seed": seed}, names, data


def write_psd_csv(freq, power, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz", "power"])
        for f, p in zip(freq, power):
            w.writerow([repr(float(f)), repr(float(p))])


def save_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
