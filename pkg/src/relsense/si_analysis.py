"""Closed forms for spatially invariant sensing on a periodic lattice.

Subsystems sit on a torus ``Z_{M_1} x ... x Z_{M_gamma}`` and every node
carries ``D`` sensors, one per offset ``+-l`` with ``l`` in a stencil.  The
modal basis is then Fourier, indexed by spatial frequencies
``xi_j in {2 k pi / M_j}``, and the quantities of interest reduce to scalars:

* noise gain ``lambda_xi = 2 sum_l sin(l.xi / 2)^2``
* uncertainty map ``Phi_bar(xi) = i eps sum sin cos / sum sin^2``
* Nyquist exclusion zones built from the arc ``{-1 / (1 + beta Phi_bar)}``.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar

__all__ = [
    "SIStencil",
    "ExclusionZone",
    "Clearance",
    "CirculantCheck",
    "LtsiController",
    "LtsiFit",
    "LtsiVerification",
    "LocalEstimator",
    "DCSensitivity",
    "GridError",
    "UndefinedModeError",
    "EstimationError",
    "LTSI_EPS",
    "lambda_xi",
    "circulant_check",
    "noise_floor_count",
    "phi_bar",
    "exclusion_arc",
    "margin_zone",
    "nyquist_clearance",
    "ltsi_eval",
    "ltsi_fit",
    "ltsi_verify",
    "local_estimator",
    "si_dc_sensitivity",
    "write_sweep_csv",
]

# relative uncertainty used when verifying LTSI designs (inflated for margin)
LTSI_EPS = 0.025


class GridError(ValueError):
    pass


class UndefinedModeError(ValueError):
    pass


class EstimationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SIStencil:
    """Periodic lattice with sensor offsets ``l`` (each ``+-l`` pair listed once)."""

    sizes: tuple[int, ...]
    offsets: np.ndarray

    def __post_init__(self):
        sizes = tuple(int(m) for m in self.sizes)
        offs = np.atleast_2d(np.asarray(self.offsets, dtype=int))
        if offs.shape[1] != len(sizes):
            raise ValueError(f"offsets have {offs.shape[1]} coordinates, lattice has {len(sizes)} axes")
        if any(m < 1 for m in sizes):
            raise ValueError("lattice sizes must be positive")
        seen = set()
        for l in map(tuple, offs):
            if not any(l):
                raise ValueError("zero offset is not a relative measurement")
            if l in seen or tuple(-a for a in l) in seen:
                raise ValueError(f"offset {l} is counted twice (as l and -l)")
            seen.add(l)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "offsets", offs)

    @classmethod
    def chain(cls, M: int) -> "SIStencil":
        return cls((M,), [[1]])

    @classmethod
    def hexagonal(cls, M1: int, M2: int | None = None) -> "SIStencil":
        """Six nearest neighbours of the hexagonal lattice in axial coordinates."""
        return cls((M1, M2 or M1), [[1, 0], [0, 1], [1, -1]])

    @property
    def dimension(self) -> int:
        return len(self.sizes)

    @property
    def n_sensors_per_node(self) -> int:
        return 2 * len(self.offsets)

    @property
    def rho_prime(self) -> int:
        return int(np.abs(self.offsets).max())

    def grid(self) -> np.ndarray:
        """All spatial frequencies, shape ``(prod M_j, gamma)``."""
        axes = [2 * np.pi * np.arange(m) / m for m in self.sizes]
        return np.array(list(itertools.product(*axes))).reshape(-1, self.dimension)

    def check_grid(self, xi, tol: float = 1e-9) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if xi.shape[-1] != self.dimension:
            raise GridError(f"frequency has {xi.shape[-1]} components, lattice has {self.dimension} axes")
        k = xi * np.asarray(self.sizes) / (2 * np.pi)
        if np.any(np.abs(k - np.round(k)) > tol):
            raise GridError(f"frequency {xi} is not on the lattice grid 2 k pi / M")
        return xi


def _half_phases(stencil: SIStencil, xi) -> np.ndarray:
    return (np.asarray(xi) @ stencil.offsets.T) / 2.0


def lambda_xi(stencil: SIStencil, xi, check: bool = True) -> np.ndarray:
    """``2 sum_l sin(l.xi / 2)^2``; works on a single frequency or a stack of them."""
    if check:
        xi = stencil.check_grid(xi)
    return 2.0 * np.sum(np.sin(_half_phases(stencil, xi)) ** 2, axis=-1)


def circulant_incidence(stencil: SIStencil) -> sp.csr_matrix:
    """Incidence matrix of the periodic lattice, one row per (node, offset)."""
    sizes = np.asarray(stencil.sizes)
    nodes = np.array(list(itertools.product(*[range(m) for m in sizes]))).reshape(-1, len(sizes))
    strides = np.concatenate([np.cumprod(sizes[::-1])[::-1][1:], [1]])
    idx = lambda c: (np.mod(c, sizes) * strides).sum(axis=-1)
    rows, cols, vals = [], [], []
    n = len(nodes)
    for i, l in enumerate(stencil.offsets):
        r = i * n + np.arange(n)
        rows += [r, r]
        cols += [idx(nodes), idx(nodes + l)]
        vals += [-np.ones(n), np.ones(n)]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(len(stencil.offsets) * n, n))


@dataclass
class CirculantCheck:
    """Closed form against the eigenvalues of the explicit periodic Laplacian."""

    closed_form: np.ndarray  # sorted values of 2 sum sin^2
    circulant: np.ndarray  # sorted eigenvalues of B^T B
    ratio: float
    max_ratio_spread: float


def circulant_check(stencil: SIStencil) -> CirculantCheck:
    """Compare the closed form with the physical Laplacian of the same lattice.

    The two agree up to one global factor (2 for a stencil listing each
    ``+-l`` pair once); the factor and its spread across frequencies are
    returned.  Physical Laplacians elsewhere in the package use the circulant
    values.
    """
    B = circulant_incidence(stencil)
    circ = np.sort(np.linalg.eigvalsh((B.T @ B).toarray()))
    cf = np.sort(lambda_xi(stencil, stencil.grid(), check=False))
    nz = cf > 1e-9 * max(cf.max(), 1e-300)
    r = circ[nz] / cf[nz]
    return CirculantCheck(cf, circ, float(np.median(r)) if r.size else np.nan,
                          float(r.max() - r.min()) if r.size else 0.0)


def noise_floor_count(c: float, stencil: SIStencil, rho_prime: float | None = None) -> int:
    """Guaranteed number of frequencies with ``lambda_xi`` below ``c^2`` times the stencil scale.

    ``prod_j (2 floor(c M_j / (sqrt(2 D) gamma rho' pi)) + 1)``.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    rho = stencil.rho_prime if rho_prime is None else rho_prime
    D, gamma = stencil.n_sensors_per_node, stencil.dimension
    out = 1
    for m in stencil.sizes:
        out *= 2 * int(np.floor(c * m / (np.sqrt(2 * D) * gamma * rho * np.pi))) + 1
    return out


def phi_bar(stencil: SIStencil, eps: float, xi, check: bool = True) -> complex:
    """Diagonal of the worst spatially invariant uncertainty in Fourier coordinates.

    ``i eps sum_l sin^2 / tan`` over ``sum_l sin^2`` with ``sin^2 / tan``
    written as ``sin cos`` so that ``tan = inf`` terms vanish cleanly.
    """
    if check:
        xi = stencil.check_grid(xi)
    h = _half_phases(stencil, xi)
    s, c = np.sin(h), np.cos(h)
    den = np.sum(s * s)
    if den <= 1e-28:
        raise UndefinedModeError(f"every sensor is blind to frequency {xi}")
    return 1j * eps * float(np.sum(s * c)) / den


def _wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class ExclusionZone:
    """Region the Nyquist curve of one spatial mode must avoid.

    Base arc ``{-1 / (1 + i t) : |t| <= |Phi_bar|}`` on the circle of radius
    0.5 centred at ``-0.5``, rotated by up to ``+-phi_m`` and scaled towards
    the origin by up to ``g_m``.  A point ``-1/(1 + i t)`` has modulus
    ``cos u`` and argument ``pi - u`` with ``u = arctan t``; membership tests
    use these coordinates.
    """

    abs_phi: float
    g_m: float = 1.0
    phi_m: float = 0.0

    def __post_init__(self):
        if self.g_m < 1:
            raise ValueError("gain margin must be >= 1")
        if self.phi_m < 0:
            raise ValueError("phase margin must be >= 0")
        object.__setattr__(self, "abs_phi", abs(self.abs_phi))

    center = -0.5
    radius = 0.5

    @property
    def theta(self) -> float:
        """Half-angle of the base arc seen from the circle centre."""
        return 2.0 * float(np.arctan(self.abs_phi))

    @property
    def u_max(self) -> float:
        return float(np.arctan(self.abs_phi))

    def endpoints(self) -> tuple[complex, complex]:
        return -1.0 / (1.0 + 1j * self.abs_phi), -1.0 / (1.0 - 1j * self.abs_phi)

    def arc_points(self, n: int = 257) -> np.ndarray:
        t = np.tan(np.linspace(-self.u_max, self.u_max, n))
        return -1.0 / (1.0 + 1j * t)

    def crosses_imag_axis(self) -> bool:
        """Does the zone reach the closed right half plane?"""
        return self.u_max + self.phi_m >= np.pi / 2

    def contains(self, z, tol: float = 1e-12) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        mod = np.abs(z)
        out = np.zeros(z.shape, dtype=bool)
        U = self.u_max
        for k in (-1, 0, 1):
            psi = _wrap(np.angle(z) - np.pi) + 2 * np.pi * k
            lo = np.maximum(-U, -self.phi_m - psi) - tol
            hi = np.minimum(U, self.phi_m - psi) + tol
            ok = lo <= hi
            lo_c, hi_c = np.clip(lo, -U, U), np.clip(hi, -U, U)
            cmax = np.where((lo_c <= 0) & (hi_c >= 0), 1.0, np.cos(np.minimum(np.abs(lo_c), np.abs(hi_c))))
            cmin = np.cos(np.maximum(np.abs(lo_c), np.abs(hi_c)))
            ok &= (cmax >= mod - tol) & (cmin <= self.g_m * mod + tol)
            out |= ok
        return out

    def _sector_distance(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        # distance from z (n, 1) to the annular sector obtained for fixed u (1, m)
        rho, psi = np.abs(z), np.angle(z)
        a, b = np.cos(u) / self.g_m, np.cos(u)
        centre = np.pi - u
        dpsi = np.abs(_wrap(psi - centre))
        radial = np.maximum(0.0, np.maximum(a - rho, rho - b))
        inside = dpsi <= self.phi_m
        # nearest radial edge: the one at angle centre +- phi_m closest to psi
        edge = centre + np.where(_wrap(psi - centre) >= 0, self.phi_m, -self.phi_m)
        proj = rho * np.cos(psi - edge)
        t = np.clip(proj, a, b)
        seg = np.abs(z - t * np.exp(1j * edge))
        return np.where(inside, radial, seg)

    def distance(self, z, n_grid: int = 401, refine_all: bool = True) -> np.ndarray:
        """Euclidean distance from each point to the zone (0 inside).

        The sector boundary moves at unit speed in ``u``, so a grid value
        overshoots by at most half a step. With ``refine_all=False`` only
        points that can still hold the minimum are computed finely; the
        others keep a coarse upper bound.
        """
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        U = self.u_max
        if refine_all or U == 0 or z.size <= 64:
            return self._fine_distance(z, n_grid, refine_all)
        coarse = np.linspace(-U, U, 41)
        out = self._sector_distance(z[:, None], coarse[None, :]).min(axis=1)
        keep = out <= out.min() + (coarse[1] - coarse[0])
        out[keep] = self._fine_distance(z[keep], n_grid, refine_all)
        out[self.contains(z)] = 0.0
        return out

    def _fine_distance(self, z, n_grid, refine_all):
        U = self.u_max
        u = np.linspace(-U, U, n_grid) if U > 0 else np.zeros(1)
        d = self._sector_distance(z[:, None], u[None, :])
        best = d.min(axis=1)
        if U > 0:
            step = u[1] - u[0]
            todo = best > 0
            if not refine_all:
                todo &= best <= best.min() + step
            for i in np.flatnonzero(todo):
                j = int(np.argmin(d[i]))
                res = minimize_scalar(
                    lambda v: float(self._sector_distance(z[i:i + 1, None], np.array([[v]]))[0, 0]),
                    bounds=(max(-U, u[j] - step), min(U, u[j] + step)), method="bounded",
                    options={"xatol": 1e-12},
                )
                best[i] = min(best[i], res.fun)
        best[self.contains(z)] = 0.0
        return best

    def to_json(self) -> dict:
        return {
            "center": [self.center, 0.0],
            "radius": self.radius,
            "theta": self.theta,
            "abs_phi_bar": self.abs_phi,
            "phase_range": [-self.phi_m, self.phi_m],
            "gain_range": [1.0, self.g_m],
            "crosses_imag_axis": self.crosses_imag_axis(),
        }


def exclusion_arc(phi) -> ExclusionZone:
    """Base arc for the (purely imaginary) uncertainty ``phi``."""
    return ExclusionZone(float(abs(phi)))


def margin_zone(arc: ExclusionZone, g_m: float, phi_m: float) -> ExclusionZone:
    """Enlarge a base arc by a gain margin ``g_m`` and a phase margin ``phi_m`` (rad)."""
    return ExclusionZone(arc.abs_phi, g_m, phi_m)


@dataclass
class Clearance:
    min_distance: float
    violation: bool
    winding: tuple[int, int]

    @property
    def encircles(self) -> bool:
        return any(self.winding)


def _winding(curve: np.ndarray, point: complex) -> int:
    ang = np.unwrap(np.angle(curve - point))
    return int(np.round((ang[-1] - ang[0]) / (2 * np.pi)))


def nyquist_clearance(curve, zone: ExclusionZone, mirror: bool = True) -> Clearance:
    """Distance of sampled loop values ``K(i w)`` to an exclusion zone.

    With ``mirror`` the samples (positive ``w``, ascending) are completed by
    their conjugates to a closed curve; winding numbers are then counted
    around both arc endpoints.
    """
    curve = np.asarray(curve, dtype=complex).ravel()
    curve = curve[np.isfinite(curve)]
    if curve.size == 0:
        raise ValueError("empty Nyquist curve")
    dist = zone.distance(curve, refine_all=False)
    closed = np.concatenate([np.conj(curve[::-1]), curve]) if mirror else curve
    closed = np.append(closed, closed[0])
    wind = tuple(_winding(closed, e) for e in zone.endpoints())
    return Clearance(float(dist.min()), bool(np.any(dist == 0.0)), wind)


_BASIS_NAMES = ("alpha", "beta", "gamma", "delta")


def _cos_basis(xi) -> np.ndarray:
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape[1] == 1:
        z = np.zeros(len(xi))
        return np.column_stack([np.ones(len(xi)), np.cos(xi[:, 0]), z, z])
    return np.column_stack([np.ones(len(xi)), np.cos(xi[:, 0]), np.cos(xi[:, 1]), np.cos(xi[:, 0] - xi[:, 1])])


@dataclass
class LtsiController:
    """Cosine-series gains ``X(xi) = x_a + x_b cos xi1 + x_g cos xi2 + x_d cos(xi1 - xi2)``.

    ``k`` and ``a`` hold the four ``d x d`` coefficient matrices (alpha,
    beta, gamma, delta) of ``K_I*`` and ``A_I*``.
    """

    k: np.ndarray
    a: np.ndarray
    p: float | None = None

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        if self.k.ndim == 1:
            self.k = self.k[:, None, None]
        if self.a.ndim == 1:
            self.a = self.a[:, None, None]
        if self.k.shape[0] != 4 or self.k.shape != self.a.shape or self.k.shape[1] != self.k.shape[2]:
            raise ValueError("expected four square coefficient matrices for K and A")

    @property
    def dof(self) -> int:
        return self.k.shape[1]

    def to_json(self) -> dict:
        out = {"p_rad_per_s": self.p}
        for i, name in enumerate(_BASIS_NAMES):
            out[f"k_{name}"] = self.k[i].tolist()
            out[f"a_{name}"] = self.a[i].tolist()
        return out


def ltsi_eval(controller: LtsiController, xi) -> tuple[np.ndarray, np.ndarray]:
    """``(K_I*(xi), A_I*(xi))`` as ``d x d`` matrices."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if len(xi) == 1 and (np.any(controller.k[2:]) or np.any(controller.a[2:])):
        raise ValueError("one-dimensional lattice needs zero gamma and delta coefficients")
    w = _cos_basis(xi[None])[0]
    return np.tensordot(w, controller.k, axes=1), np.tensordot(w, controller.a, axes=1)


@dataclass
class LtsiFit:
    controller: LtsiController
    residual_k: float
    residual_a: float
    residual_a_clamped: float
    shift: float


def ltsi_fit(xi, K_target, A_target, p: float | None = None) -> LtsiFit:
    """Least-squares cosine-series fit of target gains over a frequency grid.

    Targets are arrays of shape ``(n,)`` or ``(n, d, d)``.  If the fitted
    leakage is negative somewhere on the grid, ``a_alpha`` is raised by the
    smallest multiple of the identity that makes it nonnegative there; RMS
    residuals are reported before and after that shift.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape[0] == 1 and xi.shape[1] > 1 and np.asarray(K_target).shape[0] != 1:
        xi = xi.T
    for axis in range(xi.shape[1]):
        if len(np.unique(np.round(xi[:, axis], 12))) < 4:
            raise ValueError("underdetermined fit: fewer than 4 grid points on an axis")
    K = np.asarray(K_target, dtype=float)
    A = np.asarray(A_target, dtype=float)
    if K.ndim == 1:
        K, A = K[:, None, None], A[:, None, None]
    n, d = K.shape[0], K.shape[1]
    basis = _cos_basis(xi)
    used = 2 if xi.shape[1] == 1 else 4
    X = basis[:, :used]

    def fit(T):
        coef = np.zeros((4, d, d))
        sol, *_ = np.linalg.lstsq(X, T.reshape(n, -1), rcond=None)
        coef[:used] = sol.reshape(used, d, d)
        return coef

    def rms(coef, T):
        return float(np.sqrt(np.mean((np.tensordot(basis, coef, axes=1) - T) ** 2)))

    kc, ac = fit(K), fit(A)
    res_a = rms(ac, A)
    values = np.tensordot(basis, ac, axes=1)
    sym = 0.5 * (values + np.swapaxes(values, 1, 2))
    worst = float(np.linalg.eigvalsh(sym).min())
    shift = max(0.0, -worst)
    ac[0] += shift * np.eye(d)
    return LtsiFit(LtsiController(kc, ac, p), rms(kc, K), res_a, rms(ac, A), shift)


@dataclass
class LtsiVerification:
    max_real: float
    worst_xi: np.ndarray
    worst_beta: float
    stable: bool


def ltsi_verify(controller: LtsiController, stencil: SIStencil, eps: float = LTSI_EPS,
                plant=None, betas=(-1.0, 0.0, 1.0)) -> LtsiVerification:
    """Closed-loop pole check per spatial frequency.

    The loop of frequency ``xi`` sees the sensing gain
    ``sqrt(lambda_xi) (1 + beta Phi_bar(xi))`` on every degree of freedom;
    ``plant`` (default: unit static gain) acts identically on each of them.
    The zero frequency is skipped (unobservable).
    """
    d = controller.dof
    if plant is None:
        Ap, Bp, Cp, Dp = np.zeros((0, 0)), np.zeros((0, d)), np.zeros((d, 0)), np.eye(d)
    else:
        Ap, Bp, Cp, Dp = plant.subsystem_ss(d)
    n_p = Ap.shape[0]
    p = controller.p
    I = np.eye(d)
    worst = (-np.inf, None, None)
    for xi in stencil.grid():
        lam = lambda_xi(stencil, xi, check=False)
        if lam <= 1e-24:
            continue
        K, A = ltsi_eval(controller, xi)
        pb = phi_bar(stencil, eps, xi, check=False)
        for beta in betas:
            g = np.sqrt(lam) * (1 + beta * pb)
            # states: plant, roll-off (2d, optional), integrator (d); u = -w
            n_f = 2 * d if p is not None else 0
            n = n_p + n_f + d
            M = np.zeros((n, n), dtype=complex)
            w = slice(n_p + n_f, n)
            M[:n_p, :n_p] = Ap
            M[:n_p, w] = -Bp
            Ey = np.zeros((d, n), dtype=complex)
            Ey[:, :n_p] = Cp
            Ey[:, w] = -Dp
            e = g * Ey
            if p is not None:
                r1, r2 = slice(n_p, n_p + d), slice(n_p + d, n_p + 2 * d)
                M[r1] = p * e
                M[r1, r1] -= p * I
                M[r2, r1] = p * I
                M[r2, r2] = -p * I
                M[w, r2] = K
            else:
                M[w] = K @ e
            M[w, w] -= A
            top = float(np.linalg.eigvals(M).real.max())
            if top > worst[0]:
                worst = (top, xi, beta)
    return LtsiVerification(worst[0], worst[1], worst[2], worst[0] < 0)


@dataclass
class LocalEstimator:
    """Per-segment least-squares estimate of piston/tip/tilt from its own sensors."""

    segment: int
    sensors: np.ndarray
    local_matrix: np.ndarray  # (n_sensors, 3)
    matrix: np.ndarray  # (3, n_sensors)

    def estimate(self, z) -> np.ndarray:
        return self.matrix @ np.asarray(z)[self.sensors]


def local_estimator(geometry, k: int) -> LocalEstimator:
    """Pseudo-inverse of the sensor-to-own-DOF map of segment ``k``.

    Neighbours are assumed perfectly positioned.  Boundary segments use the
    sensors they actually have.
    """
    sensors = geometry.sensors_of(k)
    if len(sensors) < 3:
        raise EstimationError(f"segment {k} has {len(sensors)} sensors, at least 3 are needed")
    pairs = geometry.sensor_pairs[sensors]
    local = np.where((pairs[:, 0] == k)[:, None], geometry.weights_pos[sensors], -geometry.weights_neg[sensors])
    if np.linalg.matrix_rank(local) < 3:
        raise EstimationError(f"local sensor matrix of segment {k} is rank deficient")
    return LocalEstimator(k, sensors, local, np.linalg.pinv(local))


@dataclass
class DCSensitivity:
    S: np.ndarray
    norm: float
    infinite_rejection: bool


def si_dc_sensitivity(K0) -> DCSensitivity:
    """``S(xi; 0) = (I + K_xi(0))^-1``; an infinite loop gain (pure integrator) gives ``S = 0``."""
    K0 = np.atleast_2d(np.asarray(K0, dtype=float))
    if np.any(np.isinf(K0)):
        return DCSensitivity(np.zeros_like(K0), 0.0, True)
    M = np.eye(len(K0)) + K0
    try:
        S = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise ValueError("I + K(0) is singular") from exc
    return DCSensitivity(S, float(np.linalg.norm(S, 2)), False)


def sweep_rows(stencil: SIStencil, eps: float, g_m: float = 1.0, phi_m: float = 0.0):
    """Per-frequency ``(xi, lambda_xi, |Phi_bar|, theta, crossing)``.

    The zero frequency has unbounded uncertainty: ``|Phi_bar| = inf``, ``theta = pi``.
    """
    for xi in stencil.grid():
        lam = float(lambda_xi(stencil, xi, check=False))
        try:
            ab = abs(phi_bar(stencil, eps, xi, check=False))
        except UndefinedModeError:
            ab = np.inf
        zone = ExclusionZone(ab, g_m, phi_m)
        yield xi, lam, ab, zone.theta, zone.crosses_imag_axis()


def write_sweep_csv(stencil: SIStencil, eps: float, path, g_m: float = 1.0, phi_m: float = 0.0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xi_1", "xi_2", "lambda_xi", "abs_phi_bar", "theta", "zone_crosses_imag_axis"])
        for xi, lam, ab, theta, cross in sweep_rows(stencil, eps, g_m, phi_m):
            x2 = repr(float(xi[1])) if len(xi) > 1 else ""
            w.writerow([repr(float(xi[0])), x2, repr(lam), repr(float(ab)), repr(theta), int(cross)])


def save_zone_json(zone: ExclusionZone, path) -> None:
    with open(path, "w") as fh:
        json.dump(zone.to_json(), fh, indent=1, sort_keys=True)
