"""Modal integral controller with leakage and double roll-off pole.

Per mode ``k`` the controller is ``K_I(k) / (s + A_I(k)) / (s/p + 1)**2``
acting on the modal measurement ``U^T z`` and feeding back through ``Q``.
All gains are stored in rad/s.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .spectral import ModalDecomposition

__all__ = [
    "HZ",
    "TuningConfig",
    "ModalController",
    "SensitivityResponse",
    "tune_modal",
    "uniform_gain",
    "dc_sensitivity",
    "sensitivity_response",
    "write_tuning_csv",
]

HZ = 2 * np.pi  # rad/s per Hz


@dataclass(frozen=True)
class TuningConfig:
    """Modal tuning targets.

    k0: closed-loop gain on well observable modes (rad/s)
    k1: integral gain cap on poorly observable modes (rad/s)
    p0: required decay rate of the worst-case low-frequency pole (rad/s)
    eps: relative sensing uncertainty used to size the leakage
    p: roll-off double-pole frequency (rad/s); ``None`` disables the roll-off
    """

    k0: float = 14.4
    k1: float = 5.7
    p0: float = 0.1 * HZ
    eps: float = 0.01
    p: float | None = 20 * HZ

    def __post_init__(self):
        for name in ("k0", "k1", "p0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.p is not None and self.p <= 0:
            raise ValueError("p must be positive")

    @property
    def crossover_sqrt_lambda(self) -> float:
        """Singular value below which the integral gain is capped at ``k1``."""
        return self.k0 / self.k1


@dataclass
class ModalController:
    """Diagonal-in-modal-basis gains attached to the decomposition they were tuned on."""

    K_I: np.ndarray
    A_I: np.ndarray
    p: float | None
    decomp: ModalDecomposition
    phi: np.ndarray | None = None

    def __post_init__(self):
        self.K_I = np.asarray(self.K_I, dtype=float)
        self.A_I = np.asarray(self.A_I, dtype=float)
        n = self.decomp.n_outputs
        if self.K_I.shape != (n,) or self.A_I.shape != (n,):
            raise ValueError(f"gain vectors must have length {n}")
        if np.any(self.A_I < 0):
            raise ValueError("leakage must be nonnegative")
        if np.any(self.K_I[self.decomp.n_observable:] != 0):
            raise ValueError("unobservable modes must have zero gain")

    @property
    def U(self) -> np.ndarray:
        return self.decomp.U

    @property
    def Q(self) -> np.ndarray:
        return self.decomp.Q

    @property
    def active(self) -> np.ndarray:
        """Indices of modes that actually receive feedback."""
        return np.flatnonzero(self.K_I != 0)

    def closed_loop_gain(self) -> np.ndarray:
        return self.K_I * self.decomp.sigma

    def low_frequency_pole(self, phi=None) -> np.ndarray:
        """``-(A_I + K_I sqrt(lambda) (1 + phi))`` of the static-plant modal loop."""
        phi = self.phi if phi is None else np.asarray(phi)
        phi = np.zeros_like(self.K_I) if phi is None else phi
        return -(self.A_I + self.K_I * self.decomp.sigma * (1 + phi))

    def disabled(self) -> "ModalController":
        zero = np.zeros_like(self.K_I)
        return ModalController(zero, zero.copy(), self.p, self.decomp, self.phi)

    def to_json(self) -> dict:
        return {
            "p_rad_per_s": self.p,
            "n_observable": self.decomp.n_observable,
            "sigma": self.decomp.sigma.tolist(),
            "K_I_rad_per_s": self.K_I.tolist(),
            "A_I_rad_per_s": self.A_I.tolist(),
            "phi": None if self.phi is None else self.phi.tolist(),
        }

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def from_json(cls, data: dict, decomp: ModalDecomposition) -> "ModalController":
        if data["n_observable"] != decomp.n_observable or len(data["K_I_rad_per_s"]) != decomp.n_outputs:
            raise ValueError("controller was tuned on a different decomposition")
        phi = data.get("phi")
        return cls(
            np.array(data["K_I_rad_per_s"]),
            np.array(data["A_I_rad_per_s"]),
            data["p_rad_per_s"],
            decomp,
            None if phi is None else np.array(phi),
        )


def tune_modal(decomp: ModalDecomposition, config: TuningConfig, phi) -> ModalController:
    """Robust modal tuning: saturated integral gain plus worst-case leakage.

    ``K_I(k) = k0 / sqrt(lambda_k)`` while that stays below ``k1``, then
    ``K_I(k) = k1``; the switch is continuous at ``sqrt(lambda_k) = k0 / k1``.
    Leakage ``A_I(k) = max(0, p0 - K_I(k) sqrt(lambda_k) (1 + phi_k))`` keeps
    the worst-case low-frequency pole at or below ``-p0``.
    """
    n0 = decomp.n_observable
    if n0 == 0:
        raise ValueError("empty spectrum: no observable mode to tune")
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (decomp.n_outputs,):
        raise ValueError(f"phi must have length {decomp.n_outputs}")
    if np.any(phi[:n0] > 0):
        raise ValueError("worst-case phi values must be nonpositive")

    s = decomp.sigma[:n0]
    K = np.zeros(decomp.n_outputs)
    A = np.zeros(decomp.n_outputs)
    K[:n0] = np.minimum(config.k0 / s, config.k1)
    A[:n0] = np.maximum(0.0, config.p0 - K[:n0] * s * (1 + phi[:n0]))
    return ModalController(K, A, config.p, decomp, phi.copy())


def uniform_gain(decomp: ModalDecomposition, gain: float, p: float | None = None) -> ModalController:
    """Same closed-loop gain ``K_I(k) sqrt(lambda_k) = gain`` on every observable mode, no leakage."""
    n0 = decomp.n_observable
    K = np.zeros(decomp.n_outputs)
    K[:n0] = gain / decomp.sigma[:n0]
    return ModalController(K, np.zeros_like(K), p, decomp)


def dc_sensitivity(controller: ModalController, decomp: ModalDecomposition | None = None) -> np.ndarray:
    """Per-mode ``|S(0)| = 1 / (1 + sqrt(lambda_k) K_I(k) / A_I(k))``.

    A pure integrator rejects statics (0); a mode without feedback keeps 1.
    """
    decomp = decomp or controller.decomp
    K, A, s = controller.K_I, controller.A_I, decomp.sigma
    out = np.ones(decomp.n_outputs)
    fb = (K != 0) & (s > 0)
    integ = fb & (A == 0)
    leak = fb & (A > 0)
    out[integ] = 0.0
    out[leak] = np.abs(1.0 / (1.0 + s[leak] * K[leak] / A[leak]))
    return out


@dataclass
class SensitivityResponse:
    omega: np.ndarray
    loop: np.ndarray  # (n_omega, n_modes)
    S: np.ndarray
    T: np.ndarray


def sensitivity_response(
    controller: ModalController,
    decomp: ModalDecomposition | None,
    plant,
    omega,
) -> SensitivityResponse:
    """Per-mode ``S(i w)`` and ``T(i w)`` of the scalar modal loops.

    The plant must act identically on every output (``plant.scalar_tf``); a
    plant that is not a scalar multiple of the identity is rejected.
    """
    decomp = decomp or controller.decomp
    omega = np.asarray(omega, dtype=float)
    s = 1j * omega[:, None]
    G = plant.scalar_tf(s)
    roll = 1.0 if controller.p is None else 1.0 / (s / controller.p + 1.0) ** 2
    L = G * decomp.sigma[None, :] * controller.K_I[None, :] / (s + controller.A_I[None, :]) * roll
    S = 1.0 / (1.0 + L)
    return SensitivityResponse(omega, L, S, L * S)


def write_tuning_csv(controller: ModalController, path) -> None:
    dc = dc_sensitivity(controller)
    phi = controller.phi if controller.phi is not None else np.zeros_like(controller.K_I)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "lambda", "K_I", "A_I", "phi_k", "dc_sensitivity"])
        for k in range(controller.decomp.n_outputs):
            w.writerow([
                k + 1,
                repr(float(controller.decomp.lam[k])),
                repr(float(controller.K_I[k])),
                repr(float(controller.A_I[k])),
                repr(float(phi[k])),
                repr(float(dc[k])),
            ])
