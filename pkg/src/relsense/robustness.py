"""Structured sensing-model errors and their effect on closed-loop stability.

An admissible error ``Delta`` perturbs each nonzero entry of ``B`` by at most
``eps`` relative to its magnitude.  In modal coordinates the loop sees
``Phi = Lambda^-1/2 U^T Delta Q``; a single large negative diagonal entry
``Phi[b, b] < -1`` flips the sign of the feedback on mode ``b``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .sensing_model import MeasurementMap
from .spectral import ModalDecomposition

__all__ = [
    "UncertaintyMode",
    "UncertaintySpec",
    "Verdict",
    "worst_case_delta",
    "phi_matrix",
    "phi_b_value",
    "worst_case_phis",
    "prop2_check",
    "closed_loop_poles",
    "symmetry_residual",
    "write_phi_sweep_csv",
    "write_poles_csv",
]


class UncertaintyMode(str, Enum):
    INDEPENDENT = "independent-entries"
    SPATIALLY_INVARIANT = "spatially-invariant"
    SYMMETRY_PRESERVING = "symmetry-preserving"


@dataclass(frozen=True)
class UncertaintySpec:
    """Relative entrywise bound ``|Delta[k, l]| <= eps |B[k, l]|`` plus a structure."""

    eps: float
    mode: UncertaintyMode = UncertaintyMode.INDEPENDENT

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        object.__setattr__(self, "mode", UncertaintyMode(self.mode))

    def admissible(self, mmap: MeasurementMap, delta, atol: float = 1e-12) -> bool:
        B = mmap.dense()
        D = _dense(delta)
        if D.shape != B.shape:
            return False
        if np.any(np.abs(D) > self.eps * np.abs(B) + atol):
            return False
        if self.mode is UncertaintyMode.SYMMETRY_PRESERVING:
            return bool(np.all(np.abs(D.sum(axis=1)) <= atol * max(1, D.shape[1])))
        return True

    def sample(self, mmap: MeasurementMap, rng: np.random.Generator) -> sp.csr_matrix:
        """Draw a random admissible error.

        ``independent-entries`` draws every entry uniformly in
        ``[-eps |B|, eps |B|]``; ``symmetry-preserving`` draws one gain error
        per sensor; ``spatially-invariant`` draws one relative error for the
        positive and one for the negative side of all sensors sharing the same
        offset between their two subsystems (scalar subsystems only).
        """
        B = mmap.B.tocoo()
        if self.mode is UncertaintyMode.INDEPENDENT:
            rel = rng.uniform(-1.0, 1.0, size=B.nnz)
            vals = self.eps * rel * np.abs(B.data)
        elif self.mode is UncertaintyMode.SYMMETRY_PRESERVING:
            gain = rng.uniform(-1.0, 1.0, size=mmap.n_sensors)
            vals = self.eps * gain[B.row] * B.data
        else:
            if mmap.block_size != 1 or mmap.structure is None:
                raise ValueError("spatially-invariant sampling needs scalar subsystems with positions")
            pos = mmap.structure.positions
            keys = [tuple(np.round(pos[j] - pos[k], 6)) for _, j, k in mmap.edges]
            classes = {key: i for i, key in enumerate(dict.fromkeys(keys))}
            rel = rng.uniform(-1.0, 1.0, size=(len(classes), 2))
            cls = np.array([classes[key] for key in keys])[B.row]
            side = (B.data < 0).astype(int)
            vals = self.eps * rel[cls, side] * np.abs(B.data)
        return sp.csr_matrix((vals, (B.row, B.col)), shape=B.shape)


class Verdict(str, Enum):
    NOT_ROBUSTLY_STABLE = "not-robustly-stable"
    INCONCLUSIVE = "inconclusive"


def _dense(delta) -> np.ndarray:
    return delta.toarray() if sp.issparse(delta) else np.asarray(delta, dtype=float)


def _signs(x: np.ndarray) -> np.ndarray:
    # zero counts as positive so the bound is attained on the whole support
    return np.where(x >= 0, 1.0, -1.0)


def _check_mode(decomp: ModalDecomposition, b: int) -> None:
    if not 0 <= b < decomp.n_observable:
        raise IndexError(f"mode {b} is not observable (N_0 = {decomp.n_observable})")


def worst_case_delta(
    mmap: MeasurementMap, decomp: ModalDecomposition, b: int, eps: float
) -> sp.csr_matrix:
    """Error that makes ``Phi[b, b]`` as negative as possible.

    ``Delta[k, l] = -sign(U[k, b]) sign(Q[l, b]) eps |B[k, l]|`` on the support
    of ``B``.  ``b`` is a 0-based mode index.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    _check_mode(decomp, b)
    B = mmap.B.tocoo()
    su = _signs(decomp.U[:, b])
    sq = _signs(decomp.Q[:, b])
    vals = -su[B.row] * sq[B.col] * eps * np.abs(B.data)
    return sp.csr_matrix((vals, (B.row, B.col)), shape=B.shape)


def phi_matrix(decomp: ModalDecomposition, delta) -> np.ndarray:
    """``Phi = Lambda^-1/2 U^T Delta Q`` with rows beyond ``N_0`` set to zero."""
    D = _dense(delta)
    if D.shape != decomp.B.shape:
        raise ValueError(f"Delta has shape {D.shape}, expected {decomp.B.shape}")
    n0 = decomp.n_observable
    phi = np.zeros((decomp.n_outputs, decomp.n_outputs))
    phi[:n0] = (decomp.U[:, :n0].T @ D @ decomp.Q) / decomp.sigma[:n0, None]
    return phi


def phi_b_value(mmap: MeasurementMap, decomp: ModalDecomposition, b: int, eps: float) -> float:
    """Closed form of the most negative ``Phi[b, b]`` reachable with relative error ``eps``.

    Returns ``-inf`` for a mode whose singular value was declared zero.
    """
    if b >= decomp.n_observable and b < decomp.n_outputs:
        return -np.inf if eps > 0 else 0.0
    _check_mode(decomp, b)
    B = mmap.B.tocoo()
    total = np.sum(np.abs(B.data) * np.abs(decomp.U[B.row, b]) * np.abs(decomp.Q[B.col, b]))
    return float(-eps / decomp.sigma[b] * total)


def worst_case_phis(mmap: MeasurementMap, decomp: ModalDecomposition, eps: float) -> np.ndarray:
    """``phi_b`` for every mode; zero on unobservable modes (they are not controlled)."""
    B = mmap.B.tocoo()
    n0 = decomp.n_observable
    absB = sp.csr_matrix((np.abs(B.data), (B.row, B.col)), shape=B.shape)
    totals = np.einsum("kb,kb->b", np.abs(decomp.U[:, :n0]), absB @ np.abs(decomp.Q[:, :n0]))
    out = np.zeros(decomp.n_outputs)
    out[:n0] = -eps * totals / decomp.sigma[:n0]
    return out


def prop2_check(eps_b: float, n_observable: int, phi_b: float) -> Verdict:
    """One-directional instability certificate.

    ``eps_b`` bounds the entries of the inverse loop gain at some real positive
    ``s``.  Only the destabilising direction can be certified.
    """
    if eps_b <= 0:
        raise ValueError("eps_b must be positive")
    if eps_b < 1.0 / n_observable and abs(phi_b) > 1.0 + n_observable * eps_b:
        return Verdict.NOT_ROBUSTLY_STABLE
    return Verdict.INCONCLUSIVE


def closed_loop_poles(plant, controller, mmap: MeasurementMap, delta=None) -> np.ndarray:
    """Eigenvalues of the assembled closed-loop state matrix, real part descending."""
    from .plant_sim import assemble_closed_loop

    return assemble_closed_loop(plant, controller, mmap, delta).poles()


def symmetry_residual(delta) -> np.ndarray:
    """Row sums of ``Delta``; all zero iff the error keeps ``(B + Delta) 1 = 0``."""
    D = delta.tocsr() if sp.issparse(delta) else np.asarray(delta, dtype=float)
    return np.asarray(D.sum(axis=1)).ravel()


def write_phi_sweep_csv(mmap: MeasurementMap, decomp: ModalDecomposition, eps: float, path) -> None:
    phis = worst_case_phis(mmap, decomp, eps)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["b", "lambda_b", "phi_b"])
        for b in range(decomp.n_observable):
            w.writerow([b + 1, repr(float(decomp.lam[b])), repr(float(phis[b]))])


def write_poles_csv(poles: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["re", "im"])
        for p in poles:
            w.writerow([repr(float(p.real)), repr(float(p.imag))])
