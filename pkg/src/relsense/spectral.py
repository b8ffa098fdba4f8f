"""Modal decomposition of a sensing map and observability spectra.

Mode indices are 0-based in this module (mode ``k`` has the ``k+1``-th largest
singular value); exported tables use 1-based mode numbers.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, hadamard

from .sensing_model import MeasurementMap, SpatialStructure

__all__ = [
    "ModalDecomposition",
    "WalshCertificate",
    "Census",
    "decompose",
    "noise_gain",
    "sample_noise_modal",
    "small_eigen_census",
    "walsh_poorly_observable",
    "verify_walsh_bound",
    "write_spectrum_csv",
    "save_certificate",
    "DecompositionError",
]


class DecompositionError(ArithmeticError):
    pass


@dataclass
class ModalDecomposition:
    """``B = U diag(sigma) Q^T`` with ``sigma`` sorted in descending order.

    ``U`` is ``N_z x N_y``.  When the map has fewer sensors than outputs the
    trailing columns of ``U`` (all belonging to zero singular values) are zero.
    """

    B: np.ndarray
    U: np.ndarray
    Q: np.ndarray
    sigma: np.ndarray
    n_observable: int
    rank_tol: float

    @property
    def lam(self) -> np.ndarray:
        return self.sigma**2

    @property
    def n_outputs(self) -> int:
        return self.Q.shape[0]

    @property
    def observable(self) -> slice:
        return slice(0, self.n_observable)

    def modal(self, y: np.ndarray) -> np.ndarray:
        """Modal coordinates ``Q^T y`` (works along the last axis)."""
        return np.asarray(y) @ self.Q


@dataclass
class WalshCertificate:
    """Orthonormal group-wise constant vectors with small ``||B y||``."""

    vectors: np.ndarray  # (N_c, N_y)
    residuals: np.ndarray
    bound: float
    codes: np.ndarray
    groups: list[np.ndarray] = field(repr=False)

    @property
    def n_codes(self) -> int:
        return self.vectors.shape[0]

    def to_json(self) -> dict:
        return {
            "vectors": self.vectors.tolist(),
            "residuals": self.residuals.tolist(),
            "bound": self.bound,
            "codes": self.codes.astype(int).tolist(),
        }


@dataclass
class Census:
    count: int
    indices: np.ndarray
    zero_count: int
    threshold: float


def decompose(mmap: MeasurementMap | np.ndarray, rank_tol: float = 1e-9) -> ModalDecomposition:
    """Dense SVD of the measurement map.

    Singular values below ``rank_tol * sigma[0]`` are declared zero and the
    corresponding modes unobservable.
    """
    B = mmap.dense() if isinstance(mmap, MeasurementMap) else np.asarray(mmap, dtype=float)
    n_z, n_y = B.shape
    try:
        U_full, s, Vt = np.linalg.svd(B, full_matrices=True)
    except LinAlgError as exc:
        cond = np.linalg.cond(B) if B.size else np.nan
        raise DecompositionError(f"SVD did not converge (condition number {cond:.3g})") from exc

    sigma = np.zeros(n_y)
    sigma[: len(s)] = s
    U = np.zeros((n_z, n_y))
    m = min(n_z, n_y)
    U[:, :m] = U_full[:, :m]
    top = sigma[0] if n_y else 0.0
    if top > 0:
        n_obs = int(np.count_nonzero(sigma >= rank_tol * top))
    else:
        n_obs = 0
    sigma[n_obs:] = 0.0
    return ModalDecomposition(B, U, Vt.T.copy(), sigma, n_obs, rank_tol)


def noise_gain(decomp: ModalDecomposition, sigma_noise: float) -> np.ndarray:
    """Per-mode variance ``sigma_noise**2 / lambda_k`` of the rescaled noise.

    Unobservable modes get ``inf``.
    """
    if sigma_noise <= 0:
        raise ValueError("noise standard deviation must be positive")
    out = np.full(decomp.n_outputs, np.inf)
    obs = decomp.observable
    out[obs] = sigma_noise**2 / decomp.lam[obs]
    return out


def sample_noise_modal(
    decomp: ModalDecomposition,
    sigma_noise: float,
    n_samples: int,
    seed: int,
    batch: int = 20_000,
) -> np.ndarray:
    """Monte-Carlo variances of ``nu = Lambda^-1 Q^T B^T n`` on observable modes.

    Sensor noise is i.i.d. Gaussian with standard deviation ``sigma_noise``.
    Samples are drawn in batches from a single seeded generator, so the result
    only depends on ``(seed, n_samples)``.
    """
    if n_samples < 1000:
        raise ValueError("at least 1000 samples are required")
    n_obs = decomp.n_observable
    if sigma_noise == 0:
        return np.zeros(n_obs)
    project = (decomp.Q[:, :n_obs].T @ decomp.B.T) / decomp.lam[:n_obs, None]
    rng = np.random.default_rng(seed)
    acc = np.zeros(n_obs)
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        n = rng.normal(0.0, sigma_noise, size=(m, decomp.B.shape[0]))
        nu = n @ project.T
        acc += np.sum(nu**2, axis=0)
        done += m
    return acc / n_samples


def small_eigen_census(decomp: ModalDecomposition, c: float) -> Census:
    """Observable modes with ``lambda_k < c * lambda_1``; zero modes counted apart."""
    if not 0 < c < 1:
        raise ValueError("threshold c must lie in (0, 1)")
    lam = decomp.lam
    obs = np.arange(decomp.n_observable)
    idx = obs[lam[obs] < c * lam[0]]
    return Census(len(idx), idx, decomp.n_outputs - decomp.n_observable, c)


def _sorted_subsystems(structure: SpatialStructure) -> np.ndarray:
    pos = structure.positions
    # lexsort sorts by the last key first
    keys = tuple(np.round(pos[:, a], 9) for a in reversed(range(pos.shape[1])))
    return np.lexsort(keys)


def walsh_poorly_observable(
    structure: SpatialStructure, mmap: MeasurementMap, n_codes: int
) -> WalshCertificate:
    """Build orthonormal poorly observable configurations from a Walsh code.

    Subsystems are sorted along the first spatial coordinate (ties broken by
    the following ones) and cut into ``n_codes`` contiguous groups of equal
    size.  Each code row of a Sylvester-Hadamard matrix assigns ``+-1/sqrt(N_y)``
    to all outputs of each group.
    """
    if n_codes < 1 or n_codes & (n_codes - 1):
        raise ValueError(f"number of codes must be a power of two, got {n_codes}")
    M = mmap.n_subsystems
    if structure.size != M:
        raise ValueError("structure and map disagree on the number of subsystems")
    if n_codes > M or M % n_codes:
        raise ValueError(f"cannot split {M} subsystems into {n_codes} equal groups")

    N = mmap.block_size
    n_y = mmap.n_outputs
    order = _sorted_subsystems(structure)
    groups = np.split(order, n_codes)
    codes = hadamard(n_codes)
    vectors = np.zeros((n_codes, n_y))
    for i, code in enumerate(codes):
        for g, members in enumerate(groups):
            cols = (N * members[:, None] + np.arange(N)).ravel()
            vectors[i, cols] = code[g] / np.sqrt(n_y)
    residuals = np.linalg.norm(mmap.B @ vectors.T, axis=0)
    return WalshCertificate(vectors, residuals, float(n_codes * residuals.max()), codes, groups)


def verify_walsh_bound(cert: WalshCertificate, decomp: ModalDecomposition) -> bool:
    """Does ``L`` have at least ``N_c`` eigenvalues at or below the certified bound?"""
    lam = decomp.lam
    slack = 1e-12 * max(lam[0], 1.0)
    gram = cert.vectors @ cert.vectors.T
    if not np.allclose(gram, np.eye(cert.n_codes), atol=1e-10):
        return False
    return int(np.count_nonzero(lam <= cert.bound + slack)) >= cert.n_codes


def write_spectrum_csv(decomp: ModalDecomposition, path, sigma_noise: float = 1.0) -> None:
    gain = noise_gain(decomp, sigma_noise)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "sigma", "lambda", "noise_variance"])
        for k, (s, var) in enumerate(zip(decomp.sigma, gain), start=1):
            w.writerow([k, repr(float(s)), repr(float(s * s)), "inf" if np.isinf(var) else repr(float(var))])


def save_certificate(cert: WalshCertificate, path) -> None:
    with open(path, "w") as fh:
        json.dump(cert.to_json(), fh, indent=1)
