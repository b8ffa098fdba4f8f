"""Spatial structures and local relative measurement maps.

A measurement map ``B`` (``N_z x N_y``) stacks one row per sensor.  Every row
compares a convex combination of the outputs of one subsystem with a convex
combination of the outputs of a neighbouring subsystem, so that ``B @ 1 = 0``.
Three builders are provided: a vehicle chain, its periodic counterpart (ring)
and a hexagonal segmented mirror with piston/tip/tilt degrees of freedom.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SpatialStructure",
    "MeasurementMap",
    "SegmentGeometry",
    "ValidationReport",
    "build_chain",
    "build_ring",
    "build_hex_mirror",
    "validate_relative",
    "validate_local",
    "laplacian",
    "write_coo",
    "read_coo",
]

_ZERO_WEIGHT = 1e-13


@dataclass(frozen=True)
class SpatialStructure:
    """Positions of the ``M`` subsystems, in units of the subsystem spacing."""

    dimension: int
    positions: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.shape[1] != self.dimension:
            raise ValueError(
                f"positions have {pos.shape[1]} coordinates, expected {self.dimension}"
            )
        object.__setattr__(self, "positions", pos)

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    def distance(self, j: int, k: int) -> float:
        return float(np.linalg.norm(self.positions[j] - self.positions[k]))

    def min_separation(self) -> float:
        """Smallest distance between two distinct subsystems."""
        if self.size < 2:
            return np.inf
        from scipy.spatial.distance import pdist

        return float(pdist(self.positions).min())

    def is_separated(self, tol: float = 1e-9) -> bool:
        """Distinct subsystems at least one spacing apart (up to rounding)."""
        return self.min_separation() >= 1.0 - tol


@dataclass
class MeasurementMap:
    """Sparse relative-sensing matrix with its interconnection graph.

    ``edges[l] = (l, j, k)`` records that sensor ``l`` compares subsystem ``j``
    (positive block) with subsystem ``k`` (negative block).
    """

    B: sp.csr_matrix
    block_size: int
    edges: list[tuple[int, int, int]]
    structure: SpatialStructure | None = None
    name: str = ""

    def __post_init__(self):
        self.B = sp.csr_matrix(self.B, dtype=float)
        if self.B.shape[1] % self.block_size:
            raise ValueError("column count is not a multiple of the block size")

    @property
    def n_sensors(self) -> int:
        return self.B.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_subsystems(self) -> int:
        return self.B.shape[1] // self.block_size

    def dense(self) -> np.ndarray:
        return self.B.toarray()

    def block(self, k: int) -> slice:
        """Column slice holding the outputs of subsystem ``k``."""
        return slice(k * self.block_size, (k + 1) * self.block_size)


@dataclass
class SegmentGeometry:
    """Hexagon geometry of a segmented mirror (all lengths in metres).

    Sensor ``l`` sits at ``sensor_points[l]`` on the edge shared by segments
    ``sensor_pairs[l] = (j, k)``.  On a flat gapless lattice both halves of the
    sensor coincide, so a single point is stored together with its barycentric
    weights with respect to the reference points of each of the two segments.
    """

    edge_length: float
    centers: np.ndarray
    vertices: np.ndarray
    h_points: np.ndarray
    sensor_points: np.ndarray
    sensor_pairs: np.ndarray
    weights_pos: np.ndarray
    weights_neg: np.ndarray

    @property
    def pitch(self) -> float:
        """Distance between neighbouring segment centres."""
        return self.edge_length * np.sqrt(3.0)

    @property
    def n_segments(self) -> int:
        return self.centers.shape[0]

    def sensors_of(self, k: int) -> np.ndarray:
        """Indices of the sensors mounted on an edge of segment ``k``."""
        return np.flatnonzero((self.sensor_pairs == k).any(axis=1))

    def null_witnesses(self) -> dict[str, np.ndarray]:
        """Unit-norm output vectors that a flat bisector-sensed mirror cannot see.

        Piston, the two global tilts and defocus (each segment tangent to the
        paraboloid ``z = |x|^2`` at its centre), evaluated at the h-points.
        """
        h = self.h_points
        c = self.centers[:, None, :]
        fields = {
            "piston": np.ones(h.shape[:2]),
            "tip": h[..., 0],
            "tilt": h[..., 1],
            "defocus": np.sum(c * c, axis=2) + 2 * np.sum(c * (h - c), axis=2),
        }
        return {name: v.ravel() / np.linalg.norm(v) for name, v in fields.items()}

    def to_json(self) -> dict:
        return {
            "edge_length_m": self.edge_length,
            "segments": [
                {
                    "center": c.tolist(),
                    "vertices": v.tolist(),
                    "h_points": h.tolist(),
                }
                for c, v, h in zip(self.centers, self.vertices, self.h_points)
            ],
            "sensors": [
                {
                    "point": p.tolist(),
                    "adjacency": [int(j), int(k)],
                    "weights": [wp.tolist(), wn.tolist()],
                }
                for p, (j, k), wp, wn in zip(
                    self.sensor_points, self.sensor_pairs, self.weights_pos, self.weights_neg
                )
            ],
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


@dataclass
class ValidationReport:
    """Outcome of a structural check; ``failures`` maps row/edge to a message."""

    passed: bool
    worst_violation: float = 0.0
    failures: dict[int, str] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.passed


def build_chain(M: int) -> MeasurementMap:
    """Vehicle chain: sensor ``k`` reads ``y[k+1] - y[k]``."""
    if M < 2:
        raise ValueError(f"a chain needs at least 2 subsystems, got {M}")
    rows = np.repeat(np.arange(M - 1), 2)
    cols = np.column_stack([np.arange(M - 1), np.arange(1, M)]).ravel()
    vals = np.tile([-1.0, 1.0], M - 1)
    B = sp.csr_matrix((vals, (rows, cols)), shape=(M - 1, M))
    edges = [(k, k + 1, k) for k in range(M - 1)]
    structure = SpatialStructure(1, np.arange(M, dtype=float)[:, None])
    return MeasurementMap(B, 1, edges, structure, name=f"chain{M}")


def build_ring(M: int) -> MeasurementMap:
    """Periodic chain: sensor ``k`` reads ``y[(k+1) % M] - y[k]``.

    Subsystems are placed on a circle whose chord between neighbours is 1.
    """
    if M < 3:
        raise ValueError(f"a ring needs at least 3 subsystems, got {M}")
    nxt = (np.arange(M) + 1) % M
    rows = np.repeat(np.arange(M), 2)
    cols = np.column_stack([np.arange(M), nxt]).ravel()
    vals = np.tile([-1.0, 1.0], M)
    B = sp.csr_matrix((vals, (rows, cols)), shape=(M, M))
    edges = [(k, int(nxt[k]), k) for k in range(M)]
    radius = 0.5 / np.sin(np.pi / M)
    angle = 2 * np.pi * np.arange(M) / M
    structure = SpatialStructure(2, radius * np.column_stack([np.cos(angle), np.sin(angle)]))
    return MeasurementMap(B, 1, edges, structure, name=f"ring{M}")


# axial neighbour directions on a hexagonal lattice
_HEX_DIRS = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]


def _hex_cells(rings: int, hole_rings: int) -> list[tuple[int, int]]:
    cells = []
    for q in range(-rings + 1, rings):
        for r in range(-rings + 1, rings):
            d = (abs(q) + abs(r) + abs(q + r)) // 2
            if hole_rings <= d < rings:
                cells.append((q, r))
    return cells


def _barycentric(tri: np.ndarray, pts: np.ndarray) -> np.ndarray:
    T = np.vstack([tri.T, np.ones(3)])
    P = np.vstack([np.atleast_2d(pts).T, np.ones(len(np.atleast_2d(pts)))])
    w = np.linalg.solve(T, P).T
    w[np.abs(w) < _ZERO_WEIGHT] = 0.0
    return w / w.sum(axis=1, keepdims=True)


def build_hex_mirror(
    rings: int,
    hole_rings: int = 0,
    edge_length: float = 0.7,
    sensor_offset: float = 0.25,
) -> tuple[SpatialStructure, MeasurementMap, SegmentGeometry]:
    """Flat segmented mirror of flat-top hexagons with two edge sensors per shared edge.

    Segments are the lattice cells at hexagonal distance ``hole_rings <= d <
    rings`` from the centre, so ``rings=5, hole_rings=0`` gives 61 segments.
    The three outputs of a segment are the heights of reference points placed
    at the corners of the equilateral triangle circumscribing its hexagon;
    every point of the segment is then a convex combination of them.  Sensors
    sit on each shared edge at ``+-sensor_offset * edge_length`` from its
    midpoint.  Positions of the returned structure are in units of the centre
    pitch ``edge_length * sqrt(3)``.
    """
    if rings < 1:
        raise ValueError(f"rings must be >= 1, got {rings}")
    if not 0 <= hole_rings < rings:
        raise ValueError(f"invalid geometry: hole_rings={hole_rings} must lie in [0, {rings})")
    if not 0 < sensor_offset < 0.5:
        raise ValueError(f"sensor_offset must lie in (0, 0.5), got {sensor_offset}")
    if edge_length <= 0:
        raise ValueError("edge_length must be positive")

    a = float(edge_length)
    cells = _hex_cells(rings, hole_rings)
    index = {c: i for i, c in enumerate(cells)}
    q = np.array([c[0] for c in cells], dtype=float)
    r = np.array([c[1] for c in cells], dtype=float)
    centers = np.column_stack([1.5 * a * q, np.sqrt(3.0) * a * (r + q / 2)])

    ang = np.deg2rad(np.arange(0, 360, 60))
    hexagon = a * np.column_stack([np.cos(ang), np.sin(ang)])
    tri_ang = np.deg2rad([210.0, 330.0, 90.0])
    triangle = np.sqrt(3.0) * a * np.column_stack([np.cos(tri_ang), np.sin(tri_ang)])
    vertices = centers[:, None, :] + hexagon[None]
    h_points = centers[:, None, :] + triangle[None]

    points, pairs = [], []
    for (cq, cr), j in index.items():
        for dq, dr in _HEX_DIRS[:3]:
            k = index.get((cq + dq, cr + dr))
            if k is None:
                continue
            mid = 0.5 * (centers[j] + centers[k])
            axis = centers[k] - centers[j]
            tangent = np.array([-axis[1], axis[0]]) / np.linalg.norm(axis)
            for sgn in (-1.0, 1.0):
                points.append(mid + sgn * sensor_offset * a * tangent)
                pairs.append((j, k))
    points = np.array(points).reshape(-1, 2)
    pairs = np.array(pairs, dtype=int).reshape(-1, 2)

    # weights are translation invariant: evaluate in each segment's local frame
    w_pos = _barycentric(triangle, points - centers[pairs[:, 0]]) if len(points) else np.zeros((0, 3))
    w_neg = _barycentric(triangle, points - centers[pairs[:, 1]]) if len(points) else np.zeros((0, 3))

    n_z, M = len(points), len(cells)
    rows = np.repeat(np.arange(n_z), 6)
    cols = np.column_stack([3 * pairs[:, [0]] + np.arange(3), 3 * pairs[:, [1]] + np.arange(3)]).ravel()
    vals = np.column_stack([w_pos, -w_neg]).ravel()
    B = sp.csr_matrix((vals, (rows, cols)), shape=(n_z, 3 * M))
    B.eliminate_zeros()

    structure = SpatialStructure(2, centers / (np.sqrt(3.0) * a))
    edges = [(l, int(j), int(k)) for l, (j, k) in enumerate(pairs)]
    mmap = MeasurementMap(B, 3, edges, structure, name=f"hex{rings}-{hole_rings}")
    geometry = SegmentGeometry(a, centers, vertices, h_points, points, pairs, w_pos, w_neg)
    return structure, mmap, geometry


def validate_relative(mmap: MeasurementMap, tol: float = 1e-12) -> ValidationReport:
    """Check that every row of ``B`` is a unit-gain relative measurement.

    Each row must touch exactly two subsystem blocks, with same-signed entries
    inside each block summing to ``+1`` and ``-1`` respectively.  The worst
    violation is the largest deviation of a block sum from its target (or of a
    wrong-signed entry from zero).
    """
    B = mmap.B.tocsr()
    N = mmap.block_size
    failures: dict[int, str] = {}
    worst = 0.0
    for l in range(B.shape[0]):
        cols = B.indices[B.indptr[l]:B.indptr[l + 1]]
        vals = B.data[B.indptr[l]:B.indptr[l + 1]]
        nz = vals != 0
        cols, vals = cols[nz], vals[nz]
        blocks = np.unique(cols // N)
        if len(blocks) != 2:
            failures[l] = f"touches {len(blocks)} subsystem blocks"
            worst = max(worst, float(np.abs(vals).sum()) if len(blocks) < 2 else 1.0)
            continue
        sums = []
        for blk in blocks:
            v = vals[cols // N == blk]
            if not (np.all(v > 0) or np.all(v < 0)):
                failures[l] = f"mixed signs in block {blk}"
                worst = max(worst, float(min(v[v > 0].sum(), -v[v < 0].sum())))
            sums.append(v.sum())
        pos, neg = max(sums), min(sums)
        dev = max(abs(pos - 1.0), abs(neg + 1.0))
        worst = max(worst, dev)
        if dev > tol and l not in failures:
            failures[l] = f"block sums {pos:+.6g}/{neg:+.6g}, expected +1/-1"
    return ValidationReport(not failures, worst, failures)


def validate_local(
    mmap: MeasurementMap,
    structure: SpatialStructure | None = None,
    rho: float = 1.5,
) -> ValidationReport:
    """Check that every sensor connects subsystems at most ``rho`` apart."""
    if rho < 1:
        raise ValueError(f"range rho must be >= 1, got {rho}")
    structure = structure if structure is not None else mmap.structure
    if structure is None:
        raise ValueError("a spatial structure is required")
    failures = {}
    worst = 0.0
    for l, j, k in mmap.edges:
        d = structure.distance(j, k)
        if d > rho:
            failures[l] = f"sensor {l} links subsystems {j} and {k} at distance {d:.4g} > {rho}"
            worst = max(worst, d - rho)
    return ValidationReport(not failures, worst, failures)


def laplacian(mmap: MeasurementMap) -> sp.csr_matrix:
    """Generalised graph Laplacian ``L = B^T B``."""
    B = mmap.B
    return (B.T @ B).tocsr()


def write_coo(matrix, path) -> None:
    """Write a sparse matrix as ``row, col, value`` lines after a ``# rows cols nnz`` header."""
    coo = sp.coo_matrix(matrix)
    coo.sum_duplicates()
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i}, {j}, {float(v)!r}\n")


def read_coo(path) -> sp.csr_matrix:
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
        n_rows, n_cols, nnz = (int(x) for x in header)
        data = np.loadtxt(fh, delimiter=",", ndmin=2) if nnz else np.zeros((0, 3))
    if data.shape[0] != nnz:
        raise ValueError(f"header announces {nnz} entries, found {data.shape[0]}")
    return sp.csr_matrix(
        (data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n_rows, n_cols)
    )
