"""Spectral assembly of 1-D boundary value problems and dataset generation.

Three equation families on [0, 7.5] with homogeneous Dirichlet conditions:

  diffusion            -(K u')' = f
  reaction-diffusion   -(K u')' + q u = f
  advection-diffusion  -(K u')' + (v u)' = f

Each is collocated on a Chebyshev-Gauss-Lobatto grid; the boundary rows and
columns are dropped (interior restriction), giving a dense, ill-conditioned
square operator. Interior quantities are re-indexed so node coordinates
ascend. Datasets label each system with the LU solution and record the
condition number.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import chebyshev
from .linalg import SingularMatrixError, condition_number, lu_solve

DOMAIN = (0.0, 7.5)
Q_SUPPORT = (3.0, 4.5)
Q_VALUE = 1.0 / 3.0
N_FOURIER_MODES = 8
MAX_LABEL_MAGNITUDE = 1e6
LABEL_RESIDUAL_TOL = 1e-8
DATASET_FORMAT = "lsd-v1"
GENERATOR_VERSION = 1


class DatasetError(Exception):
    pass


class EquationKind(Enum):
    DIFFUSION = "diffusion"
    REACTION_DIFFUSION = "reaction"
    ADVECTION_DIFFUSION = "advection"

    @classmethod
    def parse(cls, name: str) -> "EquationKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ValueError(f"unknown equation kind {name!r}")


@dataclass(frozen=True)
class CoefficientSample:
    """One draw of all coefficient fields, evaluated at the grid nodes."""

    alpha_k: float
    omega: float
    alpha_f: float
    r_field: np.ndarray  # unit-node-average random field
    q_values: np.ndarray
    v_alpha: float


@dataclass(frozen=True)
class LinearSystemSample:
    """One labeled system: interior operator, right-hand side, LU solution."""

    A: np.ndarray
    b: np.ndarray
    x: np.ndarray
    cond: float
    kind: EquationKind
    seed: int


def solution_grid(dim: int) -> chebyshev.ChebyshevGrid:
    """Grid whose interior has exactly `dim` nodes on the physical domain."""
    if dim < 4:
        raise ValueError(f"system dimension must be >= 4, got {dim}")
    grid = chebyshev.gauss_lobatto_nodes(dim + 1)
    return chebyshev.ChebyshevGrid(degree=grid.degree, nodes=grid.nodes, interval=DOMAIN)


def diffusivity_values(alpha: float, omega: float, points: np.ndarray) -> np.ndarray:
    return 1.0 + alpha * np.cos(2.0 * np.pi * omega * points)


def sample_K(rng: np.random.Generator, grid: chebyshev.ChebyshevGrid) -> np.ndarray:
    """Node values of K(x) = 1 + alpha cos(2 pi omega x)."""
    alpha = rng.uniform(0.25, 0.75)
    omega = rng.uniform(0.01, 0.75)
    return diffusivity_values(alpha, omega, grid.points)


def _unit_average_field(rng: np.random.Generator, points: np.ndarray, length: float) -> np.ndarray:
    """Smooth random field, nonnegative with node average exactly 1.

    Built from a handful of Fourier modes with 1/k-damped uniform
    coefficients, then shifted to be nonnegative and rescaled to unit mean.
    """
    k = np.arange(1, N_FOURIER_MODES + 1)
    a = rng.uniform(-1.0, 1.0, N_FOURIER_MODES) / k
    b = rng.uniform(-1.0, 1.0, N_FOURIER_MODES) / k
    phase = 2.0 * np.pi * np.outer(points, k) / length
    field = np.cos(phase) @ a + np.sin(phase) @ b
    field -= field.min()
    mean = field.mean()
    if mean < 1e-12:
        return np.ones_like(field)
    return field / mean


def sample_f(rng: np.random.Generator, grid: chebyshev.ChebyshevGrid) -> np.ndarray:
    """Node values of f = (1 - alpha) + alpha * r(x) with r a unit-average field."""
    alpha = rng.uniform(0.0, 1.0)
    a, b = grid.interval
    r = _unit_average_field(rng, grid.points, b - a)
    return (1.0 - alpha) + alpha * r


def reaction_values(points: np.ndarray) -> np.ndarray:
    lo, hi = Q_SUPPORT
    return np.where((points >= lo) & (points <= hi), Q_VALUE, 0.0)


def sample_coefficients(
    rng: np.random.Generator, grid: chebyshev.ChebyshevGrid
) -> CoefficientSample:
    """Draw every coefficient field in one fixed order (reproducible per rng)."""
    alpha_k = rng.uniform(0.25, 0.75)
    omega = rng.uniform(0.01, 0.75)
    alpha_f = rng.uniform(0.0, 1.0)
    a, b = grid.interval
    r_field = _unit_average_field(rng, grid.points, b - a)
    v_alpha = rng.uniform(-2.0, 2.0)
    return CoefficientSample(
        alpha_k=float(alpha_k),
        omega=float(omega),
        alpha_f=float(alpha_f),
        r_field=r_field,
        q_values=reaction_values(grid.points),
        v_alpha=float(v_alpha),
    )


def source_values(coeffs: CoefficientSample) -> np.ndarray:
    return (1.0 - coeffs.alpha_f) + coeffs.alpha_f * coeffs.r_field


def _scaled_diff_matrix(grid: chebyshev.ChebyshevGrid) -> np.ndarray:
    D = chebyshev.diff_matrix(chebyshev.gauss_lobatto_nodes(grid.degree))
    a, b = grid.interval
    if (a, b) == (-1.0, 1.0):
        return D.matrix
    return chebyshev.scale_to_interval(D, a, b).matrix


def _interior_ascending(full: np.ndarray) -> np.ndarray:
    """Restrict a full-grid quantity to interior nodes, reordered ascending."""
    if full.ndim == 1:
        return np.ascontiguousarray(full[1:-1][::-1])
    return np.ascontiguousarray(full[1:-1, 1:-1][::-1, ::-1])


def _assemble_full(
    kind: EquationKind, coeffs: CoefficientSample, grid: chebyshev.ChebyshevGrid, D: np.ndarray
) -> np.ndarray:
    K = diffusivity_values(coeffs.alpha_k, coeffs.omega, grid.points)
    L = -D @ (K[:, None] * D)
    if kind is EquationKind.REACTION_DIFFUSION:
        L = L + np.diag(coeffs.q_values)
    elif kind is EquationKind.ADVECTION_DIFFUSION:
        L = L + coeffs.v_alpha * D  # conservative form (v u)' with constant v
    return L


def assemble_operator(
    kind: EquationKind, coeffs: CoefficientSample, grid: chebyshev.ChebyshevGrid
) -> np.ndarray:
    """Interior operator matrix for one equation, ascending node order."""
    L = _assemble_full(kind, coeffs, grid, _scaled_diff_matrix(grid))
    return _interior_ascending(L)


def interior_points(grid: chebyshev.ChebyshevGrid) -> np.ndarray:
    return np.ascontiguousarray(grid.points[1:-1][::-1])


def sample_seed(master_seed: int, index: int) -> int:
    """Per-sample integer seed derived from the master seed."""
    return int(np.random.SeedSequence((master_seed, index)).generate_state(1)[0])


def _build_sample(
    kind: EquationKind,
    grid: chebyshev.ChebyshevGrid,
    D: np.ndarray,
    seed: int,
) -> LinearSystemSample | None:
    """One generation attempt; None when the sample is rejected."""
    rng = np.random.default_rng(seed)
    coeffs = sample_coefficients(rng, grid)
    A = _interior_ascending(_assemble_full(kind, coeffs, grid, D))
    b = _interior_ascending(source_values(coeffs))
    try:
        x = lu_solve(A, b)
    except SingularMatrixError:
        return None
    if np.max(np.abs(x)) > MAX_LABEL_MAGNITUDE:
        return None
    residual = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
    if residual > LABEL_RESIDUAL_TOL:
        return None
    cond = condition_number(A)
    if not np.isfinite(cond) or cond <= 1.0:
        return None
    return LinearSystemSample(A=A, b=b, x=x, cond=cond, kind=kind, seed=seed)


def generate_dataset(
    kind: EquationKind, count: int, dim: int, seed: int
) -> tuple[list[LinearSystemSample], int]:
    """Generate labeled systems; returns (samples, rejection count).

    Per-sample seeds are derived from (seed, attempt index), so generation is
    order-independent and reproducible sample by sample.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    grid = solution_grid(dim)
    D = _scaled_diff_matrix(grid)
    samples: list[LinearSystemSample] = []
    rejections = 0
    attempt = 0
    max_attempts = 2 * count + 10
    while len(samples) < count:
        if attempt >= max_attempts:
            raise DatasetError(
                f"aborted after {attempt} attempts with {rejections} rejections"
            )
        sample = _build_sample(kind, grid, D, sample_seed(seed, attempt))
        attempt += 1
        if sample is None:
            rejections += 1
        else:
            samples.append(sample)
    if attempt > 0 and rejections / attempt > 0.10:
        raise DatasetError(
            f"rejection rate {rejections}/{attempt} exceeds 10%"
        )
    return samples, rejections


def add_noise(b: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """Perturb b by a Gaussian direction of relative magnitude `level`."""
    if level < 0:
        raise ValueError("noise level must be >= 0")
    b = np.asarray(b, dtype=np.float64)
    if level == 0.0:
        return b.copy()
    g = rng.standard_normal(b.shape[0])
    return b + (level * np.linalg.norm(b) / np.linalg.norm(g)) * g


def save_dataset(
    directory,
    samples: list[LinearSystemSample],
    kind: EquationKind,
    dim: int,
    seed: int,
    rejections: int,
) -> None:
    """Write manifest.json + samples.bin in the lsd-v1 layout.

    Record layout per sample: n as u32 little-endian, then A (n*n doubles,
    row-major), b (n), x (n), cond (1), all little-endian doubles.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": DATASET_FORMAT,
        "kind": kind.value,
        "count": len(samples),
        "n": dim,
        "seed": seed,
        "generator_version": GENERATOR_VERSION,
        "rejections": rejections,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    with open(directory / "samples.bin", "wb") as fh:
        for s in samples:
            n = s.b.shape[0]
            fh.write(struct.pack("<I", n))
            fh.write(s.A.astype("<f8", copy=False).tobytes())
            fh.write(s.b.astype("<f8", copy=False).tobytes())
            fh.write(s.x.astype("<f8", copy=False).tobytes())
            fh.write(struct.pack("<d", s.cond))


def load_dataset(directory) -> tuple[list[LinearSystemSample], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != DATASET_FORMAT:
        raise DatasetError(f"unsupported dataset format {manifest.get('format')!r}")
    kind = EquationKind.parse(manifest["kind"])
    samples: list[LinearSystemSample] = []
    raw = (directory / "samples.bin").read_bytes()
    offset = 0
    for _ in range(manifest["count"]):
        (n,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        A = np.frombuffer(raw, dtype="<f8", count=n * n, offset=offset).copy().reshape(n, n)
        offset += 8 * n * n
        b = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).copy()
        offset += 8 * n
        x = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).copy()
        offset += 8 * n
        (cond,) = struct.unpack_from("<d", raw, offset)
        offset += 8
        samples.append(
            LinearSystemSample(A=A, b=b, x=x, cond=cond, kind=kind, seed=manifest["seed"])
        )
    if offset != len(raw):
        raise DatasetError("samples.bin has trailing bytes; file is corrupt")
    return samples, manifest
