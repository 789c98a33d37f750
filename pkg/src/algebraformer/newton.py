"""Newton's method for p-norm regression min_x ||Ax - b||_p^p, p > 1.

Analytic derivatives with r = Ax - b:

    grad f = p A^T (|r|^(p-1) . sign r)
    hess f = p (p-1) A^T diag(|r|^(p-2)) A

The Hessian diagonal smooths near-zero residuals with |r| -> max(|r|, 1e-8)
since the p-2 power is singular there; the gradient needs no smoothing for
the p used here. Each step solves H p = g (with a Levenberg ladder when the
solve reports singularity) and updates x <- x - p. The direction solve is
pluggable, which is how a trained model replaces the inner linear solver.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import as_matrix, as_vector
from .linalg import SingularMatrixError, lu_solve
from .model import ModelWeights, encode_newton_state, forward

HESSIAN_SMOOTHING = 1e-8
LEVENBERG_LAMBDA0 = 1e-10
LEVENBERG_FACTOR = 10.0
LEVENBERG_MAX_TRIES = 40
TRAJECTORY_FORMAT = "ntd-v1"

STOP_GRADIENT = "gradient_norm"
STOP_DECREMENT = "objective_decrement"
STOP_MAX_ITER = "max_iter"


@dataclass(frozen=True)
class LpProblem:
    A: np.ndarray  # (m, n), m >= n
    b: np.ndarray  # (m,)
    p: float

    def __post_init__(self):
        A = as_matrix(self.A)
        b = as_vector(self.b)
        if A.shape[0] < A.shape[1]:
            raise ValueError(f"need rows >= cols, got {A.shape}")
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"A has {A.shape[0]} rows, b has length {b.shape[0]}")
        if self.p <= 1.0:
            raise ValueError(f"p must be > 1, got {self.p}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.A.shape[1]


@dataclass
class NewtonTrajectory:
    iterates: list[np.ndarray]
    directions: list[np.ndarray]
    objectives: list[float]
    converged: bool
    stop_reason: str


def objective(prob: LpProblem, x) -> float:
    r = prob.A @ np.asarray(x, dtype=np.float64) - prob.b
    return float(np.sum(np.abs(r) ** prob.p))


def gradient(prob: LpProblem, x) -> np.ndarray:
    r = prob.A @ np.asarray(x, dtype=np.float64) - prob.b
    return prob.p * (prob.A.T @ (np.abs(r) ** (prob.p - 1.0) * np.sign(r)))


def hessian(prob: LpProblem, x) -> np.ndarray:
    r = prob.A @ np.asarray(x, dtype=np.float64) - prob.b
    w = np.maximum(np.abs(r), HESSIAN_SMOOTHING) ** (prob.p - 2.0)
    return prob.p * (prob.p - 1.0) * (prob.A.T @ (w[:, None] * prob.A))


def newton_direction(prob: LpProblem, x, g) -> np.ndarray:
    """Solve H p = g, escalating a +lambda*I shift when the solve is singular."""
    H = hessian(prob, x)
    try:
        return lu_solve(H, g)
    except SingularMatrixError:
        lam = LEVENBERG_LAMBDA0
        eye = np.eye(H.shape[0])
        for _ in range(LEVENBERG_MAX_TRIES):
            try:
                return lu_solve(H + lam * eye, g)
            except SingularMatrixError:
                lam *= LEVENBERG_FACTOR
        raise


class ExactSolve:
    """Direction provider that performs the exact Newton solve."""

    def __call__(self, prob: LpProblem, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        return newton_direction(prob, x, g)


class LearnedDirection:
    """Direction provider backed by a trained state-encoding model."""

    def __init__(self, weights: ModelWeights):
        self.weights = weights
        self._atb: np.ndarray | None = None
        self._prob_id: int | None = None

    def __call__(self, prob: LpProblem, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self._prob_id != id(prob):
            self._atb = prob.A.T @ prob.b
            self._prob_id = id(prob)
        return forward(self.weights, encode_newton_state(self._atb, x))


def _iterate(
    prob: LpProblem,
    x0: np.ndarray,
    direction_fn,
    tol: float,
    max_iter: int,
    stop: str,
    line_search: bool,
    timings: list[float] | None = None,
) -> NewtonTrajectory:
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if stop not in (STOP_GRADIENT, STOP_DECREMENT):
        raise ValueError(f"unknown stop criterion {stop!r}")
    x = np.asarray(x0, dtype=np.float64).copy()
    if x.shape != (prob.n,):
        raise ValueError(f"x0 must have shape ({prob.n},), got {x.shape}")
    iterates = [x.copy()]
    directions: list[np.ndarray] = []
    objectives = [objective(prob, x)]
    converged = False
    reason = STOP_MAX_ITER
    for _ in range(max_iter):
        g = gradient(prob, x)
        if stop == STOP_GRADIENT and np.linalg.norm(g) < tol:
            converged = True
            reason = STOP_GRADIENT
            break
        t0 = time.perf_counter()
        p = np.asarray(direction_fn(prob, x, g), dtype=np.float64)
        if timings is not None:
            timings.append(time.perf_counter() - t0)
        if line_search:
            # Armijo backtracking along -p with halving steps
            f0 = objectives[-1]
            slope = float(g @ p)
            t = 1.0
            while t > 1e-12 and objective(prob, x - t * p) > f0 - 1e-4 * t * slope:
                t *= 0.5
            p = t * p
        x_new = x - p
        f_new = objective(prob, x_new)
        iterates.append(x_new.copy())
        directions.append(p.copy())
        objectives.append(f_new)
        if stop == STOP_DECREMENT and abs(objectives[-2] - f_new) < tol:
            converged = True
            reason = STOP_DECREMENT
            break
        x = x_new
    return NewtonTrajectory(
        iterates=iterates,
        directions=directions,
        objectives=objectives,
        converged=converged,
        stop_reason=reason,
    )


def newton_solve(
    prob: LpProblem,
    x0,
    tol: float = 1e-5,
    max_iter: int = 100,
    stop: str = STOP_DECREMENT,
    line_search: bool = False,
) -> NewtonTrajectory:
    return _iterate(prob, x0, ExactSolve(), tol, max_iter, stop, line_search)


def accelerated_newton(
    prob: LpProblem,
    provider,
    tol: float = 1e-5,
    max_iter: int = 100,
    stop: str = STOP_DECREMENT,
    line_search: bool = False,
    x0: np.ndarray | None = None,
) -> tuple[NewtonTrajectory, dict]:
    """Newton loop with the direction supplied by `provider`; reports timings."""
    per_direction: list[float] = []
    if x0 is None:
        x0 = np.zeros(prob.n)
    t0 = time.perf_counter()
    traj = _iterate(prob, x0=x0, direction_fn=provider, tol=tol,
                    max_iter=max_iter, stop=stop, line_search=line_search,
                    timings=per_direction)
    total = time.perf_counter() - t0
    timing = {
        "total_seconds": total,
        "direction_seconds": per_direction,
        "first_direction_seconds": per_direction[0] if per_direction else float("nan"),
    }
    return traj, timing


def sample_problem(m: int, n: int, p: float, seed: int) -> LpProblem:
    """Uniform [0, 1) data with A scaled to unit Frobenius norm, b to unit 2-norm."""
    if m < n:
        raise ValueError(f"need m >= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.0, 1.0, (m, n))
    b = rng.uniform(0.0, 1.0, m)
    A /= np.linalg.norm(A)
    b /= np.linalg.norm(b)
    return LpProblem(A=A, b=b, p=float(p))


@dataclass
class TrajectoryDataset:
    """Supervised (state -> direction) pairs harvested from Newton runs."""

    m: int
    n: int
    p: float
    tol: float
    count: int
    converged_count: int
    seed: int
    atb: np.ndarray      # (records, n)
    states: np.ndarray   # (records, n)
    targets: np.ndarray  # (records, n)
    # which generated problem each record came from; -1 after reload (the
    # wire format does not carry it, but replay tests on fresh datasets do)
    problem_index: np.ndarray | None = None

    def encode(self) -> tuple[np.ndarray, np.ndarray]:
        """Token inputs (records, n, 2) and per-token targets (records, n)."""
        X = np.stack([encode_newton_state(a, s) for a, s in zip(self.atb, self.states)])
        return X, self.targets.copy()


def problem_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence((master_seed, index)).generate_state(1)[0])


def generate_trajectories(
    count: int,
    m: int,
    n: int,
    p: float,
    tol: float,
    seed: int,
    max_iter: int = 100,
) -> TrajectoryDataset:
    """Run Newton from x0 = 0 on `count` fresh problems and record every step.

    Non-converged runs contribute no pairs but are counted. Pair k of a run
    maps (A^T b, x_k) to the direction p_k that was actually applied.
    """
    atb_rows: list[np.ndarray] = []
    state_rows: list[np.ndarray] = []
    target_rows: list[np.ndarray] = []
    indices: list[int] = []
    converged = 0
    for i in range(count):
        prob = sample_problem(m, n, p, problem_seed(seed, i))
        traj = newton_solve(prob, np.zeros(n), tol=tol, max_iter=max_iter)
        if not traj.converged:
            continue
        converged += 1
        atb = prob.A.T @ prob.b
        for x_k, p_k in zip(traj.iterates[:-1], traj.directions):
            atb_rows.append(atb)
            state_rows.append(x_k)
            target_rows.append(p_k)
            indices.append(i)
    shape = (len(atb_rows), n)
    return TrajectoryDataset(
        m=m, n=n, p=float(p), tol=float(tol), count=count, converged_count=converged,
        seed=seed,
        atb=np.array(atb_rows).reshape(shape),
        states=np.array(state_rows).reshape(shape),
        targets=np.array(target_rows).reshape(shape),
        problem_index=np.array(indices, dtype=np.int64),
    )


def save_trajectories(directory, ds: TrajectoryDataset) -> None:
    """manifest.json + records: n as u32-LE, then A^T b, x_k, p_k as doubles."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": TRAJECTORY_FORMAT,
        "m": ds.m,
        "n": ds.n,
        "p": ds.p,
        "tol": ds.tol,
        "count": ds.count,
        "converged": ds.converged_count,
        "records": int(ds.targets.shape[0]),
        "seed": ds.seed,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    with open(directory / "pairs.bin", "wb") as fh:
        for a, s, t in zip(ds.atb, ds.states, ds.targets):
            fh.write(struct.pack("<I", ds.n))
            fh.write(a.astype("<f8", copy=False).tobytes())
            fh.write(s.astype("<f8", copy=False).tobytes())
            fh.write(t.astype("<f8", copy=False).tobytes())


def load_trajectories(directory) -> TrajectoryDataset:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != TRAJECTORY_FORMAT:
        raise ValueError(f"unsupported trajectory format {manifest.get('format')!r}")
    n = manifest["n"]
    records = manifest["records"]
    raw = (directory / "pairs.bin").read_bytes()
    atb = np.empty((records, n))
    states = np.empty((records, n))
    targets = np.empty((records, n))
    offset = 0
    for r in range(records):
        (nn,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if nn != n:
            raise ValueError(f"record {r} has n={nn}, manifest says {n}")
        for arr in (atb, states, targets):
            arr[r] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset)
            offset += 8 * n
    if offset != len(raw):
        raise ValueError("pairs.bin has trailing bytes; file is corrupt")
    return TrajectoryDataset(
        m=manifest["m"], n=n, p=manifest["p"], tol=manifest["tol"],
        count=manifest["count"], converged_count=manifest["converged"],
        seed=manifest["seed"], atb=atb, states=states, targets=targets,
    )
