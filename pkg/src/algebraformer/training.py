"""Training loop (AdamW + cosine decay), fine-tuning, metrics, noise benchmark.

The loss is the per-sample sum of squared errors between the predicted and
true solution vectors, averaged over the mini-batch. "Relative MSE" is
defined here as ||pred - truth||^2 / ||truth||^2; the metrics CSV carries
that definition in its header comment.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .bvp import add_noise
from .linalg import (
    LinAlgError,
    lu_solve,
    qr_least_squares,
    svd_least_squares,
)
from .model import (
    ModelConfig,
    ModelWeights,
    encode_system,
    forward,
    forward_tensors,
    init_weights,
    save_weights,
)

ADAM_EPS = 1e-8
METRICS_HEADER = ["epoch", "train_loss", "test_mse", "test_rel_mse", "lr", "seconds"]
REL_MSE_NOTE = "# relative mse = squared 2-norm of (pred - truth) divided by squared 2-norm of truth"


class DivergenceError(Exception):
    pass


class DegenerateTruthError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 128
    lr_max: float = 1e-4
    lr_min: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.01
    grad_clip: float | None = None
    seed: int = 0
    fine_tune: bool = False
    fine_tune_lr: float = 5e-5

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_min > self.lr_max:
            raise ValueError(f"lr_min {self.lr_min} exceeds lr_max {self.lr_max}")
        for beta in (self.beta1, self.beta2):
            if not 0.0 < beta < 1.0:
                raise ValueError(f"betas must lie in (0, 1), got {beta}")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    test_mse: float
    test_rel_mse: float
    lr: float
    seconds: float


@dataclass
class MetricsLog:
    rows: list[EpochMetrics] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(REL_MSE_NOTE + "\n")
            writer = csv.writer(fh)
            writer.writerow(METRICS_HEADER)
            for r in self.rows:
                writer.writerow(
                    [r.epoch, repr(r.train_loss), repr(r.test_mse), repr(r.test_rel_mse),
                     repr(r.lr), repr(r.seconds)]
                )


def relative_mse(pred, truth) -> float:
    """||pred - truth||^2 / ||truth||^2."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    denom = float(np.linalg.norm(truth))
    if denom < 1e-300:
        raise DegenerateTruthError("truth vector has (near-)zero norm")
    return float(np.linalg.norm(pred - truth) ** 2 / denom**2)


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float) -> float:
    """Half-cosine from lr_max at step 0 down to lr_min at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr_max
    return lr_min + (lr_max - lr_min) * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0


def _decays(name: str) -> bool:
    # norm gains/biases and the positional table are exempt from weight decay
    return "norm" not in name and name != "pos_embed"


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    """In-place AdamW update with decoupled weight decay and bias correction."""
    if cfg.grad_clip is not None:
        total = math.sqrt(sum(float((g**2).sum()) for g in grads.values()))
        if total > cfg.grad_clip > 0:
            scale = cfg.grad_clip / total
            grads = {k: g * scale for k, g in grads.items()}
    state.step += 1
    bc1 = 1.0 - cfg.beta1**state.step
    bc2 = 1.0 - cfg.beta2**state.step
    for name, w in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        if cfg.weight_decay != 0.0 and _decays(name):
            update = update + cfg.weight_decay * w
        w -= lr * update


def evaluate(weights: ModelWeights, X: np.ndarray, Y: np.ndarray, chunk: int = 256):
    """Mean per-sample MSE and mean relative MSE over a dataset."""
    mses = []
    rels = []
    for lo in range(0, len(X), chunk):
        pred = forward(weights, X[lo : lo + chunk])
        diff = pred - Y[lo : lo + chunk]
        mses.append((diff**2).sum(axis=1))
        rels.append((diff**2).sum(axis=1) / (Y[lo : lo + chunk] ** 2).sum(axis=1))
    return float(np.concatenate(mses).mean()), float(np.concatenate(rels).mean())


def mean_predictor_mse(train_y: np.ndarray, test_y: np.ndarray) -> float:
    """Test MSE of the constant predictor that outputs the train-label mean."""
    center = train_y.mean(axis=0)
    return float(((test_y - center) ** 2).sum(axis=1).mean())


def _optimize(
    weights: ModelWeights,
    cfg: TrainConfig,
    train_x: np.ndarray,
    train_y: np.ndarray,
    eval_x: np.ndarray | None,
    eval_y: np.ndarray | None,
    lr_fn,
    out_dir=None,
    checkpoint_every: int = 0,
) -> tuple[ModelWeights, MetricsLog]:
    n = len(train_x)
    if n == 0:
        raise ValueError("training dataset is empty")
    if train_x.shape[:2] != train_y.shape[:2]:
        raise ValueError(f"inputs {train_x.shape} and targets {train_y.shape} disagree")
    params = weights.params
    state = AdamState(params)
    batches = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * batches
    log = MetricsLog()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng(np.random.SeedSequence((cfg.seed, epoch))).permutation(n)
        epoch_loss = 0.0
        for bi in range(batches):
            idx = order[bi * cfg.batch_size : (bi + 1) * cfg.batch_size]
            lr = lr_fn(step, total_steps)
            tape = ad.Tape()
            watched = {k: tape.watch(v) for k, v in params.items()}
            pred = forward_tensors(watched, weights.config, ad.Tensor(train_x[idx]))
            loss = ad.mse_loss(pred, ad.Tensor(train_y[idx]))
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                raise DivergenceError(f"loss became {loss_val} at epoch {epoch}, batch {bi}")
            tape.backward(loss)
            grads = {
                k: g if (g := tape.grad(watched[k])) is not None else np.zeros_like(params[k])
                for k in params
            }
            adamw_step(params, grads, state, lr, cfg)
            epoch_loss += loss_val * len(idx)
            step += 1
        if eval_x is not None and len(eval_x):
            test_mse, test_rel = evaluate(weights, eval_x, eval_y)
        else:
            test_mse = test_rel = float("nan")
        log.rows.append(
            EpochMetrics(
                epoch=epoch,
                train_loss=epoch_loss / n,
                test_mse=test_mse,
                test_rel_mse=test_rel,
                lr=lr,
                seconds=time.perf_counter() - t0,
            )
        )
        if out_dir is not None and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_weights(out_dir / f"checkpoint-epoch-{epoch + 1:04d}.bin", weights)
    if out_dir is not None:
        save_weights(out_dir / "model.bin", weights)
        log.to_csv(out_dir / "metrics.csv")
    return weights, log


def train(
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    train_x: np.ndarray,
    train_y: np.ndarray,
    eval_x: np.ndarray | None = None,
    eval_y: np.ndarray | None = None,
    *,
    out_dir=None,
    checkpoint_every: int = 0,
) -> tuple[ModelWeights, MetricsLog]:
    """Train from a fresh init under the cosine schedule; deterministic per seed."""
    weights = init_weights(model_cfg, cfg.seed)
    if cfg.epochs == 0:
        log = MetricsLog()
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            save_weights(Path(out_dir) / "model.bin", weights)
            log.to_csv(Path(out_dir) / "metrics.csv")
        return weights, log

    def lr_fn(step, total):
        return cosine_lr(step, total, cfg.lr_max, cfg.lr_min)

    return _optimize(
        weights, cfg, train_x, train_y, eval_x, eval_y, lr_fn, out_dir, checkpoint_every
    )


def fine_tune(
    pretrained: ModelWeights,
    train_x: np.ndarray,
    train_y: np.ndarray,
    epochs: int,
    eval_x: np.ndarray | None = None,
    eval_y: np.ndarray | None = None,
    cfg: TrainConfig | None = None,
    *,
    out_dir=None,
    checkpoint_every: int = 0,
) -> tuple[ModelWeights, MetricsLog]:
    """Continue training a checkpoint at the fixed fine-tuning rate (no schedule)."""
    if cfg is None:
        cfg = TrainConfig(epochs=epochs, fine_tune=True)
    else:
        cfg = TrainConfig(
            epochs=epochs, batch_size=cfg.batch_size, lr_max=cfg.lr_max, lr_min=cfg.lr_min,
            beta1=cfg.beta1, beta2=cfg.beta2, weight_decay=cfg.weight_decay,
            grad_clip=cfg.grad_clip, seed=cfg.seed, fine_tune=True,
            fine_tune_lr=cfg.fine_tune_lr,
        )
    weights = ModelWeights(
        config=pretrained.config, params={k: v.copy() for k, v in pretrained.params.items()}
    )
    if epochs == 0:
        return weights, MetricsLog()
    return _optimize(
        weights, cfg, train_x, train_y, eval_x, eval_y,
        lambda step, total: cfg.fine_tune_lr, out_dir, checkpoint_every,
    )


def noise_benchmark(
    weights: ModelWeights,
    samples,
    levels,
    rcond: float = 1e-15,
    seed: int = 0,
) -> list[dict]:
    """Median relative MSE per noise level for the model and classical solvers.

    Each sample's right-hand side is perturbed by a Gaussian direction of the
    given relative magnitude; all four solvers see the same perturbed b and
    are scored against the clean label x.
    """
    rows = []
    for li, level in enumerate(levels):
        noisy = [
            add_noise(s.b, level, np.random.default_rng(np.random.SeedSequence((seed, li, i))))
            for i, s in enumerate(samples)
        ]
        tokens = np.stack(
            [encode_system(s.A, nb, weights.config.max_tokens) for s, nb in zip(samples, noisy)]
        )
        preds = forward(weights, tokens)
        per_method: dict[str, list[float]] = {"model": [], "lu": [], "qr": [], "svd": []}
        for i, s in enumerate(samples):
            per_method["model"].append(relative_mse(preds[i], s.x))
            for key, solver in (
                ("lu", lambda A, b: lu_solve(A, b)),
                ("qr", lambda A, b: qr_least_squares(A, b)),
                ("svd", lambda A, b: svd_least_squares(A, b, rcond)),
            ):
                try:
                    per_method[key].append(relative_mse(solver(s.A, noisy[i]), s.x))
                except LinAlgError:
                    per_method[key].append(float("inf"))
        rows.append(
            {
                "level": float(level),
                **{k: float(np.median(v)) for k, v in per_method.items()},
            }
        )
    return rows


def write_benchmark_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "model", "lu", "qr", "svd"])
        for r in rows:
            writer.writerow([repr(r["level"]), repr(r["model"]), repr(r["lu"]),
                             repr(r["qr"]), repr(r["svd"])])
