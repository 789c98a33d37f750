"""Scikit-learn estimator wrapper around the transformer solver.

Lets the learned solver participate in sklearn pipelines, grid searches, and
cloning. Inputs are batches of token sequences: X has shape
(n_samples, n_tokens, n_features) and y has shape (n_samples, n_tokens).
For square systems use `encode_system` (features = n_tokens + 1); for Newton
states use `encode_newton_state` (features = 2).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from ._validation import check_system_batch, check_targets
from .model import ModelConfig, encode_system, forward
from .training import TrainConfig, train


class AlgebraformerSolver(RegressorMixin, BaseEstimator):
    """Transformer that regresses per-token solution values from token sequences.

    Parameters
    ----------
    n_layers, d_model, n_heads, mlp_ratio : architecture of the backbone.
    causal : apply a causal attention mask (ablation flag; off by default
        because every output coordinate depends on every token).
    positional : add learned positional embeddings after the encoder.
    init_std : std of the Gaussian weight init.
    epochs, batch_size, lr_max, lr_min, beta1, beta2, weight_decay,
    grad_clip : optimizer settings (AdamW with cosine decay).
    random_state : seed for init and batch shuffling.

    Attributes
    ----------
    weights_ : ModelWeights
        Trained tensors.
    config_ : ModelConfig
        Resolved architecture, including token dimensions seen in fit.
    history_ : MetricsLog
        Per-epoch training metrics.
    """

    def __init__(
        self,
        n_layers: int = 2,
        d_model: int = 64,
        n_heads: int = 4,
        mlp_ratio: int = 4,
        causal: bool = False,
        positional: bool = True,
        init_std: float = 0.02,
        epochs: int = 50,
        batch_size: int = 64,
        lr_max: float = 1e-4,
        lr_min: float = 1e-5,
        beta1: float = 0.9,
        beta2: float = 0.95,
        weight_decay: float = 0.01,
        grad_clip: float | None = None,
        random_state: int = 0,
    ):
        self.n_layers = n_layers
        self.d_model = d_model
        self.n_heads = n_heads
        self.mlp_ratio = mlp_ratio
        self.causal = causal
        self.positional = positional
        self.init_std = init_std
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.random_state = random_state

    def fit(self, X, y):
        X = check_system_batch(X)
        y = check_targets(y, X)
        config = ModelConfig(
            n_layers=self.n_layers,
            d_model=self.d_model,
            n_heads=self.n_heads,
            mlp_ratio=self.mlp_ratio,
            token_dim=X.shape[2],
            max_tokens=X.shape[1],
            init_std=self.init_std,
            causal=self.causal,
            positional=self.positional,
        )
        train_cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr_max=self.lr_max,
            lr_min=self.lr_min,
            beta1=self.beta1,
            beta2=self.beta2,
            weight_decay=self.weight_decay,
            grad_clip=self.grad_clip,
            seed=self.random_state,
        )
        self.weights_, self.history_ = train(config, train_cfg, X, y)
        self.config_ = config
        self.n_tokens_ = X.shape[1]
        self.token_dim_ = X.shape[2]
        return self

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError("this AlgebraformerSolver instance is not fitted yet")

    def predict(self, X):
        self._check_fitted()
        X = check_system_batch(X)
        if X.shape[1:] != (self.n_tokens_, self.token_dim_):
            raise ValueError(
                f"X has token shape {X.shape[1:]}, fit saw {(self.n_tokens_, self.token_dim_)}"
            )
        return forward(self.weights_, X)

    def solve(self, A, b) -> np.ndarray:
        """Predict the solution of one square system (A, b)."""
        self._check_fitted()
        return forward(self.weights_, encode_system(A, b, self.config_.max_tokens))
