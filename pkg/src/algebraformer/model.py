"""Column-patch transformer that maps a linear system (A, b) to its solution.

A system of dimension n becomes n tokens; token i holds the i-th column of A
with b_i appended, so memory grows as n^2 rather than n^4. Tokens pass
through a linear encoder, learned positional embeddings, a stack of pre-norm
blocks

    x_hat = x + Attn(norm1(x));   x_next = x_hat + MLP(norm2(x_hat))

a final layer norm, and a per-token linear decoder producing one scalar per
token. Attention is full bidirectional by default: the whole solution is
produced in one pass and every output coordinate depends on every column, so
a causal mask would be wrong for this task (it remains available as a config
flag for ablations).

A second encoding handles Newton-step prediction: token i is the pair
((A^T b)_i, x_i) of the current iterate, and the decoder output is read as
the update direction.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from ._validation import as_vector, check_system


class TooManyTokensError(ValueError):
    pass


class FormatError(Exception):
    pass


WEIGHTS_FORMAT = "algebraformer-weights-v1"


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    mlp_ratio: int
    token_dim: int
    max_tokens: int
    out_dim_per_token: int = 1
    init_std: float = 0.02
    causal: bool = False
    positional: bool = True
    preset: str = "custom"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}"
            )
        if min(self.n_layers, self.token_dim, self.max_tokens, self.mlp_ratio) < 1:
            raise ValueError("n_layers, token_dim, max_tokens, mlp_ratio must be >= 1")
        if self.out_dim_per_token != 1:
            raise ValueError("only one output scalar per token is supported")


def paper_config(token_dim: int = 65, max_tokens: int = 64, **overrides) -> ModelConfig:
    """Full-scale preset: 12 blocks, width 256, 8 heads, 4x MLP (~9.5M params)."""
    return ModelConfig(
        n_layers=12, d_model=256, n_heads=8, mlp_ratio=4,
        token_dim=token_dim, max_tokens=max_tokens, preset="paper", **overrides,
    )


def desk_config(token_dim: int, max_tokens: int, **overrides) -> ModelConfig:
    """Small preset that trains in minutes on a CPU: 2 blocks, width 64, 4 heads."""
    return ModelConfig(
        n_layers=2, d_model=64, n_heads=4, mlp_ratio=4,
        token_dim=token_dim, max_tokens=max_tokens, preset="desk", **overrides,
    )


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape map; iteration order fixes init and file layout."""
    d, f = cfg.d_model, cfg.token_dim
    hidden = cfg.mlp_ratio * d
    shapes: dict[str, tuple[int, ...]] = {
        "encoder.weight": (f, d),
        "encoder.bias": (d,),
        "pos_embed": (cfg.max_tokens, d),
    }
    for i in range(cfg.n_layers):
        p = f"blocks.{i}."
        shapes[p + "norm1.gain"] = (d,)
        shapes[p + "norm1.bias"] = (d,)
        for name in ("wq", "wk", "wv", "wo"):
            shapes[p + f"attn.{name}"] = (d, d)
        shapes[p + "norm2.gain"] = (d,)
        shapes[p + "norm2.bias"] = (d,)
        shapes[p + "mlp.w_in"] = (d, hidden)
        shapes[p + "mlp.b_in"] = (hidden,)
        shapes[p + "mlp.w_out"] = (hidden, d)
        shapes[p + "mlp.b_out"] = (d,)
    shapes["final_norm.gain"] = (d,)
    shapes["final_norm.bias"] = (d,)
    shapes["decoder.weight"] = (d, 1)
    shapes["decoder.bias"] = (1,)
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(cfg).values())


@dataclass
class ModelWeights:
    config: ModelConfig
    params: dict[str, np.ndarray]


def init_weights(cfg: ModelConfig, seed: int) -> ModelWeights:
    """Gaussian init with variance-preserving depth scaling.

    Weights are N(0, init_std); the residual-branch output projections wo and
    mlp.w_out shrink by 1/sqrt(2 n_layers); norm gains start at 1, all biases
    at 0. Fully determined by the seed.
    """
    rng = np.random.default_rng(seed)
    residual_scale = 1.0 / np.sqrt(2.0 * cfg.n_layers)
    params: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape)
        elif name.endswith((".bias", ".b_in", ".b_out")):
            params[name] = np.zeros(shape)
        else:
            w = rng.normal(0.0, cfg.init_std, size=shape)
            if name.endswith((".wo", ".w_out")):
                w *= residual_scale
            params[name] = w
    return ModelWeights(config=cfg, params=params)


def encode_system(A, b, max_tokens: int | None = None) -> np.ndarray:
    """Tokens for a square system: token i = [i-th column of A; b_i], shape (n, n+1)."""
    A, b = check_system(A, b)
    n = b.shape[0]
    if max_tokens is not None and n > max_tokens:
        raise TooManyTokensError(f"system dimension {n} exceeds max_tokens {max_tokens}")
    return np.ascontiguousarray(np.concatenate([A.T, b[:, None]], axis=1))


def decode_system(tokens: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of encode_system."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[1] != tokens.shape[0] + 1:
        raise ValueError(f"expected (n, n+1) tokens, got {tokens.shape}")
    return np.ascontiguousarray(tokens[:, :-1].T), tokens[:, -1].copy()


def encode_newton_state(atb, x_k) -> np.ndarray:
    """Tokens for an optimizer state: token i = [(A^T b)_i, (x_k)_i], shape (n, 2)."""
    atb = as_vector(atb, "atb", require_finite=False)
    x_k = as_vector(x_k, "x_k", require_finite=False)
    if atb.shape != x_k.shape:
        raise ad.ShapeMismatchError(f"length mismatch: {atb.shape} vs {x_k.shape}")
    return np.ascontiguousarray(np.stack([atb, x_k], axis=1))


def encode_systems(samples, max_tokens: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stack a dataset of LinearSystemSamples into (inputs, targets) arrays."""
    X = np.stack([encode_system(s.A, s.b, max_tokens) for s in samples])
    Y = np.stack([s.x for s in samples])
    return X, Y


def forward_tensors(
    params: dict[str, "ad.Tensor | np.ndarray"],
    cfg: ModelConfig,
    tokens: ad.Tensor,
    collect_attention: list | None = None,
) -> ad.Tensor:
    """Batched forward pass on (batch, tokens, features); returns (batch, tokens).

    `params` may hold tape-watched tensors (training) or plain arrays
    (inference). When `collect_attention` is a list, per-layer softmax maps
    are appended to it.
    """
    B, T, F = tokens.shape
    if F != cfg.token_dim:
        raise ad.ShapeMismatchError(f"token feature width {F} != config token_dim {cfg.token_dim}")
    if T > cfg.max_tokens:
        raise TooManyTokensError(f"{T} tokens exceed max_tokens {cfg.max_tokens}")
    p = params
    n_heads = cfg.n_heads
    dh = cfg.d_model // n_heads

    x = ad.add(ad.matmul(tokens, p["encoder.weight"]), p["encoder.bias"])
    if cfg.positional:
        x = ad.add(x, ad.take_rows(p["pos_embed"], T))
    mask = None
    if cfg.causal:
        mask = np.triu(np.full((T, T), -1e30), k=1)

    for i in range(cfg.n_layers):
        blk = f"blocks.{i}."
        pre = ad.layer_norm(x, p[blk + "norm1.gain"], p[blk + "norm1.bias"])
        q = ad.split_heads(ad.matmul(pre, p[blk + "attn.wq"]), n_heads)
        k = ad.split_heads(ad.matmul(pre, p[blk + "attn.wk"]), n_heads)
        v = ad.split_heads(ad.matmul(pre, p[blk + "attn.wv"]), n_heads)
        scores = ad.mul_scalar(ad.matmul(q, ad.transpose_last(k)), 1.0 / np.sqrt(dh))
        if mask is not None:
            scores = ad.add(scores, mask)
        attn = ad.softmax_last_axis(scores)
        if collect_attention is not None:
            collect_attention.append(attn.data.copy())
        ctx = ad.merge_heads(ad.matmul(attn, v))
        x = ad.add(x, ad.matmul(ctx, p[blk + "attn.wo"]))
        pre2 = ad.layer_norm(x, p[blk + "norm2.gain"], p[blk + "norm2.bias"])
        h = ad.gelu(ad.add(ad.matmul(pre2, p[blk + "mlp.w_in"]), p[blk + "mlp.b_in"]))
        x = ad.add(x, ad.add(ad.matmul(h, p[blk + "mlp.w_out"]), p[blk + "mlp.b_out"]))

    x = ad.layer_norm(x, p["final_norm.gain"], p["final_norm.bias"])
    out = ad.add(ad.matmul(x, p["decoder.weight"]), p["decoder.bias"])
    return ad.squeeze_last(out)


def forward(weights: ModelWeights, tokens, return_attention: bool = False):
    """Inference on one token sequence (n, features) or a batch (B, n, features)."""
    tokens = np.asarray(tokens, dtype=np.float64)
    single = tokens.ndim == 2
    if single:
        tokens = tokens[None]
    if tokens.ndim != 3:
        raise ad.ShapeMismatchError(f"tokens must be 2-D or 3-D, got shape {tokens.shape}")
    maps: list | None = [] if return_attention else None
    out = forward_tensors(weights.params, weights.config, ad.Tensor(tokens), maps).data
    if single:
        out = out[0]
    if return_attention:
        return out, maps
    return out


def solve_system(weights: ModelWeights, A, b) -> np.ndarray:
    """Predict the solution of one system in a single forward pass."""
    return forward(weights, encode_system(A, b, weights.config.max_tokens))


def save_weights(path, weights: ModelWeights) -> None:
    """Header (length-prefixed JSON) + flat little-endian float64 payload."""
    shapes = parameter_shapes(weights.config)
    tensors = []
    offset = 0
    for name, shape in shapes.items():
        tensors.append({"name": name, "shape": list(shape), "offset": offset})
        offset += int(np.prod(shape))
    header = {
        "format": WEIGHTS_FORMAT,
        "config": asdict(weights.config),
        "tensors": tensors,
        "total_doubles": offset,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in shapes:
            fh.write(weights.params[name].astype("<f8", copy=False).tobytes())


def load_weights(path, expected_config: ModelConfig | None = None) -> ModelWeights:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError("file too short for a weights header")
    (hlen,) = struct.unpack_from("<Q", raw, 0)
    if 8 + hlen > len(raw):
        raise FormatError("truncated weights header")
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable weights header: {exc}") from exc
    if header.get("format") != WEIGHTS_FORMAT:
        raise FormatError(f"unknown weights format {header.get('format')!r}")
    try:
        cfg = ModelConfig(**header["config"])
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad config in header: {exc}") from exc
    if expected_config is not None and cfg != expected_config:
        raise FormatError("checkpoint config does not match the expected config")
    shapes = parameter_shapes(cfg)
    listed = {t["name"]: tuple(t["shape"]) for t in header["tensors"]}
    if listed != shapes:
        raise FormatError("tensor table does not match shapes derived from the config")
    payload = np.frombuffer(raw, dtype="<f8", offset=8 + hlen)
    if payload.size != header["total_doubles"]:
        raise FormatError(
            f"payload holds {payload.size} doubles, header says {header['total_doubles']}"
        )
    params: dict[str, np.ndarray] = {}
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        size = int(np.prod(shape))
        chunk = payload[t["offset"] : t["offset"] + size]
        # frombuffer views are read-only; training updates params in place
        params[t["name"]] = chunk.copy().reshape(shape)
    return ModelWeights(config=cfg, params=params)


def with_config(weights: ModelWeights, **overrides) -> ModelWeights:
    """Copy with config flags changed (e.g. toggling the causal mask for ablation)."""
    return ModelWeights(config=replace(weights.config, **overrides), params=dict(weights.params))
