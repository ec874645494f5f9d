"""Frame-level feature pipeline.

Each raw frame (a numeric pixel vector) passes through a fixed random
projection with orthonormal rows, is reshaped to a small spatial feature
map, optionally refined by a shape-preserving self-attention block,
average-pooled over space, and linearly embedded. The embedding matrix is
the only trainable part used by the pair-distance training loop; the
softmax head on top of it exists for the supervised pretraining stage.

Reductions over spatial positions use exactly rounded summation
(``math.fsum``), so pooling and attention are invariant/equivariant under
spatial permutations bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptySet,
    InvalidConfig,
    InvalidLabel,
    NonFinite,
    ShapeNotFactorable,
)
from .numkernel import as_matrix, as_vector

__all__ = [
    "AttentionParams",
    "ModelConfig",
    "Model",
    "new_model",
    "encode_frame",
    "nonlocal_attention",
    "gap",
    "embed",
    "softmax_xent",
    "set_features",
]

_PROB_FLOOR = 1e-300


def reduced_channels(channels: int) -> int:
    """Attention bottleneck width: half the channels, at least one."""
    return max(1, channels // 2)


def default_grid(enc_dim: int) -> tuple:
    """Default (H, W, C) factorization of the encoder output.

    Prefers a 4x4 spatial grid, falls back to 2x2 and then to a single
    position when enc_dim does not divide.
    """
    if enc_dim % 16 == 0:
        return (4, 4, enc_dim // 16)
    if enc_dim % 4 == 0:
        return (2, 2, enc_dim // 4)
    return (1, 1, enc_dim)


@dataclass(frozen=True)
class AttentionParams:
    """Projections of the self-attention block (bottleneck width C')."""

    query: np.ndarray  # C' x C
    key: np.ndarray  # C' x C
    value: np.ndarray  # C' x C
    output: np.ndarray  # C x C'

    def __post_init__(self):
        q = as_matrix(self.query, "query projection")
        k = as_matrix(self.key, "key projection")
        v = as_matrix(self.value, "value projection")
        o = as_matrix(self.output, "output projection")
        cp, c = q.shape
        if k.shape != (cp, c) or v.shape != (cp, c) or o.shape != (c, cp):
            raise DimensionMismatch(
                "attention projections are inconsistent: "
                f"q{q.shape} k{k.shape} v{v.shape} o{o.shape}"
            )


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and seed of a feature model.

    ``grid`` is the (H, W, C) shape frames are encoded to; it must satisfy
    H*W*C == enc_dim. The default is a 4x4 spatial grid with enc_dim/16
    channels.
    """

    pixel_dim: int
    enc_dim: int
    emb_dim: int
    classes: int
    seed: int = 0
    grid: tuple = None
    use_attention: bool = True

    def __post_init__(self):
        for name in ("pixel_dim", "enc_dim", "emb_dim", "classes"):
            if not (isinstance(getattr(self, name), int) and getattr(self, name) >= 1):
                raise InvalidConfig(f"{name} must be a positive integer")
        if self.enc_dim > self.pixel_dim:
            raise InvalidConfig("enc_dim must not exceed pixel_dim (projection)")
        if self.grid is None:
            object.__setattr__(self, "grid", default_grid(self.enc_dim))
        grid = tuple(int(g) for g in self.grid)
        object.__setattr__(self, "grid", grid)
        if len(grid) != 3 or any(g < 1 for g in grid):
            raise InvalidConfig(f"grid must be three positive integers, got {grid}")
        h, w, c = grid
        if h * w * c != self.enc_dim:
            raise ShapeNotFactorable(
                f"grid {h}x{w}x{c} does not factor enc_dim={self.enc_dim}"
            )
        # Pooling averages over space, so the embedding input is one value
        # per channel.
        if self.emb_dim > c:
            raise InvalidConfig(
                f"emb_dim must not exceed the channel count {c} of grid {grid}"
            )

    @property
    def channels(self) -> int:
        return self.grid[2]


@dataclass
class Model:
    """Feature model parameters.

    ``encoder`` and ``attention`` are fixed after construction; the
    training loops update only ``embedding`` and (in pretraining) the
    softmax head.
    """

    config: ModelConfig
    encoder: np.ndarray  # enc_dim x pixel_dim
    attention: AttentionParams | None
    embedding: np.ndarray  # emb_dim x channels (the pooled feature length)
    head_weight: np.ndarray  # classes x emb_dim
    head_bias: np.ndarray  # classes

    def copy(self) -> "Model":
        return Model(
            config=self.config,
            encoder=self.encoder.copy(),
            attention=self.attention,
            embedding=self.embedding.copy(),
            head_weight=self.head_weight.copy(),
            head_bias=self.head_bias.copy(),
        )

    def check_finite(self):
        """Raise NonFinite if any trainable parameter went non-finite."""
        if not (
            np.all(np.isfinite(self.embedding))
            and np.all(np.isfinite(self.head_weight))
            and np.all(np.isfinite(self.head_bias))
        ):
            raise NonFinite("model parameters are non-finite; training diverged")


def _orthonormal_rows(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """rows x cols matrix with orthonormal rows (requires rows <= cols)."""
    q, _ = np.linalg.qr(rng.standard_normal((cols, rows)))
    return np.ascontiguousarray(q.T)


def new_model(config: ModelConfig) -> Model:
    """Construct a seeded model.

    The encoder has orthonormal rows; attention starts as an exact
    identity (zero output projection) and stays fixed; the embedding is
    initialized with orthonormal rows; the softmax head starts at zero.
    """
    rng = np.random.default_rng(config.seed & 0xFFFFFFFFFFFFFFFF)
    encoder = _orthonormal_rows(config.enc_dim, config.pixel_dim, rng)
    attention = None
    if config.use_attention:
        c = config.grid[2]
        cp = reduced_channels(c)
        scale = 1.0 / math.sqrt(c)
        attention = AttentionParams(
            query=rng.standard_normal((cp, c)) * scale,
            key=rng.standard_normal((cp, c)) * scale,
            value=rng.standard_normal((cp, c)) * scale,
            output=np.zeros((c, cp)),
        )
    embedding = _orthonormal_rows(config.emb_dim, config.channels, rng)
    return Model(
        config=config,
        encoder=encoder,
        attention=attention,
        embedding=embedding,
        head_weight=np.zeros((config.classes, config.emb_dim)),
        head_bias=np.zeros(config.classes),
    )


def as_feature_map(fmap, name: str = "feature map") -> np.ndarray:
    """Validate a (H, W, C) float64 array with finite entries."""
    f = np.asarray(fmap, dtype=np.float64)
    if f.ndim != 3 or any(s < 1 for s in f.shape):
        raise DimensionMismatch(f"{name}: expected (H, W, C), got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise InvalidConfig(f"{name}: entries must be finite")
    return f


def encode_frame(pixels, model: Model) -> np.ndarray:
    """Project a pixel vector and reshape it to the model's (H, W, C) grid.

    Grid index (h, w, c) reads component (h*W + w)*C + c of the projected
    vector (row-major).
    """
    p = as_vector(pixels, "pixels")
    if p.shape[0] != model.config.pixel_dim:
        raise DimensionMismatch(
            f"pixel vector has length {p.shape[0]}, model expects {model.config.pixel_dim}"
        )
    h, w, c = model.config.grid
    return (model.encoder @ p).reshape(h, w, c)


def nonlocal_attention(fmap, params: AttentionParams) -> np.ndarray:
    """Self-attention over all spatial positions, shape preserving.

    Positions are flattened to N = H*W channel vectors. Pairwise scores
    come from the query/key projections, rows are softmax-normalized,
    projected values are aggregated, and the output projection is added
    back onto the input (residual). Output shape equals input shape for
    any grid, and permuting spatial positions permutes the output
    identically.
    """
    f = as_feature_map(fmap)
    h, w, c = f.shape
    if params.query.shape[1] != c:
        raise DimensionMismatch(
            f"attention expects {params.query.shape[1]} channels, map has {c}"
        )
    n = h * w
    xs = f.reshape(n, c)
    q = xs @ params.query.T  # N x C'
    k = xs @ params.key.T
    v = xs @ params.value.T
    cp = q.shape[1]
    out = np.empty_like(xs)
    for i in range(n):
        scores = k @ q[i]  # score of position i against every j
        top = float(np.max(scores))
        weights = np.exp(scores - top)
        denom = math.fsum(weights.tolist())
        agg = np.empty(cp)
        for t in range(cp):
            agg[t] = math.fsum((weights * v[:, t]).tolist()) / denom
        out[i] = xs[i] + params.output @ agg
    return out.reshape(h, w, c)


def gap(fmap) -> np.ndarray:
    """Mean over all spatial positions, one value per channel."""
    f = as_feature_map(fmap)
    h, w, c = f.shape
    flat = f.reshape(h * w, c)
    return np.array(
        [math.fsum(flat[:, t].tolist()) / (h * w) for t in range(c)],
        dtype=np.float64,
    )


def embed(z, model: Model) -> np.ndarray:
    """Apply the trainable linear embedding."""
    v = as_vector(z, "embedding input")
    if v.shape[0] != model.embedding.shape[1]:
        raise DimensionMismatch(
            f"embedding expects length {model.embedding.shape[1]}, got {v.shape[0]}"
        )
    return model.embedding @ v


def softmax_xent(z, label: int, model: Model):
    """Cross-entropy of the softmax head with analytic gradients.

    Returns ``(loss, grad_head, grad_bias, grad_input)`` where
    ``grad_input`` is the gradient with respect to ``z``. Logits are
    stabilized by max subtraction and the predicted probability is
    clamped at 1e-300 before the log.
    """
    v = as_vector(z, "head input")
    k = model.head_weight.shape[0]
    if not (isinstance(label, (int, np.integer)) and 0 <= label < k):
        raise InvalidLabel(f"label {label!r} outside [0, {k})")
    if v.shape[0] != model.head_weight.shape[1]:
        raise DimensionMismatch(
            f"head expects length {model.head_weight.shape[1]}, got {v.shape[0]}"
        )
    logits = model.head_weight @ v + model.head_bias
    shifted = logits - np.max(logits)
    expv = np.exp(shifted)
    probs = expv / np.sum(expv)
    loss = -math.log(max(float(probs[label]), _PROB_FLOOR))
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    grad_head = np.outer(dlogits, v)
    grad_bias = dlogits
    grad_input = model.head_weight.T @ dlogits
    return loss, grad_head, grad_bias, grad_input


def frame_feature(pixels, model: Model) -> np.ndarray:
    """Encoder-level feature of one frame: encode, attend, pool."""
    fmap = encode_frame(pixels, model)
    if model.attention is not None:
        fmap = nonlocal_attention(fmap, model.attention)
    return gap(fmap)


def set_features(frames, model: Model) -> np.ndarray:
    """Embedded feature matrix of a frame list, one column per frame."""
    if len(frames) == 0:
        raise EmptySet("frame list is empty")
    lengths = {np.asarray(fr).shape for fr in frames}
    if len(lengths) != 1:
        raise DimensionMismatch(f"frames have mixed shapes: {sorted(lengths)}")
    cols = [embed(frame_feature(fr, model), model) for fr in frames]
    return np.ascontiguousarray(np.stack(cols, axis=1))
