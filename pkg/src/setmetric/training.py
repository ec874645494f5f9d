"""Contrastive training of the embedding on set pairs.

Training runs in two stages. The pretraining stage fits the embedding and
softmax head with per-frame cross-entropy SGD. The pair stage alternates,
for each sampled pair of sets, an exact coefficient solve (embedding
fixed) with one SGD step on the embedding (coefficients fixed); the loss
being descended is

    y * mu1 * d  +  (1 - y) * mu2 * max(0, margin - d)
    +  lambda1 * ||alpha||^2  +  lambda2 * ||beta||^2,

with d the squared hull-to-hull distance of the embedded sets. The
encoder and attention block stay frozen throughout, so encoder-level
frame features are computed once and cached.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .cscr import CSCRSolution, Hyperparams, solve_pair
from .errors import (
    DimensionMismatch,
    InsufficientClasses,
    InsufficientSets,
    InvalidConfig,
)
from .features import Model, frame_feature, softmax_xent
from .numkernel import as_matrix, residual_sqnorm

__all__ = [
    "PairSample",
    "TrainConfig",
    "EpochRecord",
    "TrainHistory",
    "contrastive_loss",
    "loss_grad_embedding",
    "sample_pairs",
    "pretrain_level1",
    "train_level2",
]

_SEED_MASK = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class PairSample:
    """Indices of two sets and their same-class indicator."""

    i: int
    j: int
    y_ij: int


@dataclass(frozen=True)
class TrainConfig:
    epochs_level1: int = 30
    epochs_level2: int = 30
    learning_rate_level1: float = 0.05
    learning_rate_level2: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    pairs_per_epoch: int = 32
    positive_fraction: float = 0.5

    def __post_init__(self):
        for name in ("epochs_level1", "epochs_level2", "batch_size", "pairs_per_epoch"):
            if not (isinstance(getattr(self, name), int) and getattr(self, name) >= 1):
                raise InvalidConfig(f"{name} must be a positive integer")
        for name in ("learning_rate_level1", "learning_rate_level2"):
            value = getattr(self, name)
            if not (value >= 0 and np.isfinite(value)):
                raise InvalidConfig(f"{name} must be a finite nonnegative real")
        if not 0.0 < self.positive_fraction < 1.0:
            raise InvalidConfig("positive_fraction must lie strictly between 0 and 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    converged_fraction: float
    residual_mean: float = 0.0
    residual_max: float = 0.0


@dataclass
class TrainHistory:
    """Per-epoch training statistics."""

    records: list = field(default_factory=list)

    def append(self, record: EpochRecord):
        if not all(np.isfinite(v) for v in
                   (record.mean_loss, record.converged_fraction,
                    record.residual_mean, record.residual_max)):
            raise InvalidConfig("history records must be finite")
        self.records.append(record)

    def mean_losses(self) -> list:
        return [r.mean_loss for r in self.records]

    def to_csv(self, path):
        """Write the loss curve (epoch, mean_loss, converged_fraction)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_loss", "converged_fraction"])
            for r in self.records:
                writer.writerow([r.epoch, repr(r.mean_loss), repr(r.converged_fraction)])


def _ordered_mean(values) -> float:
    """Exactly rounded mean, independent of accumulation order."""
    return math.fsum(sorted(values)) / len(values)


def contrastive_loss(x, y, y_ij: int, sol: CSCRSolution, h: Hyperparams) -> float:
    """Pair loss at the solved coefficients.

    The distance term is recomputed from ``x``, ``y`` and the coefficients
    in ``sol`` (not taken from ``sol.distance``), so callers may evaluate
    the loss at perturbed features with the coefficients held fixed.
    """
    xm = as_matrix(x, "X")
    ym = as_matrix(y, "Y")
    if y_ij not in (0, 1):
        raise InvalidConfig(f"y_ij must be 0 or 1, got {y_ij!r}")
    d = residual_sqnorm(xm, ym, sol.alpha, sol.beta)
    alpha_sq = float(sol.alpha @ sol.alpha)
    beta_sq = float(sol.beta @ sol.beta)
    if y_ij == 1:
        coupling = h.mu1 * d
    else:
        coupling = h.mu2 * max(0.0, h.margin - d)
    return coupling + h.lambda1 * alpha_sq + h.lambda2 * beta_sq


def loss_grad_embedding(frames_x, frames_y, w, y_ij: int, sol: CSCRSolution,
                        h: Hyperparams) -> np.ndarray:
    """Gradient of the pair loss with respect to the embedding matrix.

    Coefficients are held fixed at their solved values. With
    ``r = W F_x alpha - W F_y beta`` and ``u = F_x alpha - F_y beta`` the
    gradient is ``2*mu1*r u^T`` for a same-class pair, ``-2*mu2*r u^T``
    for a different-class pair inside the margin, and zero outside it
    (zero is also the chosen subgradient exactly at the margin).
    """
    fx = as_matrix(frames_x, "frames_X")
    fy = as_matrix(frames_y, "frames_Y")
    wm = as_matrix(w, "embedding")
    if fx.shape[0] != wm.shape[1] or fy.shape[0] != wm.shape[1]:
        raise DimensionMismatch("frame feature rows do not match embedding columns")
    if fx.shape[1] != sol.alpha.shape[0] or fy.shape[1] != sol.beta.shape[0]:
        raise DimensionMismatch("coefficient lengths do not match frame counts")
    if y_ij not in (0, 1):
        raise InvalidConfig(f"y_ij must be 0 or 1, got {y_ij!r}")
    u = fx @ sol.alpha - fy @ sol.beta
    r = wm @ u
    if y_ij == 1:
        return 2.0 * h.mu1 * np.outer(r, u)
    d = float(r @ r)
    if d < h.margin:
        return -2.0 * h.mu2 * np.outer(r, u)
    return np.zeros_like(wm)


# -- pair sampling -------------------------------------------------------------


def _labels_of(dataset) -> list:
    return [s.label for s in dataset.sets]


def sample_pairs(dataset, config: TrainConfig, epoch: int) -> list:
    """Deterministic pair sample for one epoch.

    Emits ``config.pairs_per_epoch`` pairs of distinct set indices with
    ``round(positive_fraction * pairs_per_epoch)`` same-class pairs, in a
    seeded order that depends only on ``(config.seed, epoch)``. The
    indicator of each pair is computed from the set labels.
    """
    labels = _labels_of(dataset)
    if len(labels) < 2:
        raise InsufficientSets("need at least two sets to form pairs")
    by_label = {}
    for idx, lab in enumerate(labels):
        by_label.setdefault(lab, []).append(idx)
    if len(by_label) < 2:
        raise InsufficientClasses("need at least two classes to form negative pairs")

    n_pos = round(config.positive_fraction * config.pairs_per_epoch)
    n_neg = config.pairs_per_epoch - n_pos
    pos_labels = sorted(lab for lab, idxs in by_label.items() if len(idxs) >= 2)
    if n_pos > 0 and not pos_labels:
        raise InsufficientSets(
            "positive pairs requested but no class has two sets"
        )
    all_labels = sorted(by_label)

    rng = np.random.default_rng([config.seed & _SEED_MASK, 2, int(epoch)])
    flags = rng.permutation(np.r_[np.ones(n_pos, dtype=int), np.zeros(n_neg, dtype=int)])
    pairs = []
    for flag in flags:
        if flag == 1:
            lab = pos_labels[int(rng.integers(len(pos_labels)))]
            i, j = rng.choice(by_label[lab], size=2, replace=False)
        else:
            la, lb = rng.choice(all_labels, size=2, replace=False)
            i = rng.choice(by_label[la])
            j = rng.choice(by_label[lb])
        y_ij = 1 if labels[int(i)] == labels[int(j)] else 0
        pairs.append(PairSample(i=int(i), j=int(j), y_ij=y_ij))
    return pairs


# -- level 1: per-frame supervised pretraining ---------------------------------


def _class_indices(dataset, model: Model) -> dict:
    classes = sorted({s.label for s in dataset.sets})
    if len(classes) != model.config.classes:
        raise InvalidConfig(
            f"dataset has {len(classes)} classes, model head expects "
            f"{model.config.classes}"
        )
    return {lab: k for k, lab in enumerate(classes)}


def _require_raw(dataset):
    if dataset.feature_kind != "raw_pixels":
        raise InvalidConfig(
            "training operates on raw frame vectors; this dataset holds "
            "precomputed embeddings"
        )


def encoder_level_features(dataset, model: Model) -> list:
    """Fixed encoder-level feature matrix (enc_dim x frames) per set."""
    _require_raw(dataset)
    out = []
    for s in dataset.sets:
        cols = [frame_feature(fr, model) for fr in s.frames]
        out.append(np.ascontiguousarray(np.stack(cols, axis=1)))
    return out


def pretrain_level1(dataset, model: Model, config: TrainConfig):
    """Per-frame cross-entropy SGD over the embedding and softmax head.

    Frames are shuffled each epoch, gradients are mean-reduced over
    minibatches of ``config.batch_size``, and the encoder/attention stay
    fixed. Returns the updated model and the per-epoch mean loss history.
    """
    _require_raw(dataset)
    class_of = _class_indices(dataset, model)
    model = model.copy()
    enc_feats = []
    frame_labels = []
    for s in dataset.sets:
        for fr in s.frames:
            enc_feats.append(frame_feature(fr, model))
            frame_labels.append(class_of[s.label])
    n_frames = len(enc_feats)
    history = TrainHistory()
    lr = config.learning_rate_level1
    for epoch in range(config.epochs_level1):
        rng = np.random.default_rng([config.seed & _SEED_MASK, 1, epoch])
        order = rng.permutation(n_frames)
        losses = np.empty(n_frames)
        for start in range(0, n_frames, config.batch_size):
            batch = order[start : start + config.batch_size]
            g_emb = np.zeros_like(model.embedding)
            g_head = np.zeros_like(model.head_weight)
            g_bias = np.zeros_like(model.head_bias)
            for idx in batch:
                g = enc_feats[idx]
                z = model.embedding @ g
                loss, grad_head, grad_bias, grad_z = softmax_xent(
                    z, frame_labels[idx], model
                )
                losses[idx] = loss
                g_emb += np.outer(grad_z, g)
                g_head += grad_head
                g_bias += grad_bias
            scale = lr / len(batch)
            model.embedding = model.embedding - scale * g_emb
            model.head_weight = model.head_weight - scale * g_head
            model.head_bias = model.head_bias - scale * g_bias
            model.check_finite()
        history.append(
            EpochRecord(
                epoch=epoch,
                mean_loss=_ordered_mean(losses.tolist()),
                converged_fraction=1.0,
            )
        )
    return model, history


# -- level 2: alternating coefficient solves and embedding SGD ------------------


def train_level2(dataset, model: Model, config: TrainConfig, h: Hyperparams,
                 backend: str | None = None):
    """Alternating optimization over sampled set pairs.

    Per pair: embed both cached encoder-level sets, solve the coefficient
    problem exactly (embedding fixed), then take one SGD step on the
    embedding with the coefficients fixed. Pairs whose solve hit the
    iteration cap still contribute their gradient; the event is counted in
    the history. Deterministic given ``config.seed``.
    """
    _require_raw(dataset)
    model = model.copy()
    enc_sets = encoder_level_features(dataset, model)
    history = TrainHistory()
    lr = config.learning_rate_level2
    for epoch in range(config.epochs_level2):
        pairs = sample_pairs(dataset, config, epoch)
        losses = []
        residuals = []
        n_converged = 0
        for pair in pairs:
            fx, fy = enc_sets[pair.i], enc_sets[pair.j]
            x = model.embedding @ fx
            y = model.embedding @ fy
            sol = solve_pair(x, y, pair.y_ij, h, backend=backend)
            losses.append(contrastive_loss(x, y, pair.y_ij, sol, h))
            residuals.extend(sol.constraint_residuals)
            n_converged += bool(sol.converged)
            grad = loss_grad_embedding(fx, fy, model.embedding, pair.y_ij, sol, h)
            model.embedding = model.embedding - lr * grad
            model.check_finite()
        history.append(
            EpochRecord(
                epoch=epoch,
                mean_loss=_ordered_mean(losses),
                converged_fraction=n_converged / len(pairs),
                residual_mean=_ordered_mean(residuals),
                residual_max=max(residuals),
            )
        )
    return model, history
