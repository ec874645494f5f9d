"""Datasets, synthetic data, and the classification/verification protocols.

A dataset is a single JSON document::

    {"feature_kind": "raw_pixels" | "precomputed_embeddings",
     "dim": <int>,
     "sets": [{"id": str, "label": str, "frames": [[float, ...], ...]}, ...]}

Floats are serialized with full round-trip precision, so save/load is
lossless. ``raw_pixels`` frames are pixel vectors that pass through a
feature model; ``precomputed_embeddings`` frames are used as feature
columns directly.

Classification follows the gallery/probe protocol: each probe set is
assigned the label of the gallery set at minimal pair distance (ties break
to the earliest gallery set). Verification scores labeled set pairs by
their distance and sweeps decision thresholds into an ROC curve with a
trapezoid AUC; by default the same-class coupling weight mu1 is used for
classification distances and mu2 for verification distances, both
overridable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cscr import Hyperparams, solve_pair
from .errors import (
    DegenerateLabels,
    DimensionMismatch,
    DuplicateSetId,
    EmptyGallery,
    EmptyInput,
    InvalidConfig,
    ParseError,
)
from .features import (
    AttentionParams,
    Model,
    ModelConfig,
    reduced_channels,
    set_features,
)
from .training import TrainConfig, sample_pairs

__all__ = [
    "SetRecord",
    "Dataset",
    "FeatureSet",
    "load_dataset",
    "save_dataset",
    "gen_synthetic",
    "featureize_dataset",
    "classify_probe",
    "classify_dataset",
    "roc_from_scores",
    "verify_pairs",
    "split_gallery_probe",
    "pairs_from_dataset",
    "load_pairs",
    "save_pairs",
    "load_model",
    "save_model",
]

_KINDS = ("raw_pixels", "precomputed_embeddings")
_SEED_MASK = 0xFFFFFFFFFFFFFFFF


@dataclass
class SetRecord:
    """One labeled image set: frame vectors in file order."""

    id: str
    label: str
    frames: np.ndarray  # (n_frames, dim)


@dataclass
class Dataset:
    feature_kind: str
    dim: int
    sets: list = field(default_factory=list)

    def labels(self) -> list:
        return sorted({s.label for s in self.sets})


@dataclass
class FeatureSet:
    """Feature-level view of one set: columns are frame features."""

    features: np.ndarray  # (D, n_frames)
    label: str
    id: str = ""


# -- dataset I/O ---------------------------------------------------------------


def _validate_frames(raw, dim: int, set_id: str) -> np.ndarray:
    if not isinstance(raw, list) or not raw:
        raise ParseError(f"set '{set_id}': 'frames' must be a nonempty list")
    for k, fr in enumerate(raw):
        if not isinstance(fr, list):
            raise ParseError(f"set '{set_id}': frame {k} is not a list")
        if len(fr) != dim:
            raise DimensionMismatch(
                f"set '{set_id}': frame {k} has length {len(fr)}, expected {dim}"
            )
    frames = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(frames)):
        raise ParseError(f"set '{set_id}': frames contain non-finite values")
    return frames


def dataset_from_obj(obj) -> Dataset:
    """Build a validated Dataset from a parsed JSON object."""
    if not isinstance(obj, dict):
        raise ParseError("dataset document must be a JSON object")
    kind = obj.get("feature_kind")
    if kind not in _KINDS:
        raise ParseError(f"field 'feature_kind' must be one of {_KINDS}, got {kind!r}")
    dim = obj.get("dim")
    if not isinstance(dim, int) or dim < 1:
        raise ParseError(f"field 'dim' must be a positive integer, got {dim!r}")
    raw_sets = obj.get("sets")
    if not isinstance(raw_sets, list):
        raise ParseError("field 'sets' must be a list")
    seen = set()
    sets = []
    for k, entry in enumerate(raw_sets):
        if not isinstance(entry, dict):
            raise ParseError(f"sets[{k}] is not an object")
        sid = entry.get("id")
        label = entry.get("label")
        if not isinstance(sid, str) or not sid:
            raise ParseError(f"sets[{k}]: 'id' must be a nonempty string")
        if not isinstance(label, str) or not label:
            raise ParseError(f"sets[{k}] ('{sid}'): 'label' must be a nonempty string")
        if sid in seen:
            raise DuplicateSetId(f"duplicate set id '{sid}'")
        seen.add(sid)
        sets.append(SetRecord(id=sid, label=label,
                              frames=_validate_frames(entry.get("frames"), dim, sid)))
    return Dataset(feature_kind=kind, dim=dim, sets=sets)


def dataset_to_obj(ds: Dataset) -> dict:
    return {
        "feature_kind": ds.feature_kind,
        "dim": ds.dim,
        "sets": [
            {"id": s.id, "label": s.label, "frames": s.frames.tolist()}
            for s in ds.sets
        ],
    }


def load_dataset(path) -> Dataset:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read dataset {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return dataset_from_obj(obj)


def save_dataset(ds: Dataset, path):
    with open(path, "w") as fh:
        json.dump(dataset_to_obj(ds), fh)
        fh.write("\n")


def gen_synthetic(classes: int, sets_per_class: int, frames_per_set: int,
                  dim: int, separation: float, noise: float, seed: int) -> Dataset:
    """Gaussian blobs around class centers on a sphere of radius ``separation``.

    Every frame is its class center plus isotropic noise of scale
    ``noise``; deterministic given ``seed``.
    """
    for name, value in (("classes", classes), ("sets_per_class", sets_per_class),
                        ("frames_per_set", frames_per_set), ("dim", dim)):
        if not (isinstance(value, int) and value >= 1):
            raise InvalidConfig(f"{name} must be a positive integer")
    if not (separation > 0 and np.isfinite(separation)):
        raise InvalidConfig("separation must be a positive real")
    if not (noise >= 0 and np.isfinite(noise)):
        raise InvalidConfig("noise must be a nonnegative real")
    rng = np.random.default_rng(seed & _SEED_MASK)
    sets = []
    for k in range(classes):
        direction = rng.standard_normal(dim)
        center = separation * direction / np.linalg.norm(direction)
        for s in range(sets_per_class):
            frames = center + noise * rng.standard_normal((frames_per_set, dim))
            sets.append(SetRecord(id=f"c{k:02d}_s{s:02d}", label=f"class{k:02d}",
                                  frames=frames))
    return Dataset(feature_kind="raw_pixels", dim=dim, sets=sets)


# -- feature extraction ---------------------------------------------------------


def featureize_set(record: SetRecord, kind: str, model: Model | None) -> FeatureSet:
    if kind == "raw_pixels":
        if model is None:
            raise InvalidConfig(
                f"set '{record.id}' holds raw pixels; a feature model is required"
            )
        features = set_features(list(record.frames), model)
    else:
        features = np.ascontiguousarray(record.frames.T)
    return FeatureSet(features=features, label=record.label, id=record.id)


def featureize_dataset(ds: Dataset, model: Model | None) -> list:
    """FeatureSet per dataset set, in dataset order."""
    if ds.feature_kind == "raw_pixels" and model is not None \
            and ds.dim != model.config.pixel_dim:
        raise DimensionMismatch(
            f"dataset dim {ds.dim} does not match model pixel_dim "
            f"{model.config.pixel_dim}"
        )
    return [featureize_set(s, ds.feature_kind, model) for s in ds.sets]


def split_gallery_probe(ds: Dataset, seed: int | None = None):
    """One gallery set per class, the remainder as probes.

    ``seed=None`` takes the first set of each class in dataset order;
    otherwise the gallery set of each class is chosen at random.
    """
    by_label = {}
    for idx, s in enumerate(ds.sets):
        by_label.setdefault(s.label, []).append(idx)
    rng = None if seed is None else np.random.default_rng(seed & _SEED_MASK)
    chosen = set()
    for lab in sorted(by_label):
        idxs = by_label[lab]
        chosen.add(idxs[0] if rng is None else int(rng.choice(idxs)))
    gallery = Dataset(ds.feature_kind, ds.dim, [ds.sets[i] for i in sorted(chosen)])
    probes = Dataset(ds.feature_kind, ds.dim,
                     [s for i, s in enumerate(ds.sets) if i not in chosen])
    return gallery, probes


# -- classification --------------------------------------------------------------


@dataclass(frozen=True)
class ProbeOutcome:
    probe_id: str
    true_label: str
    predicted_label: str
    distances: tuple  # per gallery set, gallery order
    class_distances: dict  # label -> minimal distance

    @property
    def correct(self) -> bool:
        return self.predicted_label == self.true_label


@dataclass(frozen=True)
class ClassificationResult:
    outcomes: tuple
    gallery_ids: tuple
    n_correct: int
    accuracy: float


def classify_probe(gallery, probe: FeatureSet, h: Hyperparams,
                   same_branch: bool = True,
                   backend: str | None = None) -> ProbeOutcome:
    """Label one probe set by its nearest gallery set.

    ``same_branch`` selects the coupling weight used for every comparison
    (True: mu1, the default for classification; False: mu2). Ties break to
    the earliest gallery set.
    """
    if len(gallery) == 0:
        raise EmptyGallery("gallery is empty")
    y_ij = 1 if same_branch else 0
    distances = []
    for g in gallery:
        sol = solve_pair(g.features, probe.features, y_ij, h, backend=backend)
        distances.append(sol.distance)
    best = int(np.argmin(distances))
    class_distances = {}
    for g, d in zip(gallery, distances):
        if g.label not in class_distances or d < class_distances[g.label]:
            class_distances[g.label] = d
    return ProbeOutcome(
        probe_id=probe.id,
        true_label=probe.label,
        predicted_label=gallery[best].label,
        distances=tuple(distances),
        class_distances=class_distances,
    )


def classify_dataset(gallery, probes, h: Hyperparams, same_branch: bool = True,
                     backend: str | None = None) -> ClassificationResult:
    """Classify every probe against the gallery and report exact accuracy."""
    outcomes = [classify_probe(gallery, p, h, same_branch, backend) for p in probes]
    if not outcomes:
        raise EmptyInput("no probe sets")
    n_correct = sum(o.correct for o in outcomes)
    return ClassificationResult(
        outcomes=tuple(outcomes),
        gallery_ids=tuple(g.id for g in gallery),
        n_correct=n_correct,
        accuracy=n_correct / len(outcomes),
    )


# -- verification -----------------------------------------------------------------


@dataclass(frozen=True)
class VerificationResult:
    distances: tuple
    same: tuple  # ground-truth flags
    thresholds: tuple  # evaluated thresholds, ascending, with -inf/+inf sentinels
    roc_points: tuple  # (threshold, fpr, tpr) sorted by threshold
    auc: float
    best_threshold: float
    decisions: tuple  # predicted same-flags at best_threshold


def _roc_point(distances, same, threshold):
    pred = [d < threshold for d in distances]
    pos = sum(same)
    neg = len(same) - pos
    tp = sum(1 for p, s in zip(pred, same) if p and s)
    fp = sum(1 for p, s in zip(pred, same) if p and not s)
    return fp / neg, tp / pos


def roc_from_scores(distances, same, thresholds=None) -> VerificationResult:
    """ROC sweep over distance scores with ground-truth same-flags.

    A pair is declared same-class at a threshold t when its distance is
    strictly below t. Sentinel thresholds at -inf and +inf pin the ROC
    endpoints to (0,0) and (1,1); with ``thresholds=None`` every distinct
    observed distance is evaluated, which makes the trapezoid AUC the
    exact rank statistic of the scores. ``best_threshold`` maximizes
    TPR - FPR (earliest on ties) and ``decisions`` are taken there.
    """
    distances = [float(d) for d in distances]
    flags = [bool(s) for s in same]
    if not distances:
        raise EmptyInput("no scores")
    if all(flags) or not any(flags):
        raise DegenerateLabels(
            "verification needs both same-class and different-class pairs"
        )
    if thresholds is None:
        levels = sorted(set(distances))
    else:
        levels = sorted(set(float(t) for t in thresholds))
    levels = [-math.inf] + [t for t in levels if math.isfinite(t)] + [math.inf]

    roc = [(t, *_roc_point(distances, flags, t)) for t in levels]
    auc = 0.0
    for (_, f0, t0), (_, f1, t1) in zip(roc, roc[1:]):
        auc += (f1 - f0) * (t0 + t1) / 2.0
    best_idx = max(range(len(roc)), key=lambda k: (roc[k][2] - roc[k][1], -k))
    best = roc[best_idx][0]
    return VerificationResult(
        distances=tuple(distances),
        same=tuple(flags),
        thresholds=tuple(levels),
        roc_points=tuple(roc),
        auc=auc,
        best_threshold=best,
        decisions=tuple(d < best for d in distances),
    )


def verify_pairs(pairs, h: Hyperparams, thresholds=None,
                 same_branch: bool = False,
                 backend: str | None = None) -> VerificationResult:
    """Score labeled set pairs by pair distance and sweep an ROC.

    ``pairs`` is a sequence of ``(FeatureSet, FeatureSet, same_flag)``.
    Distances use the different-class coupling weight mu2 by default
    (``same_branch=True`` selects mu1). See :func:`roc_from_scores` for
    the threshold semantics.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("no pairs to verify")
    y_ij = 1 if same_branch else 0
    distances = [
        solve_pair(a.features, b.features, y_ij, h, backend=backend).distance
        for a, b, _ in pairs
    ]
    return roc_from_scores(distances, [p[2] for p in pairs], thresholds)


# -- pair files -------------------------------------------------------------------


def pairs_from_dataset(ds: Dataset, n_pairs: int, positive_fraction: float,
                       seed: int):
    """Sample labeled set-record pairs from a dataset (deterministic)."""
    cfg = TrainConfig(pairs_per_epoch=n_pairs, positive_fraction=positive_fraction,
                      seed=seed)
    samples = sample_pairs(ds, cfg, epoch=0)
    return [(ds.sets[p.i], ds.sets[p.j], p.y_ij == 1) for p in samples]


def save_pairs(pairs, kind: str, dim: int, path):
    """Write a self-contained verification pairs file (JSON)."""
    obj = {
        "feature_kind": kind,
        "dim": dim,
        "pairs": [
            {
                "a": {"id": a.id, "label": a.label, "frames": a.frames.tolist()},
                "b": {"id": b.id, "label": b.label, "frames": b.frames.tolist()},
                "same": bool(same),
            }
            for a, b, same in pairs
        ],
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_pairs(path):
    """Read a pairs file; returns ``(feature_kind, dim, [(a, b, same), ...])``."""
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read pairs file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ParseError("pairs document must be a JSON object")
    kind = obj.get("feature_kind")
    if kind not in _KINDS:
        raise ParseError(f"field 'feature_kind' must be one of {_KINDS}, got {kind!r}")
    dim = obj.get("dim")
    if not isinstance(dim, int) or dim < 1:
        raise ParseError(f"field 'dim' must be a positive integer, got {dim!r}")
    raw = obj.get("pairs")
    if not isinstance(raw, list) or not raw:
        raise ParseError("field 'pairs' must be a nonempty list")
    out = []
    for k, entry in enumerate(raw):
        if not isinstance(entry, dict) or "a" not in entry or "b" not in entry:
            raise ParseError(f"pairs[{k}] must be an object with 'a' and 'b'")
        if not isinstance(entry.get("same"), bool):
            raise ParseError(f"pairs[{k}]: 'same' must be a boolean")
        sides = []
        for side in ("a", "b"):
            sobj = entry[side]
            if not isinstance(sobj, dict):
                raise ParseError(f"pairs[{k}].{side} is not an object")
            sid = sobj.get("id") or f"pair{k}{side}"
            label = sobj.get("label") or ""
            sides.append(SetRecord(
                id=sid, label=label,
                frames=_validate_frames(sobj.get("frames"), dim, sid),
            ))
        out.append((sides[0], sides[1], entry["same"]))
    return kind, dim, out


# -- model files ------------------------------------------------------------------


def save_model(model: Model, path):
    cfg = model.config
    obj = {
        "format": "setmetric-model",
        "config": {
            "pixel_dim": cfg.pixel_dim,
            "enc_dim": cfg.enc_dim,
            "emb_dim": cfg.emb_dim,
            "classes": cfg.classes,
            "seed": cfg.seed,
            "grid": list(cfg.grid),
            "use_attention": cfg.use_attention,
        },
        "params": {
            "encoder": model.encoder.tolist(),
            "attention": None if model.attention is None else {
                "query": model.attention.query.tolist(),
                "key": model.attention.key.tolist(),
                "value": model.attention.value.tolist(),
                "output": model.attention.output.tolist(),
            },
            "embedding": model.embedding.tolist(),
            "head_weight": model.head_weight.tolist(),
            "head_bias": model.head_bias.tolist(),
        },
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def _shaped(raw, shape, name) -> np.ndarray:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.shape != shape:
        raise ParseError(f"model field '{name}' has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"model field '{name}' contains non-finite values")
    return np.ascontiguousarray(arr)


def load_model(path) -> Model:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(obj, dict) or obj.get("format") != "setmetric-model":
        raise ParseError("not a setmetric model file")
    craw = obj.get("config")
    praw = obj.get("params")
    if not isinstance(craw, dict) or not isinstance(praw, dict):
        raise ParseError("model file needs 'config' and 'params' objects")
    try:
        cfg = ModelConfig(
            pixel_dim=craw["pixel_dim"],
            enc_dim=craw["enc_dim"],
            emb_dim=craw["emb_dim"],
            classes=craw["classes"],
            seed=craw.get("seed", 0),
            grid=tuple(craw["grid"]),
            use_attention=bool(craw.get("use_attention", True)),
        )
    except KeyError as exc:
        raise ParseError(f"model config is missing field {exc}") from exc
    _, _, c = cfg.grid
    cp = reduced_channels(c)
    attention = None
    if praw.get("attention") is not None:
        araw = praw["attention"]
        attention = AttentionParams(
            query=_shaped(araw.get("query"), (cp, c), "attention.query"),
            key=_shaped(araw.get("key"), (cp, c), "attention.key"),
            value=_shaped(araw.get("value"), (cp, c), "attention.value"),
            output=_shaped(araw.get("output"), (c, cp), "attention.output"),
        )
    return Model(
        config=cfg,
        encoder=_shaped(praw.get("encoder"), (cfg.enc_dim, cfg.pixel_dim), "encoder"),
        attention=attention,
        embedding=_shaped(praw.get("embedding"), (cfg.emb_dim, cfg.channels),
                          "embedding"),
        head_weight=_shaped(praw.get("head_weight"), (cfg.classes, cfg.emb_dim),
                            "head_weight"),
        head_bias=_shaped(praw.get("head_bias"), (cfg.classes,), "head_bias"),
    )
