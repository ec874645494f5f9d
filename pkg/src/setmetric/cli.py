"""Command-line interface.

Exit codes: 0 on success, 2 on validation errors (bad files, bad flags,
dimension mismatches), 3 on numerical failures, 1 on failed checks.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

from . import __version__
from ._backend import default_backend
from .cscr import Hyperparams, solve_pair
from .errors import InvalidConfig, NumericalError, ParseError, ValidationError
from .features import ModelConfig, default_grid, new_model
from .harness import (
    classify_dataset,
    featureize_dataset,
    featureize_set,
    gen_synthetic,
    load_dataset,
    load_model,
    load_pairs,
    save_dataset,
    save_model,
    verify_pairs,
)
from .training import TrainConfig, TrainHistory, pretrain_level1, train_level2


def _add_hyper_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("hyperparameters")
    g.add_argument("--mu1", type=float, default=0.01)
    g.add_argument("--mu2", type=float, default=0.001)
    g.add_argument("--lambda1", type=float, default=0.1)
    g.add_argument("--lambda2", type=float, default=0.5)
    g.add_argument("--margin", type=float, default=2.0)
    g.add_argument("--rho", type=float, default=1.0)
    g.add_argument("--tol", type=float, default=1e-8,
                   help="constraint-residual tolerance")
    g.add_argument("--max-iters", type=int, default=500)


def _hyper_from(args) -> Hyperparams:
    return Hyperparams(
        mu1=args.mu1, mu2=args.mu2, lambda1=args.lambda1, lambda2=args.lambda2,
        margin=args.margin, rho=args.rho, tol_constraint=args.tol,
        max_iters=args.max_iters,
    )


def _load_single_set(path):
    ds = load_dataset(path)
    if len(ds.sets) != 1:
        raise ParseError(f"{path}: expected exactly one set, found {len(ds.sets)}")
    return ds


def _model_for(ds, model_path):
    if model_path is not None:
        return load_model(model_path)
    if ds.feature_kind == "raw_pixels":
        raise InvalidConfig(
            "dataset holds raw pixels; pass --model (or use "
            "feature_kind=precomputed_embeddings)"
        )
    return None


def cmd_gen_synth(args) -> int:
    ds = gen_synthetic(args.classes, args.sets, args.frames, args.dim,
                       args.separation, args.noise, args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.sets)} sets ({args.classes} classes, dim {args.dim}) "
          f"to {args.out}")
    return 0


def cmd_solve_pair(args) -> int:
    ds_a = _load_single_set(args.set_a)
    ds_b = _load_single_set(args.set_b)
    if ds_a.dim != ds_b.dim:
        raise InvalidConfig(f"sets have different dims: {ds_a.dim} vs {ds_b.dim}")
    a = ds_a.sets[0].frames.T
    b = ds_b.sets[0].frames.T
    h = _hyper_from(args)
    sol = solve_pair(a, b, 0 if args.diff else 1, h)
    out = {
        "alpha": sol.alpha.tolist(),
        "beta": sol.beta.tolist(),
        "distance": sol.distance,
        "iterations": sol.iterations_used,
        "converged": sol.converged,
    }
    with open(args.out, "w") as fh:
        json.dump(out, fh)
        fh.write("\n")
    print(f"distance {sol.distance:.6g} after {sol.iterations_used} iterations "
          f"(converged={sol.converged})")
    return 0


def cmd_classify(args) -> int:
    gallery_ds = load_dataset(args.gallery)
    probe_ds = load_dataset(args.probe)
    if gallery_ds.dim != probe_ds.dim or gallery_ds.feature_kind != probe_ds.feature_kind:
        raise InvalidConfig("gallery and probe datasets are incompatible")
    model = _model_for(gallery_ds, args.model)
    gallery = featureize_dataset(gallery_ds, model)
    probes = featureize_dataset(probe_ds, model)
    h = _hyper_from(args)
    result = classify_dataset(gallery, probes, h, same_branch=args.branch == "same")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["probe_id", "predicted", "true", "correct"])
        for o in result.outcomes:
            writer.writerow([o.probe_id, o.predicted_label, o.true_label,
                             int(o.correct)])
        fh.write(f"# accuracy={result.accuracy!r} "
                 f"({result.n_correct}/{len(result.outcomes)})\n")
    print(f"accuracy {result.accuracy:.4f} "
          f"({result.n_correct}/{len(result.outcomes)})")
    return 0


def cmd_verify_pairs(args) -> int:
    kind, dim, record_pairs = load_pairs(args.pairs)
    model = None
    if args.model is not None:
        model = load_model(args.model)
    elif kind == "raw_pixels":
        raise InvalidConfig("pairs file holds raw pixels; pass --model")
    pairs = [
        (featureize_set(a, kind, model), featureize_set(b, kind, model), same)
        for a, b, same in record_pairs
    ]
    thresholds = None
    if args.thresholds:
        try:
            thresholds = [float(t) for t in args.thresholds.split(",") if t.strip()]
        except ValueError as exc:
            raise InvalidConfig(f"bad --thresholds list: {exc}") from exc
    h = _hyper_from(args)
    result = verify_pairs(pairs, h, thresholds=thresholds,
                          same_branch=args.branch == "same")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "fpr", "tpr"])
        for t, fpr, tpr in result.roc_points:
            writer.writerow([repr(t), repr(fpr), repr(tpr)])
        fh.write(f"# auc={result.auc!r}\n")
    print(f"auc {result.auc:.6f} over {len(pairs)} pairs "
          f"({len(result.roc_points)} thresholds)")
    return 0


def _train_config_from(obj) -> TrainConfig:
    fields = {}
    for name in ("epochs_level1", "epochs_level2", "learning_rate_level1",
                 "learning_rate_level2", "batch_size", "seed",
                 "pairs_per_epoch", "positive_fraction"):
        if name in obj:
            fields[name] = obj[name]
    return TrainConfig(**fields)


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    try:
        with open(args.config) as fh:
            cfg_obj = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read config {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{args.config}: invalid JSON: {exc.msg}") from exc
    if not isinstance(cfg_obj, dict):
        raise ParseError("train config must be a JSON object")

    model_obj = dict(cfg_obj.get("model", {}))
    model_obj.setdefault("pixel_dim", ds.dim)
    model_obj.setdefault("enc_dim", model_obj["pixel_dim"])
    model_obj.setdefault("classes", len(ds.labels()))
    if model_obj.get("grid") is not None:
        model_obj["grid"] = tuple(model_obj["grid"])
    else:
        model_obj["grid"] = default_grid(model_obj["enc_dim"])
    model_obj.setdefault("emb_dim", model_obj["grid"][2])
    model = new_model(ModelConfig(**model_obj))

    train_cfg = _train_config_from(cfg_obj.get("train", {}))
    hyper_obj = cfg_obj.get("hyperparams", {})
    h = Hyperparams(**hyper_obj)

    model, hist1 = pretrain_level1(ds, model, train_cfg)
    model, hist2 = train_level2(ds, model, train_cfg, h)
    save_model(model, args.out_model)

    merged = TrainHistory()
    epoch = 0
    for record in hist1.records + hist2.records:
        merged.append(type(record)(
            epoch=epoch,
            mean_loss=record.mean_loss,
            converged_fraction=record.converged_fraction,
            residual_mean=record.residual_mean,
            residual_max=record.residual_max,
        ))
        epoch += 1
    merged.to_csv(args.history)
    print(f"level1 loss {hist1.records[0].mean_loss:.6f} -> "
          f"{hist1.records[-1].mean_loss:.6f}; "
          f"level2 loss {hist2.records[0].mean_loss:.6f} -> "
          f"{hist2.records[-1].mean_loss:.6f}")
    print(f"model written to {args.out_model}, history to {args.history}")
    return 0


def cmd_check(args) -> int:
    from .checks import run_suite

    results = run_suite(args.suite)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status} {r.name}: {r.detail} [{r.seconds:.2f}s]")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="setmetric",
        description="Collaborative-representation set distances: solver, "
                    "training, and evaluation harnesses.",
    )
    parser.add_argument("--version", action="version",
                        version=f"setmetric {__version__} "
                                f"(kernel: {default_backend()})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--sets", type=int, required=True, help="sets per class")
    p.add_argument("--frames", type=int, required=True, help="frames per set")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("solve-pair", help="distance between two stored sets")
    p.add_argument("--set-a", required=True)
    p.add_argument("--set-b", required=True)
    grp = p.add_mutually_exclusive_group()
    grp.add_argument("--same", action="store_true",
                     help="treat as same-class pair (mu1; default)")
    grp.add_argument("--diff", action="store_true",
                     help="treat as different-class pair (mu2)")
    _add_hyper_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_solve_pair)

    p = sub.add_parser("classify", help="gallery/probe classification")
    p.add_argument("--gallery", required=True)
    p.add_argument("--probe", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--branch", choices=("same", "diff"), default="same",
                   help="coupling weight for comparisons (default: same=mu1)")
    _add_hyper_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("verify-pairs", help="pair verification with ROC/AUC")
    p.add_argument("--pairs", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--thresholds", default=None,
                   help="comma-separated list; default: all observed distances")
    p.add_argument("--branch", choices=("same", "diff"), default="diff",
                   help="coupling weight for comparisons (default: diff=mu2)")
    _add_hyper_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_verify_pairs)

    p = sub.add_parser("train", help="two-stage training on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--history", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("check", help="run a verification suite")
    p.add_argument("--suite", choices=("oracle", "gradients", "invariants"),
                   required=True)
    p.set_defaults(fn=cmd_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
