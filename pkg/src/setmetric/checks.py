"""Self-contained verification suites.

Each check runs a seeded workload, decides pass/fail at a pinned
tolerance, and hashes its numerical outputs so a repeated run can be
compared bit for bit. The CLI ``check`` subcommand and the acceptance
test suite both drive these functions.
"""

from __future__ import annotations

import hashlib
import struct
import time
from dataclasses import dataclass

import numpy as np

from .cscr import Hyperparams, solve_pair
from .features import (
    Model,
    ModelConfig,
    gap,
    new_model,
    nonlocal_attention,
    softmax_xent,
)
from .features import AttentionParams, reduced_channels
from .harness import (
    classify_dataset,
    featureize_dataset,
    featureize_set,
    gen_synthetic,
    pairs_from_dataset,
    split_gallery_probe,
    verify_pairs,
)
from .numkernel import kkt_qp_solve
from .training import (
    TrainConfig,
    contrastive_loss,
    loss_grad_embedding,
    pretrain_level1,
    train_level2,
)

# Pinned tolerances.
ORACLE_COEF_TOL = 1e-5
ORACLE_DIST_RTOL = 1e-5
ORACLE_TIME_LIMIT = 5.0
CONSTRAINT_TOL = 1e-8
GRAD_RTOL = 1e-4
TRANSLATION_RTOL = 1e-8
PERMUTATION_TOL = 1e-8
SYMMETRY_RTOL = 1e-8
SWAP_TOL = 1e-6
DUPLICATE_TOL = 1e-6
COINCIDENT_TOL = 1e-8
CLASSIFY_TIME_LIMIT = 30.0
AUC_SEPARABLE_MIN = 0.99
AUC_CONSTANT_TOL = 1e-12

_ORACLE_SEED = 20240601
_GRAD_SEED = 20240602
_INV_SEED = 20240603


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    digest: str
    seconds: float


class _Digest:
    def __init__(self):
        self._h = hashlib.sha256()

    def add(self, value):
        if isinstance(value, np.ndarray):
            self._h.update(np.ascontiguousarray(value, dtype=np.float64).tobytes())
        elif isinstance(value, (bool, np.bool_)):
            self._h.update(b"\x01" if value else b"\x00")
        elif isinstance(value, (int, np.integer)):
            self._h.update(struct.pack("<q", int(value)))
        elif isinstance(value, (float, np.floating)):
            self._h.update(struct.pack("<d", float(value)))
        elif isinstance(value, str):
            self._h.update(value.encode())
        elif isinstance(value, (list, tuple)):
            for item in value:
                self.add(item)
        else:
            raise TypeError(f"cannot digest {type(value)!r}")
        return self

    def hex(self) -> str:
        return self._h.hexdigest()


def _result(name, passed, detail, digest, t0) -> CheckResult:
    return CheckResult(name=name, passed=bool(passed), detail=detail,
                       digest=digest.hex(), seconds=time.perf_counter() - t0)


def _oracle_instances(count=200, seed=_ORACLE_SEED):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        d = int(rng.integers(1, 9))
        m = int(rng.integers(1, 7))
        n = int(rng.integers(1, 7))
        x = rng.standard_normal((d, m))
        y = rng.standard_normal((d, n))
        mu = float(rng.uniform(0.0003, 0.03))
        l1 = float(rng.uniform(0.01, 0.3))
        l2 = float(rng.uniform(0.01, 0.3))
        y_ij = int(rng.integers(0, 2))
        yield x, y, mu, l1, l2, y_ij


def check_oracle_equivalence(backend=None) -> CheckResult:
    """Solver coefficients and distances against the exact KKT oracle."""
    t0 = time.perf_counter()
    digest = _Digest()
    worst_coef = 0.0
    worst_dist = 0.0
    for x, y, mu, l1, l2, y_ij in _oracle_instances():
        h = Hyperparams(mu1=mu, mu2=mu, lambda1=l1, lambda2=l2)
        sol = solve_pair(x, y, y_ij, h, backend=backend)
        alpha, beta, dist = kkt_qp_solve(x, y, mu, l1, l2)
        worst_coef = max(
            worst_coef,
            float(np.max(np.abs(sol.alpha - alpha))),
            float(np.max(np.abs(sol.beta - beta))),
        )
        if dist > 0:
            worst_dist = max(worst_dist, abs(sol.distance - dist) / dist)
        digest.add([sol.alpha, sol.beta, sol.distance, sol.iterations_used])
    elapsed = time.perf_counter() - t0
    passed = (worst_coef <= ORACLE_COEF_TOL and worst_dist <= ORACLE_DIST_RTOL
              and elapsed < ORACLE_TIME_LIMIT)
    detail = (f"200 instances: worst coef err {worst_coef:.2e} "
              f"(tol {ORACLE_COEF_TOL:.0e}), worst distance rel err "
              f"{worst_dist:.2e} (tol {ORACLE_DIST_RTOL:.0e}), {elapsed:.2f}s "
              f"(limit {ORACLE_TIME_LIMIT:.0f}s)")
    return _result("oracle-equivalence", passed, detail, digest, t0)


def check_constraint_satisfaction(backend=None) -> CheckResult:
    """Reported and recomputed sum-constraint residuals of converged solves."""
    t0 = time.perf_counter()
    digest = _Digest()
    worst = 0.0
    n_converged = 0
    for x, y, mu, l1, l2, y_ij in _oracle_instances():
        h = Hyperparams(mu1=mu, mu2=mu, lambda1=l1, lambda2=l2)
        sol = solve_pair(x, y, y_ij, h, backend=backend)
        if not sol.converged:
            continue
        n_converged += 1
        worst = max(
            worst,
            sol.constraint_residuals[0],
            sol.constraint_residuals[1],
            abs(float(np.sum(sol.alpha)) - 1.0),
            abs(float(np.sum(sol.beta)) - 1.0),
        )
        digest.add([sol.constraint_residuals[0], sol.constraint_residuals[1]])
    passed = n_converged > 0 and worst <= CONSTRAINT_TOL
    detail = (f"{n_converged}/200 converged, worst residual {worst:.2e} "
              f"(tol {CONSTRAINT_TOL:.0e})")
    return _result("constraint-satisfaction", passed, detail, digest, t0)


def _fd_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _pair_grad_instance(rng, regime: str, backend=None):
    """Random pair in the requested hinge regime; returns the FD error.

    Set sizes are kept below the embedding dimension so the affine hulls
    are generically disjoint and rescaling the embedding can steer the
    distance into the requested regime.
    """
    d_enc = int(rng.integers(4, 7))
    d_emb = int(rng.integers(3, d_enc + 1))
    while True:
        m = int(rng.integers(1, 4))
        n = int(rng.integers(1, 4))
        if m + n - 2 < d_emb:
            break
    fx = rng.standard_normal((d_enc, m))
    fy = rng.standard_normal((d_enc, n))
    w = rng.standard_normal((d_emb, d_enc))
    h = Hyperparams()
    y_ij = 1 if regime == "same" else 0
    target = None if regime == "same" else (0.5 if regime == "inside" else 8.0)
    for _ in range(30):
        x = w @ fx
        y = w @ fy
        sol = solve_pair(x, y, y_ij, h, backend=backend)
        dist = sol.distance
        if target is None:
            break
        if (regime == "inside" and 0.05 < dist < h.margin - 0.5) or \
                (regime == "outside" and dist > h.margin + 0.5):
            break
        w = w * min(max(np.sqrt(target / max(dist, 1e-12)), 0.25), 16.0)
    else:
        raise AssertionError(f"could not reach hinge regime {regime}")

    grad = loss_grad_embedding(fx, fy, w, y_ij, sol, h)
    step = 1e-5
    numeric = np.zeros_like(w)
    for r in range(w.shape[0]):
        for c in range(w.shape[1]):
            wp = w.copy()
            wp[r, c] += step
            up = contrastive_loss(wp @ fx, wp @ fy, y_ij, sol, h)
            wm = w.copy()
            wm[r, c] -= step
            dn = contrastive_loss(wm @ fx, wm @ fy, y_ij, sol, h)
            numeric[r, c] = (up - dn) / (2.0 * step)
    return _fd_error(grad, numeric), grad


def check_gradients(backend=None) -> CheckResult:
    """Analytic pair-loss and softmax gradients against central differences."""
    t0 = time.perf_counter()
    digest = _Digest()
    rng = np.random.default_rng(_GRAD_SEED)
    worst_pair = 0.0
    regimes = ["same", "inside", "outside"]
    for k in range(100):
        err, grad = _pair_grad_instance(rng, regimes[k % 3], backend=backend)
        worst_pair = max(worst_pair, err)
        digest.add(grad)

    worst_soft = 0.0
    step = 1e-5
    for _ in range(100):
        k = int(rng.integers(2, 6))
        d_emb = int(rng.integers(2, 6))
        cfg = ModelConfig(pixel_dim=d_emb, enc_dim=d_emb, emb_dim=d_emb,
                          classes=k, grid=(1, 1, d_emb), use_attention=False)
        model = new_model(cfg)
        model.head_weight = rng.standard_normal((k, d_emb))
        model.head_bias = rng.standard_normal(k)
        z = rng.standard_normal(d_emb)
        label = int(rng.integers(k))
        _, g_head, g_bias, g_in = softmax_xent(z, label, model)

        num_head = np.zeros_like(g_head)
        for r in range(k):
            for c in range(d_emb):
                up_model = model.copy()
                up_model.head_weight[r, c] += step
                dn_model = model.copy()
                dn_model.head_weight[r, c] -= step
                num_head[r, c] = (softmax_xent(z, label, up_model)[0]
                                  - softmax_xent(z, label, dn_model)[0]) / (2 * step)
        num_bias = np.zeros_like(g_bias)
        for r in range(k):
            up_model = model.copy()
            up_model.head_bias[r] += step
            dn_model = model.copy()
            dn_model.head_bias[r] -= step
            num_bias[r] = (softmax_xent(z, label, up_model)[0]
                           - softmax_xent(z, label, dn_model)[0]) / (2 * step)
        num_in = np.zeros_like(g_in)
        for c in range(d_emb):
            zp = z.copy()
            zp[c] += step
            zm = z.copy()
            zm[c] -= step
            num_in[c] = (softmax_xent(zp, label, model)[0]
                         - softmax_xent(zm, label, model)[0]) / (2 * step)
        worst_soft = max(worst_soft, _fd_error(g_head, num_head),
                         _fd_error(g_bias, num_bias), _fd_error(g_in, num_in))
        digest.add([g_head, g_bias, g_in])

    passed = worst_pair <= GRAD_RTOL and worst_soft <= GRAD_RTOL
    detail = (f"pair-loss worst rel err {worst_pair:.2e}, softmax worst rel err "
              f"{worst_soft:.2e} (tol {GRAD_RTOL:.0e}) over 100 instances each")
    return _result("gradient-correctness", passed, detail, digest, t0)


def check_invariances(backend=None) -> CheckResult:
    """Translation/permutation/symmetry properties of the solver and features."""
    t0 = time.perf_counter()
    digest = _Digest()
    rng = np.random.default_rng(_INV_SEED)
    failures = []

    for trial in range(20):
        d = int(rng.integers(2, 8))
        m = int(rng.integers(2, 6))
        n = int(rng.integers(2, 6))
        x = rng.standard_normal((d, m))
        y = rng.standard_normal((d, n))
        h = Hyperparams(mu1=float(rng.uniform(0.0003, 0.03)),
                        mu2=0.001,
                        lambda1=float(rng.uniform(0.01, 0.3)),
                        lambda2=float(rng.uniform(0.01, 0.3)))
        base = solve_pair(x, y, 1, h, backend=backend)

        # Translation of both sets by a common vector.
        t = rng.standard_normal((d, 1))
        shifted = solve_pair(x + t, y + t, 1, h, backend=backend)
        denom = max(base.distance, 1e-12)
        if abs(shifted.distance - base.distance) / denom > TRANSLATION_RTOL:
            failures.append(f"solver translation invariance (trial {trial})")

        # Column permutation of X.
        perm = rng.permutation(m)
        permuted = solve_pair(x[:, perm], y, 1, h, backend=backend)
        if float(np.max(np.abs(permuted.alpha - base.alpha[perm]))) > PERMUTATION_TOL:
            failures.append(f"solver permutation equivariance (trial {trial})")
        if abs(permuted.distance - base.distance) / denom > PERMUTATION_TOL:
            failures.append(f"solver permutation distance (trial {trial})")

        # Exact KKT permutation equivariance and translation invariance.
        ka, kb, kd = kkt_qp_solve(x, y, h.mu1, h.lambda1, h.lambda2)
        pa, _, pd = kkt_qp_solve(x[:, perm], y, h.mu1, h.lambda1, h.lambda2)
        if not (np.array_equal(pa, ka[perm]) and pd == kd):
            failures.append(f"kkt exact permutation (trial {trial})")
        ta, tb, td = kkt_qp_solve(x + t, y + t, h.mu1, h.lambda1, h.lambda2)
        if (np.max(np.abs(ta - ka)) > 1e-9 or np.max(np.abs(tb - kb)) > 1e-9
                or abs(td - kd) / max(kd, 1e-12) > 1e-9):
            failures.append(f"kkt translation invariance (trial {trial})")

        # Swap symmetry with equal coefficient regularizers.
        hs = Hyperparams(mu1=h.mu1, mu2=h.mu2, lambda1=0.1, lambda2=0.1)
        fwd = solve_pair(x, y, 1, hs, backend=backend)
        rev = solve_pair(y, x, 1, hs, backend=backend)
        if abs(fwd.distance - rev.distance) / max(fwd.distance, 1e-12) > SYMMETRY_RTOL:
            failures.append(f"swap distance symmetry (trial {trial})")
        if (np.max(np.abs(fwd.alpha - rev.beta)) > SWAP_TOL
                or np.max(np.abs(fwd.beta - rev.alpha)) > SWAP_TOL):
            failures.append(f"swap coefficient symmetry (trial {trial})")

        # Duplicate columns get equal weights.
        xd = np.column_stack([x, x[:, 0]])
        dup = solve_pair(xd, y, 1, h, backend=backend)
        if abs(dup.alpha[0] - dup.alpha[-1]) > DUPLICATE_TOL:
            failures.append(f"duplicate-column symmetry (trial {trial})")

        digest.add([base.alpha, base.beta, base.distance, shifted.distance,
                    permuted.alpha, fwd.distance, rev.distance, dup.alpha])

    # Exact spatial-permutation properties of pooling and attention.
    for trial in range(10):
        hgt, wid, ch = int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
        fmap = rng.standard_normal((hgt, wid, ch))
        cp = reduced_channels(ch)
        params = AttentionParams(
            query=rng.standard_normal((cp, ch)),
            key=rng.standard_normal((cp, ch)),
            value=rng.standard_normal((cp, ch)),
            output=rng.standard_normal((ch, cp)),
        )
        perm = rng.permutation(hgt * wid)
        flat = fmap.reshape(hgt * wid, ch)
        pmap = flat[perm].reshape(hgt, wid, ch)
        if not np.array_equal(gap(fmap), gap(pmap)):
            failures.append(f"gap permutation invariance (trial {trial})")
        att = nonlocal_attention(fmap, params).reshape(hgt * wid, ch)
        att_p = nonlocal_attention(pmap, params).reshape(hgt * wid, ch)
        if not np.array_equal(att[perm], att_p):
            failures.append(f"attention permutation equivariance (trial {trial})")
        digest.add([gap(fmap), att])

    passed = not failures
    detail = "all invariances hold" if passed else "; ".join(failures[:4])
    return _result("invariance-suite", passed, detail, digest, t0)


def check_trivial_metric(backend=None) -> CheckResult:
    """Closed-form distances: the 3-4-5 pair and coincident sets."""
    t0 = time.perf_counter()
    digest = _Digest()
    h = Hyperparams()
    sol = solve_pair(np.array([[0.0], [0.0]]), np.array([[3.0], [4.0]]), 0, h,
                     backend=backend)
    exact = sol.distance == 25.0
    rng = np.random.default_rng(_INV_SEED + 1)
    x = rng.standard_normal((5, 4))
    coincident = solve_pair(x, x.copy(), 1, Hyperparams(lambda1=0.1, lambda2=0.1),
                            backend=backend)
    coincident_default = solve_pair(x, x.copy(), 1, h, backend=backend)
    near_zero = (coincident.distance <= COINCIDENT_TOL
                 and coincident_default.distance <= COINCIDENT_TOL)
    digest.add([sol.distance, coincident.distance, coincident_default.distance])
    passed = exact and near_zero
    detail = (f"3-4-5 distance {sol.distance!r} (expect exactly 25.0), coincident "
              f"distances {coincident.distance:.2e}/{coincident_default.distance:.2e} "
              f"(tol {COINCIDENT_TOL:.0e})")
    return _result("trivial-metric", passed, detail, digest, t0)


def _acceptance_model(classes: int, seed: int = 7) -> Model:
    cfg = ModelConfig(pixel_dim=16, enc_dim=16, emb_dim=4, classes=classes,
                      seed=seed, grid=(2, 2, 4))
    return new_model(cfg)


def check_synthetic_classification(backend=None) -> CheckResult:
    """Untrained-model classification on well-separated synthetic data."""
    t0 = time.perf_counter()
    digest = _Digest()
    ds = gen_synthetic(classes=5, sets_per_class=4, frames_per_set=20, dim=16,
                       separation=10.0, noise=0.3, seed=101)
    model = _acceptance_model(classes=5)
    gallery_ds, probe_ds = split_gallery_probe(ds)
    gallery = featureize_dataset(gallery_ds, model)
    probes = featureize_dataset(probe_ds, model)
    result = classify_dataset(gallery, probes, Hyperparams(), backend=backend)
    elapsed = time.perf_counter() - t0
    digest.add([result.accuracy, [list(o.distances) for o in result.outcomes]])
    passed = result.accuracy == 1.0 and elapsed < CLASSIFY_TIME_LIMIT
    detail = (f"accuracy {result.accuracy:.4f} over {len(result.outcomes)} probes "
              f"(expect 1.0) in {elapsed:.2f}s (limit {CLASSIFY_TIME_LIMIT:.0f}s)")
    return _result("synthetic-classification", passed, detail, digest, t0)


def check_training_efficacy(backend=None) -> CheckResult:
    """Bi-level training on overlapping classes reduces loss, keeps accuracy.

    Sets have fewer frames than embedding dimensions so the affine hulls
    are proper subsets and the pair distances carry geometry the embedding
    can improve.
    """
    t0 = time.perf_counter()
    digest = _Digest()
    ds = gen_synthetic(classes=4, sets_per_class=4, frames_per_set=4, dim=32,
                       separation=2.0, noise=1.0, seed=202)
    model = new_model(ModelConfig(pixel_dim=32, enc_dim=32, emb_dim=8,
                                  classes=4, seed=11, grid=(2, 2, 8)))
    h = Hyperparams(mu1=0.03, mu2=0.003, lambda1=0.01, lambda2=0.01)
    cfg = TrainConfig(epochs_level1=30, epochs_level2=30,
                      learning_rate_level1=0.05, learning_rate_level2=0.1,
                      batch_size=8, seed=303, pairs_per_epoch=64,
                      positive_fraction=0.5)

    def accuracy_of(m: Model) -> float:
        gallery_ds, probe_ds = split_gallery_probe(ds)
        gallery = featureize_dataset(gallery_ds, m)
        probes = featureize_dataset(probe_ds, m)
        return classify_dataset(gallery, probes, h, backend=backend).accuracy

    acc_before = accuracy_of(model)
    model1, hist1 = pretrain_level1(ds, model, cfg)
    model2, hist2 = train_level2(ds, model1, cfg, h, backend=backend)
    acc_after = accuracy_of(model2)
    losses = hist2.mean_losses()
    digest.add([acc_before, acc_after, losses, hist1.mean_losses(),
                model2.embedding])
    passed = losses[-1] < losses[0] and acc_after >= acc_before
    detail = (f"pair loss epoch0 {losses[0]:.6f} -> final {losses[-1]:.6f} "
              f"(must strictly decrease); accuracy before {acc_before:.4f}, "
              f"after {acc_after:.4f} (must not decrease)")
    return _result("training-efficacy", passed, detail, digest, t0)


def check_verification_metrics(backend=None) -> CheckResult:
    """AUC on separable pairs, exact 0.5 on constant scores, ROC endpoints."""
    t0 = time.perf_counter()
    digest = _Digest()
    ds = gen_synthetic(classes=4, sets_per_class=3, frames_per_set=8, dim=16,
                       separation=10.0, noise=0.3, seed=404)
    model = _acceptance_model(classes=4, seed=5)
    h = Hyperparams()
    record_pairs = pairs_from_dataset(ds, n_pairs=30, positive_fraction=0.5, seed=17)
    pairs = [
        (featureize_set(a, ds.feature_kind, model),
         featureize_set(b, ds.feature_kind, model), same)
        for a, b, same in record_pairs
    ]
    separable = verify_pairs(pairs, h, backend=backend)

    fs_a = pairs[0][0]
    constant_pairs = [(fs_a, fs_a, True), (fs_a, fs_a, False),
                      (fs_a, fs_a, True), (fs_a, fs_a, False)]
    constant = verify_pairs(constant_pairs, h, backend=backend)

    endpoints_ok = True
    for res in (separable, constant):
        first = res.roc_points[0]
        last = res.roc_points[-1]
        endpoints_ok &= (first[1], first[2]) == (0.0, 0.0)
        endpoints_ok &= (last[1], last[2]) == (1.0, 1.0)

    digest.add([separable.auc, list(separable.distances), constant.auc])
    passed = (separable.auc >= AUC_SEPARABLE_MIN
              and abs(constant.auc - 0.5) <= AUC_CONSTANT_TOL
              and endpoints_ok)
    detail = (f"separable AUC {separable.auc:.4f} (min {AUC_SEPARABLE_MIN}), "
              f"constant-score AUC {constant.auc!r} (expect 0.5 within "
              f"{AUC_CONSTANT_TOL:.0e}), endpoints "
              f"{'exact' if endpoints_ok else 'WRONG'}")
    return _result("verification-metrics", passed, detail, digest, t0)


def check_determinism(backend=None) -> CheckResult:
    """Every suite above produces bit-identical outputs on a repeated run."""
    t0 = time.perf_counter()
    names = []
    mismatches = []
    for fn in (check_oracle_equivalence, check_constraint_satisfaction,
               check_gradients, check_invariances, check_trivial_metric,
               check_synthetic_classification, check_training_efficacy,
               check_verification_metrics):
        first, second = fn(backend=backend), fn(backend=backend)
        names.append(first.name)
        if first.digest != second.digest:
            mismatches.append(first.name)
    digest = _Digest()
    digest.add(names)
    passed = not mismatches
    detail = ("all 8 suites reproduce bit-identically"
              if passed else f"non-deterministic: {', '.join(mismatches)}")
    return _result("determinism", passed, detail, digest, t0)


SUITES = {
    "oracle": (check_oracle_equivalence, check_constraint_satisfaction),
    "gradients": (check_gradients,),
    "invariants": (check_invariances, check_trivial_metric),
}


def run_suite(name: str, backend=None) -> list:
    """Run one named suite; returns its CheckResults."""
    return [fn(backend=backend) for fn in SUITES[name]]
