"""Set-to-set distances via collaborative representation over affine hulls.

The package couples an alternating-direction solver for the per-pair
coefficient problem with a contrastive metric-learning loop and
gallery/probe classification + pair-verification harnesses. A compiled
extension accelerates the solver loop when built; a pure-Python fallback
with identical semantics is selected automatically otherwise.
"""

__version__ = "0.1.0"

from ._backend import available_backends, default_backend
from .cscr import (
    ADMMCache,
    ADMMState,
    CSCRSolution,
    Hyperparams,
    admm_iteration,
    build_cache,
    set_distance,
    solve_pair,
)
from .errors import Error, NumericalError, ValidationError
from .features import (
    AttentionParams,
    Model,
    ModelConfig,
    embed,
    encode_frame,
    gap,
    new_model,
    nonlocal_attention,
    set_features,
    softmax_xent,
)
from .harness import (
    Dataset,
    FeatureSet,
    SetRecord,
    classify_dataset,
    classify_probe,
    featureize_dataset,
    gen_synthetic,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    split_gallery_probe,
    verify_pairs,
)
from .numkernel import (
    CholeskyFactor,
    cholesky_factor,
    cholesky_solve,
    kkt_qp_solve,
)
from .training import (
    PairSample,
    TrainConfig,
    TrainHistory,
    contrastive_loss,
    loss_grad_embedding,
    pretrain_level1,
    sample_pairs,
    train_level2,
)

__all__ = [
    "__version__",
    "available_backends",
    "default_backend",
    "ADMMCache",
    "ADMMState",
    "CSCRSolution",
    "Hyperparams",
    "admm_iteration",
    "build_cache",
    "set_distance",
    "solve_pair",
    "Error",
    "NumericalError",
    "ValidationError",
    "AttentionParams",
    "Model",
    "ModelConfig",
    "embed",
    "encode_frame",
    "gap",
    "new_model",
    "nonlocal_attention",
    "set_features",
    "softmax_xent",
    "Dataset",
    "FeatureSet",
    "SetRecord",
    "classify_dataset",
    "classify_probe",
    "featureize_dataset",
    "gen_synthetic",
    "load_dataset",
    "load_model",
    "save_dataset",
    "save_model",
    "split_gallery_probe",
    "verify_pairs",
    "CholeskyFactor",
    "cholesky_factor",
    "cholesky_solve",
    "kkt_qp_solve",
    "PairSample",
    "TrainConfig",
    "TrainHistory",
    "contrastive_loss",
    "loss_grad_embedding",
    "pretrain_level1",
    "sample_pairs",
    "train_level2",
]
