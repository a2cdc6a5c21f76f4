"""Stability experiments and bound verification for SGD with momentum."""

from .dataset import (
    DataError,
    Dataset,
    Example,
    NeighborSpec,
    ParseError,
    SparseVector,
    binarize,
    binarize_labels,
    load_libsvm,
    make_neighbor,
    parse_libsvm,
    serialize_libsvm,
    split,
    synthetic_binary_dataset,
)
from .harness import (
    BoundCheckResult,
    ExperimentConfig,
    PreconditionError,
    StabilityResult,
    aggregate,
    run_bound_check,
    run_stability_experiment,
    save_stability_result,
)
from .losses import (
    SmoothnessReport,
    empirical_risk,
    loss_grad,
    loss_value,
    smoothness,
)
from .optimizer import (
    CoupledTrace,
    DivergenceError,
    HyperParams,
    LookaheadState,
    SampleStream,
    SgdmState,
    Trajectory,
    average_iterate,
    coupled_run,
    hb_params,
    lookahead_step,
    nesterov_params,
    run,
    sgdm_step,
)
from .theory import (
    AuxiliaryTrace,
    BoundReport,
    ConditionReport,
    EprRecipe,
    auxiliary_sequence,
    check_opt_condition,
    check_stab_condition,
    epr_recipe,
    max_eta_hb,
    max_gamma_nesterov,
    optimization_bound,
    stability_bound,
    verify_dist_identity,
    verify_m_recursion_bound,
    verify_y_identity,
)

__version__ = "0.1.0"
