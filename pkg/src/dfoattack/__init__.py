"""Derivative-free optimization attacks on black-box classifiers.

Targeted, l-infinity-bounded adversarial search against query oracles: a
trust-region surrogate attack with hierarchical lifting and domain
sub-sampling, four reference direct-search attacks, desk-scale target models,
and a benchmarking harness producing success-rate CDFs.
"""

from .baselines import (
    BaselineConfig,
    frank_wolfe_attack,
    gen_attack,
    parsimonious_attack,
    square_attack,
)
from .bobyqa import (
    BobyqaConfig,
    InterpolationSet,
    LinearSurrogate,
    TrustRegionState,
    bobyqa_attack,
    bobyqa_batch,
    build_initial_model,
    fit_linear_model,
    solve_trust_region_step,
)
from .core import (
    AttackObjective,
    AttackProblem,
    AttackResult,
    ContractError,
    EvaluationError,
    FeasibleBox,
    FunctionOracle,
    InputTensor,
    Perturbation,
    QueryOracle,
    evaluate_loss,
    feasible_box,
    is_success,
    loss,
)
from .harness import (
    AttackRecord,
    ExperimentConfig,
    SuccessCDF,
    cdfs_from_records,
    compute_cdf,
    emit_outputs,
    run_experiment,
    run_single_attack,
)
from .lifting import (
    BlockLifting,
    HierarchySchedule,
    apply_lifting,
    block_variance_order,
    generate_lifting,
    identity_lifting,
    random_lifting,
)
from .sampling import (
    SamplingPlan,
    SelectionSet,
    generate_sampling_matrix,
    neighborhood_variance,
)
from .targets import (
    LinearSoftmaxModel,
    MaskedOracle,
    ModelFormatError,
    ModelOracle,
    RemoteOracle,
    TinyMLPModel,
    load_model,
    save_model,
    variance_mask,
)

__version__ = "0.1.0"
