"""Simultaneous state and uncertainty estimation.

Multi-hypothesis Bayesian estimation of a linear system's state together with
a scalar parameter perturbation and the binary "location" matrix marking
where the perturbation enters the dynamics, plus observability testing,
consistency diagnostics and a seeded tracking simulation harness.
"""

from .analysis import (
    StackedOutputModel,
    gaussian_kl,
    kl_separation,
    linearized_C,
    loglik_ratio_trajectory,
    output_covariance,
    stacked_input_matrix,
)
from .belief import (
    FusedEstimate,
    HypothesisBank,
    JointBelief,
    assemble_joint_covariance,
    belief_from_joint,
    fuse,
    identify_location,
)
from .errors import (
    ConfigurationError,
    ContractError,
    DegenerateEvidenceError,
    ExcitationError,
    NoMatchError,
    NumericalFailureError,
    SingularGradientError,
)
from .filters import (
    NewtonOptions,
    StepResult,
    UpdateReport,
    ekf_step,
    initial_bank,
    likelihood,
    log_likelihood,
    newton_update,
    predict,
    ssue_step,
    update_weights,
    update_weights_log,
)
from .model import (
    LocationMatrix,
    LocationSet,
    MeasurementMap,
    SystemModel,
    UncertaintyDomain,
    linear_map,
    model_from_json,
    model_to_json,
    range_sensor_map,
    validate_model,
)
from .observability import (
    DeltaGrid,
    ObservabilityReport,
    PairFailure,
    RankTolerance,
    ReconstructionResult,
    pairwise_rank_test,
    reconstruct,
    stack_observability,
)
from .sim import (
    MetricsSummary,
    RunMetrics,
    RunRecord,
    Scenario,
    load_record,
    monte_carlo,
    run_estimation,
    run_metrics,
    save_record,
    simulate,
    tracking_preset,
)

__version__ = "0.1.0"
