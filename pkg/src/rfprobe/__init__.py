"""Synthetic Ricci-flow probes for discretized time-dependent
weighted metric measure spaces."""

from .errors import (
    ConvergenceFailureError,
    DegenerateCollisionError,
    ExcludedPairError,
    IllConditionedGeneratorError,
    IntegrationFailureError,
    InvalidInputError,
    InvalidSpecError,
    MetricAxiomError,
    ResolutionError,
    RFProbeError,
    SchemaError,
    UnsupportedOperationError,
)
from .flowspace import (
    FlowSpace,
    analytic_tensor,
    build_cone,
    build_from_spec,
    build_gaussian_flow,
    build_sphere_flow,
    build_suspension,
    from_tables,
    load_custom,
)
from .heat import (
    Generator,
    PropagatorKernel,
    StepControl,
    build_generator,
    check_chapman_kolmogorov,
    dual_flow,
    dual_flow_path,
    kernel,
    load_kernel_binary,
)
from .paths import AffinePath, CallablePath, as_path
from .probes import (
    EtaEstimate,
    StepSchedule,
    TensorEigen,
    ThetaEstimate,
    eta_eps,
    eta_star,
    floor_snapped_schedule,
    nsuper_deficit,
    pair_floor,
    rfex,
    rigidity_defect,
    tensor_eigen,
    theta_flat,
    theta_pair,
    theta_star,
)
from .classify import (
    FlowVerdict,
    VerdictRecord,
    check_contraction,
    check_eta_leq_theta_flat,
    classify_rough,
    classify_weak,
    farthest_point_sample,
)
from .suite import run_core_suite
from .transport import (
    DiscreteMeasure,
    TransportPlan,
    displacement_interpolate,
    dt_w2_left,
    entropy,
    truncate,
    w2,
)

__version__ = "0.1.0"
