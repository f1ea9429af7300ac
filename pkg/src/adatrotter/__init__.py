"""Adaptive, self-correcting Trotterization for state-vector quantum dynamics."""

__version__ = "0.1.0"

from .adaptive import (  # noqa: F401
    BISECTION,
    SEQUENTIAL,
    Budget,
    ConstraintSlacks,
    ReferenceMoments,
    RunRecord,
    SearchConfig,
    StepLog,
    ToleranceSet,
    bisection_search,
    constraint_values,
    reference_moments,
    run_ada_trotter,
    run_fixed_trotter,
    sequential_search,
)
from .hilbert import (  # noqa: F401
    BasisLabel,
    SpaceDescriptor,
    StateVector,
    all_down_state,
    decode,
    encode,
    global_y_rotation,
    inner,
    link_model,
    minus_y_state,
    norm,
    normalize,
    product_state,
    spin_chain,
)
from .noise import (  # noqa: F401
    NoiseParams,
    NoisyRunResult,
    TrajectoryEnsemble,
    ensemble_moments,
    run_noisy_ada_trotter,
    sample_step_hamiltonians,
)
from .operators import (  # noqa: F401
    DisorderSpec,
    IsingParams,
    QlmParams,
    SparseOperator,
    TrotterSplit,
    apply,
    build_ising,
    build_qlm,
    expectation,
    magnetization_x,
    magnetization_z,
    make_split,
    moment_root,
    qlm_gauss_state,
    variance,
)
from .propagate import (  # noqa: F401
    KrylovConfig,
    KrylovConvergenceError,
    dense_expm_apply,
    exact_evolve,
    exact_trace,
    krylov_expm_apply,
    trotter_step,
)
from .spectral import (  # noqa: F401
    AveragingWindow,
    EigenDecomposition,
    MicrocanonicalCurve,
    dense_diagonalize,
    diagonal_ensemble,
    energy_distribution,
    error_expansion_prediction,
    filtered_state,
    long_time_average,
    microcanonical,
    variance_bound_scan,
)
