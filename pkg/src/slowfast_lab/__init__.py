"""Numerical laboratory for slow-fast controlled stochastic systems.

The library simulates a slow state driven by a fast, adapted approximation
of white noise, solves the associated forward-backward system by regression
Monte Carlo, evaluates control costs in the weak (Girsanov-weighted) and
strong formulations, and sweeps the scale-separation parameter to verify
empirically that optimal costs and optimal controls converge to those of
the reduced white-noise problem.
"""

from .bsde import (
    BasisSpec,
    BmoDiagnostics,
    BsdeSolution,
    RegressionBasis,
    bmo_diagnostic,
    solve_bsde,
    y0_value,
)
from .control import (
    ControlProcess,
    CostEstimate,
    GirsanovWeight,
    LocalizedControl,
    admissibility_diagnostic,
    cost_strong,
    cost_weak,
    girsanov_weight,
    localize,
)
from .forward import (
    DriftCorrection,
    GaussianAverage,
    SlowPathEnsemble,
    corrected_drift,
    drift_correction,
    gaussian_average_q,
    sigma2_trace,
    solve_controlled,
    solve_forward_eps,
    solve_forward_reduced,
)
from .hamiltonian import (
    FeedbackPolicy,
    HamiltonianEval,
    feedback,
    feedback_controls,
    hamiltonian_closed_form,
    hamiltonian_numeric,
    hamiltonian_values,
)
from .harness import (
    ExperimentRow,
    SweepConfig,
    SweepResult,
    SweepRow,
    epsilon_sweep,
    fast_fast_experiment,
    wong_zakai_experiment,
)
from .hjb import HjbGrid, HjbSolution, default_domain, hjb_oracle
from .model import (
    AssumptionConstants,
    CoefficientSet,
    Dimensions,
    ProblemSpec,
    ValidationReport,
    load_preset,
    load_spec_config,
    validate_spec,
)
from .noise import (
    FastPathEnsemble,
    MollifierKernel,
    SemimartingalePath,
    TimeGrid,
    WienerEnsemble,
    gamma_mollify,
    gamma_ou,
    sample_wiener,
    shift_semimartingale,
)

__version__ = "0.1.0"
