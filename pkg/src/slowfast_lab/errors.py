"""Exception and warning types shared across the package.

Hard contract violations raise; degraded-but-usable results are reported
through warnings plus flags on the returned objects, so long Monte Carlo
runs degrade observably instead of dying halfway.
"""


class SlowFastError(Exception):
    """Base class for all package-specific errors."""


class NonFiniteCoefficient(SlowFastError):
    """A coefficient callable returned NaN or infinity at a probe point."""


class MissingUStar(SlowFastError):
    """No neutral control: r(x, u_star) != 0 beyond tolerance."""


class UnknownPreset(SlowFastError):
    """Requested benchmark preset name is not registered."""


class ConfigError(SlowFastError):
    """Malformed spec configuration document."""


class GridMismatch(SlowFastError):
    """Inputs live on different time grids or path ensembles."""


class NonPositiveEpsilon(SlowFastError):
    """Scale-separation parameter must be strictly positive."""


class NonAdaptedKernel(SlowFastError):
    """Mollifier kernel support touches negative lags, breaking adaptedness."""


class NonFiniteDerivative(SlowFastError):
    """Finite-difference derivative evaluated to NaN or infinity."""


class PolicyEvaluationFailure(SlowFastError):
    """Feedback policy could not be evaluated at a visited state."""


class NotBilinear(SlowFastError):
    """Sampled bilinearity identities failed for the fast-fast interaction."""


class NonDegenerateInitialValue(SlowFastError):
    """Fitted Y at t=0 varies across paths although X_0 is deterministic."""


class CflViolation(SlowFastError):
    """Explicit PDE step size violates the stability condition."""


class BoundaryDominance(SlowFastError):
    """PDE boundary treatment influences the reported value too strongly."""


class SlowFastWarning(UserWarning):
    """Base class for package-specific warnings."""


class StiffnessWarning(SlowFastWarning):
    """dt resolves the fast scale poorly (dt > epsilon / 5)."""


class OverflowWarning(SlowFastWarning):
    """One or more sample paths exceeded the overflow guard and were frozen."""


class SingularRegressionWarning(SlowFastWarning):
    """Regression design matrix was ill-conditioned; ridge fallback used."""


class MinimizerStallWarning(SlowFastWarning):
    """Numeric Hamiltonian minimizer was still improving on its last sweep."""


class NotStabilizedWarning(SlowFastWarning):
    """Localized cost sequence did not stabilize over the given schedule."""


class DegenerateWeightsWarning(SlowFastWarning):
    """Girsanov weights collapsed: effective sample size below 1% of paths."""
