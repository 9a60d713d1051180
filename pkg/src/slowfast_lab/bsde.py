"""Backward equation solver: least-squares regression Monte Carlo.

Solves -dY = psi(X, Z) dt - Z dW, Y_T = h(X_T) along a forward ensemble by
backward induction: Z is the regression of Y_{t+dt} dW / dt on state
features, Y the regression of Y_{t+dt} + psi dt. The quadratic driver is
tamed by clipping Z in norm and Y into its a-priori band
[-(M_h + M_psi T), M_h + M_psi T]; both clip levels and the pre-clip
violation rate are reported so tests can detect abuse.

For fast-scale forwards the Markov state is the pair (slow, fast), so the
regression features include the fast coordinates by default.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._reduce import normal_equations, tree_sum
from .errors import (
    GridMismatch,
    NonDegenerateInitialValue,
    SingularRegressionWarning,
)
from .forward import SlowPathEnsemble
from .hamiltonian import hamiltonian_values
from .model import ProblemSpec
from .noise import WienerEnsemble

__all__ = [
    "BasisSpec",
    "RegressionBasis",
    "BsdeSolution",
    "BmoDiagnostics",
    "solve_bsde",
    "bmo_diagnostic",
    "y0_value",
]

CONDITION_LIMIT = 1e12
RIDGE_PENALTY = 1e-8
DEGENERATE_STD = 1e-12
Y0_DEGENERACY_TOL = 1e-8


@dataclass(frozen=True)
class BasisSpec:
    """Regression basis configuration.

    kind "polynomial": monomials up to `degree` in each slow coordinate,
    pairwise products for cross terms (never above total degree 2 across
    coordinates). kind "piecewise_linear": hat functions on `bins` quantile
    knots, 1-D slow state only. `include_fast` appends the fast coordinates
    (degree <= 2 plus slow-fast products) whenever the forward carries them.
    """

    kind: str = "polynomial"
    degree: int = 4
    bins: int = 8
    include_fast: bool = True

    def __post_init__(self):
        if self.kind not in ("polynomial", "piecewise_linear"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == "polynomial" and self.degree < 1:
            raise ValueError("polynomial degree must be >= 1")
        if self.kind == "piecewise_linear" and self.bins < 2:
            raise ValueError("piecewise_linear needs at least 2 bins")

    @classmethod
    def parse(cls, text: str) -> "BasisSpec":
        """Parse 'poly:4' / 'polynomial:4' / 'pwlin:8' CLI shorthand."""
        name, _, arg = text.partition(":")
        name = name.strip().lower()
        if name in ("poly", "polynomial"):
            return cls(kind="polynomial", degree=int(arg) if arg else 4)
        if name in ("pwlin", "piecewise_linear", "piecewise-linear"):
            return cls(kind="piecewise_linear", bins=int(arg) if arg else 8)
        raise ValueError(f"cannot parse basis spec {text!r}")


@dataclass(frozen=True)
class _StepFit:
    """Fitted regression data for one grid step."""

    mean: np.ndarray
    std: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    knots: np.ndarray | None
    active: np.ndarray
    z_coeffs: np.ndarray  # (n_active, n_fast)
    condition: float
    ridge_used: bool


@dataclass
class RegressionBasis:
    """Per-step fitted coefficients plus conditioning diagnostics."""

    spec: BasisSpec
    n_slow: int
    n_fast_features: int
    steps: list = field(default_factory=list, repr=False)

    @property
    def condition_numbers(self) -> np.ndarray:
        return np.array([s.condition for s in self.steps])

    @property
    def ridge_steps(self) -> np.ndarray:
        return np.nonzero([s.ridge_used for s in self.steps])[0]


def _raw_columns(basis: BasisSpec, states: np.ndarray,
                 fast: np.ndarray | None,
                 knots: np.ndarray | None) -> np.ndarray:
    """Feature columns before standardization, excluding the intercept."""
    cols = []
    n_slow = states.shape[1]
    if basis.kind == "polynomial":
        for i in range(n_slow):
            xi = states[:, i]
            for p in range(1, basis.degree + 1):
                cols.append(xi**p)
        for i in range(n_slow):
            for j in range(i + 1, n_slow):
                cols.append(states[:, i] * states[:, j])
    else:
        xi = states[:, 0]
        for knot in knots:
            cols.append(np.abs(xi - knot))
    if fast is not None:
        for m in range(fast.shape[1]):
            qm = fast[:, m]
            cols.append(qm)
            cols.append(qm**2)
            for i in range(n_slow):
                cols.append(states[:, i] * qm)
    return np.column_stack(cols) if cols else np.empty((states.shape[0], 0))


def _design(basis: BasisSpec, states: np.ndarray, fast: np.ndarray | None,
            fit: _StepFit | None):
    """(design matrix, fit metadata); fit=None computes fresh statistics."""
    if fit is None:
        knots = None
        if basis.kind == "piecewise_linear":
            if states.shape[1] != 1:
                raise ValueError("piecewise_linear basis supports 1-D slow state")
            qs = np.linspace(0.0, 1.0, basis.bins + 1)[1:-1]
            knots = np.quantile(states[:, 0], qs)
        raw = _raw_columns(basis, states, fast, knots)
        mean = raw.mean(axis=0) if raw.size else np.zeros(0)
        std = raw.std(axis=0) if raw.size else np.zeros(0)
        active = std > DEGENERATE_STD
        lo = states.min(axis=0)
        hi = states.max(axis=0)
    else:
        knots, mean, std, active = fit.knots, fit.mean, fit.std, fit.active
        states = np.clip(states, fit.lo, fit.hi)
        raw = _raw_columns(basis, states, fast, knots)
        lo, hi = fit.lo, fit.hi
    n = states.shape[0]
    scaled = (raw[:, active] - mean[active]) / std[active]
    design = np.column_stack([np.ones(n), scaled])
    meta = dict(mean=mean, std=std, lo=lo, hi=hi, knots=knots, active=active)
    return design, meta


def _regress(design: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Least squares via deterministic normal equations with ridge fallback."""
    ata, aty = normal_equations(design, targets)
    eigs = np.linalg.eigvalsh(ata)
    floor = max(eigs[-1], 1.0) * 1e-300
    condition = float(np.sqrt(eigs[-1] / max(eigs[0], floor)))
    ridge_used = condition > CONDITION_LIMIT or eigs[0] <= 0.0
    if ridge_used:
        ata = ata + RIDGE_PENALTY * design.shape[0] * np.eye(ata.shape[0])
    coeffs = np.linalg.solve(ata, aty)
    return coeffs, condition, ridge_used


@dataclass
class BmoDiagnostics:
    """Conditional tail integrals of |Z|^2 over grid times.

    `profile[k]` is the largest fitted value of E[int_{t_k}^T |Z|^2 ds | F_k]
    over paths; `estimate` is its maximum over k (the squared BMO-type norm
    restricted to deterministic grid times).
    """

    times: np.ndarray
    profile: np.ndarray
    mean_profile: np.ndarray
    estimate: float


@dataclass
class BsdeSolution:
    """Backward solution along a forward ensemble.

    Fields `y` (n_paths, n_steps+1) and `z` (n_paths, n_steps, n_fast) hold
    the pathwise solution; `y0` is the cross-sectional value at t=0.
    Diagnostics record clip activity and the fraction of (path, step) pairs
    whose unclipped |Y| exceeded the a-priori band.
    """

    spec: ProblemSpec
    forward: SlowPathEnsemble
    basis: RegressionBasis
    y: np.ndarray
    z: np.ndarray
    y0: float
    y0_std_error: float
    clip_level: float
    y_bound: float
    y_violation_rate: float
    z_clip_rate: float
    bmo_estimate: float
    bmo: BmoDiagnostics | None = field(default=None, repr=False)

    def _fast_at(self, step: int) -> np.ndarray | None:
        if self.basis.n_fast_features == 0:
            return None
        return self.forward.fast_values[:, step, :]

    def z_at(self, step: int, x: np.ndarray) -> np.ndarray:
        """Fitted Z surface at a grid step, states clamped to the training box.

        Only meaningful for slow-state-only bases; eps-mode surfaces project
        the (slow, fast) dependence onto the slow marginal fitted here.
        """
        fit = self.basis.steps[step]
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        fast = None
        if self.basis.n_fast_features:
            # marginal surface: fast coordinates pinned to their step mean
            fast = np.broadcast_to(
                self._fast_at(step).mean(axis=0), (x.shape[0], self.forward.fast_values.shape[2])
            )
        design, _ = _design(self.basis.spec, x, fast, fit)
        return design @ fit.z_coeffs


def solve_bsde(forward: SlowPathEnsemble, wiener: WienerEnsemble,
               spec: ProblemSpec, basis: BasisSpec | None = None,
               clip_multiplier: float = 10.0, picard_sweeps: int = 1,
               clip_level: float | None = None) -> BsdeSolution:
    """Backward induction with least-squares conditional expectations.

    One Picard sweep re-estimates Z with the fitted Y as a control variate
    and re-evaluates the driver. `clip_level` overrides the default
    clip_multiplier * (M_h + M_psi T) / sqrt(T) norm cap on Z (e.g. from the
    BMO estimate of a coarser run).
    """
    basis = basis or BasisSpec()
    grid = forward.grid
    if (wiener.grid.T, wiener.grid.n_steps) != (grid.T, grid.n_steps):
        raise GridMismatch("forward and Wiener ensembles on different grids")
    if wiener.n_paths != forward.n_paths:
        raise GridMismatch("forward and Wiener ensembles have different paths")
    n_paths, n_steps = forward.n_paths, grid.n_steps
    dt = grid.dt
    n_fast = wiener.n_fast
    use_fast = basis.include_fast and forward.fast_values is not None
    y_bound = spec.y_bound
    z_max = clip_level if clip_level is not None else (
        clip_multiplier * y_bound / np.sqrt(grid.T)
    )

    x_nodes = forward.values
    y = np.empty((n_paths, n_steps + 1))
    z = np.zeros((n_paths, n_steps, n_fast))
    y[:, n_steps] = spec.coeffs.h(x_nodes[:, n_steps, :])

    fitted = RegressionBasis(
        spec=basis,
        n_slow=spec.dims.n_slow,
        n_fast_features=n_fast if use_fast else 0,
        steps=[None] * n_steps,
    )
    violations = 0
    clipped = 0
    any_ridge = False
    y0_std_error = np.nan

    for k in range(n_steps - 1, -1, -1):
        states = x_nodes[:, k, :]
        fast = forward.fast_values[:, k, :] if use_fast else None
        design, meta = _design(basis, states, fast, None)
        y_next = y[:, k + 1]
        dw = wiener.increments[:, k, :]

        target_z = y_next[:, None] * dw / dt
        z_coeffs, cond, ridge = _regress(design, target_z)
        z_k = design @ z_coeffs
        z_k, n_clip = _clip_norm(z_k, z_max)
        clipped += n_clip

        psi_k, _ = hamiltonian_values(spec, states, z_k)
        y_coeffs, cond_y, ridge_y = _regress(design, y_next + psi_k * dt)
        y_k = design @ y_coeffs

        for _ in range(max(0, picard_sweeps - 1)):
            target_z = (y_next - y_k)[:, None] * dw / dt
            z_coeffs, cond, ridge = _regress(design, target_z)
            z_k = design @ z_coeffs
            z_k, n_clip = _clip_norm(z_k, z_max)
            psi_k, _ = hamiltonian_values(spec, states, z_k)
            y_coeffs, cond_y, ridge_y = _regress(design, y_next + psi_k * dt)
            y_k = design @ y_coeffs

        violations += int(np.count_nonzero(np.abs(y_k) > y_bound))
        np.clip(y_k, -y_bound, y_bound, out=y_k)
        y[:, k] = y_k
        z[:, k, :] = z_k
        fitted.steps[k] = _StepFit(
            mean=meta["mean"], std=meta["std"], lo=meta["lo"], hi=meta["hi"],
            knots=meta["knots"], active=meta["active"], z_coeffs=z_coeffs,
            condition=max(cond, cond_y), ridge_used=ridge or ridge_y,
        )
        any_ridge = any_ridge or ridge or ridge_y
        if k == 0:
            resid = y_next + psi_k * dt
            y0_std_error = float(resid.std(ddof=1) / np.sqrt(n_paths))

    if any_ridge:
        warnings.warn(
            "ill-conditioned regression design; ridge fallback was used",
            SingularRegressionWarning,
            stacklevel=2,
        )

    y0 = _extract_y0(y[:, 0])
    solution = BsdeSolution(
        spec=spec,
        forward=forward,
        basis=fitted,
        y=y,
        z=z,
        y0=y0,
        y0_std_error=y0_std_error,
        clip_level=z_max,
        y_bound=y_bound,
        y_violation_rate=violations / (n_paths * (n_steps + 1)),
        z_clip_rate=clipped / (n_paths * n_steps),
        bmo_estimate=0.0,
    )
    solution.bmo = bmo_diagnostic(solution)
    solution.bmo_estimate = solution.bmo.estimate
    return solution


def _clip_norm(z_k: np.ndarray, z_max: float) -> tuple[np.ndarray, int]:
    norms = np.linalg.norm(z_k, axis=1)
    over = norms > z_max
    n_over = int(np.count_nonzero(over))
    if n_over:
        z_k = z_k.copy()
        z_k[over] *= (z_max / norms[over])[:, None]
    return z_k, n_over


def _extract_y0(y_row: np.ndarray) -> float:
    spread = float(y_row.std())
    if spread >= Y0_DEGENERACY_TOL:
        raise NonDegenerateInitialValue(
            f"Y at t=0 has cross-path std {spread:.3g} >= {Y0_DEGENERACY_TOL:g}"
        )
    return float(tree_sum(y_row) / y_row.size)


def bmo_diagnostic(solution: BsdeSolution) -> BmoDiagnostics:
    """Conditional tail integrals of |Z|^2 at every grid time.

    The supremum over stopping times is restricted to deterministic grid
    times, which under-estimates the true norm; fitted conditionals are
    floored at zero.
    """
    grid = solution.forward.grid
    dt = grid.dt
    n_steps = grid.n_steps
    z_sq = np.sum(solution.z**2, axis=2) * dt  # (n_paths, n_steps)
    tails = np.zeros((solution.forward.n_paths, n_steps + 1))
    tails[:, :-1] = np.cumsum(z_sq[:, ::-1], axis=1)[:, ::-1]
    profile = np.zeros(n_steps + 1)
    mean_profile = np.zeros(n_steps + 1)
    for k in range(n_steps):
        fit = solution.basis.steps[k]
        states = solution.forward.values[:, k, :]
        fast = solution._fast_at(k)
        design, _ = _design(solution.basis.spec, states, fast, fit)
        coeffs, _, _ = _regress(design, tails[:, k])
        fitted = np.maximum(design @ coeffs, 0.0)
        profile[k] = float(fitted.max())
        mean_profile[k] = float(fitted.mean())
    return BmoDiagnostics(
        times=grid.times,
        profile=profile,
        mean_profile=mean_profile,
        estimate=float(profile.max()),
    )


def y0_value(solution: BsdeSolution) -> float:
    """Cross-sectional value at t=0; raises if the step-0 fit is broken."""
    return _extract_y0(solution.y[:, 0])
