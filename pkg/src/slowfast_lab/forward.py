"""Slow-state solvers and drift-correction objects.

Three integrators share one substepped Euler kernel so that runs which must
coincide pathwise (e.g. a controlled solve with the neutral control versus
the uncontrolled solve) produce bit-identical arrays:

    solve_forward_eps      -- pathwise random ODE driven by a fast ensemble
    solve_forward_reduced  -- Euler-Maruyama for the white-noise limit
    solve_controlled       -- either dynamics with a feedback control

Derivatives of sigma needed by the corrected drift and by the
Ito-Stratonovich trace are central finite differences; coefficients stay
black boxes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    GridMismatch,
    NonFiniteDerivative,
    NotBilinear,
    OverflowWarning,
    PolicyEvaluationFailure,
)
from .model import ProblemSpec
from .noise import (
    FastPathEnsemble,
    TimeGrid,
    WienerEnsemble,
    ou_step_coefficients,
)

__all__ = [
    "SlowPathEnsemble",
    "DriftCorrection",
    "GaussianAverage",
    "corrected_drift",
    "sigma2_trace",
    "gaussian_average_q",
    "drift_correction",
    "solve_forward_eps",
    "solve_forward_reduced",
    "solve_controlled",
    "OVERFLOW_LIMIT",
    "DEFAULT_FD_STEP",
]

OVERFLOW_LIMIT = 1e12
DEFAULT_FD_STEP = 1e-4


@dataclass(frozen=True)
class SlowPathEnsemble:
    """Slow-state paths on grid nodes, with provenance.

    `values` has shape (n_paths, n_steps + 1, n_slow). `controls`, when the
    ensemble came from a controlled solve, has shape
    (n_paths, n_steps, n_control). `fast_values` keeps the fast-state nodes
    that drove an eps-mode solve (needed downstream as a regression state).
    Paths that hit the overflow guard are frozen at their last finite value
    and listed in `overflow_paths`.
    """

    grid: TimeGrid
    n_paths: int
    values: np.ndarray
    scheme: str
    provenance: str
    controls: np.ndarray | None = None
    fast_values: np.ndarray | None = field(default=None, repr=False)
    overflow_paths: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64)
    )

    @property
    def overflowed(self) -> bool:
        return self.overflow_paths.size > 0


@dataclass(frozen=True)
class DriftCorrection:
    """One of the three drift-correction objects.

    kind "ito_correction_bhat" and "stratonovich_sigma2" carry an evaluation
    map on batches of slow states; kind "gaussian_qhat" carries a constant
    fast-space vector.
    """

    kind: str
    map: Callable | None = None
    vector: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("ito_correction_bhat", "stratonovich_sigma2",
                             "gaussian_qhat"):
            raise ValueError(f"unknown correction kind {self.kind!r}")
        if self.kind == "gaussian_qhat":
            if self.vector is None:
                raise ValueError("gaussian_qhat needs a constant vector")
        elif self.map is None:
            raise ValueError(f"{self.kind} needs an evaluation map")


def _sigma_jacobian_contraction(sigma: Callable, x: np.ndarray,
                                weights: np.ndarray,
                                fd_step: float) -> np.ndarray:
    """sum_m weights_m sum_j D_j sigma^{.,m}(x) sigma^{j,m}(x), batched.

    Central differences with per-coordinate relative step. Raises
    NonFiniteDerivative when a difference quotient is not finite.
    """
    x = np.asarray(x, dtype=np.float64)
    n, n_slow = x.shape
    sx = sigma(x)  # (n, n_slow, n_fast)
    out = np.zeros((n, n_slow))
    for j in range(n_slow):
        step = fd_step * np.maximum(1.0, np.abs(x[:, j]))
        xp = x.copy()
        xm = x.copy()
        xp[:, j] += step
        xm[:, j] -= step
        dsig = (sigma(xp) - sigma(xm)) / (2.0 * step)[:, None, None]
        if not np.all(np.isfinite(dsig)):
            raise NonFiniteDerivative(
                f"sigma derivative along coordinate {j} is not finite"
            )
        # D_j sigma^{i,m} * sigma^{j,m}, contracted over m with weights
        out += np.einsum("m,nim,nm->ni", weights, dsig, sx[:, j, :])
    return out


def corrected_drift(b: Callable, sigma: Callable, g_diag: np.ndarray,
                    fd_step: float = DEFAULT_FD_STEP) -> Callable:
    """Drift of the reduced equation:

        x -> b(x) + (1/2) sum_m lambda_m^2 sum_j D_j sigma^{.,m}(x) sigma^{j,m}(x)
    """
    if fd_step <= 0.0:
        raise ValueError("fd_step must be positive")
    weights = 0.5 * np.asarray(g_diag, dtype=np.float64) ** 2

    def b_hat(x):
        return b(x) + _sigma_jacobian_contraction(sigma, x, weights, fd_step)

    return b_hat


def sigma2_trace(sigma: Callable,
                 fd_step: float = DEFAULT_FD_STEP) -> Callable:
    """Trace of the Ito-Stratonovich correction map:

        x -> sum_m grad(sigma(x) e_m) (sigma(x) e_m)
    """
    if fd_step <= 0.0:
        raise ValueError("fd_step must be positive")

    def trace(x):
        x = np.asarray(x, dtype=np.float64)
        n_fast = sigma(x[:1]).shape[2]
        return _sigma_jacobian_contraction(
            sigma, x, np.ones(n_fast), fd_step
        )

    return trace


@dataclass(frozen=True)
class GaussianAverage:
    """Monte Carlo (or exact) Gaussian average of the fast-fast interaction."""

    value: np.ndarray
    std_error: np.ndarray
    method: str  # "exact-diagonal" | "monte-carlo"

    def as_correction(self) -> DriftCorrection:
        return DriftCorrection(kind="gaussian_qhat", vector=self.value)


def _check_bilinear(q: Callable, n_fast: int, rng: np.random.Generator) -> None:
    v = rng.standard_normal((64, n_fast))
    w = rng.standard_normal((64, n_fast))
    z = rng.standard_normal((64, n_fast))
    a, bcoef = 1.3, -0.7
    lhs1 = q(a * v + bcoef * w, z)
    rhs1 = a * q(v, z) + bcoef * q(w, z)
    lhs2 = q(z, a * v + bcoef * w)
    rhs2 = a * q(z, v) + bcoef * q(z, w)
    scale = 1.0 + max(np.max(np.abs(rhs1)), np.max(np.abs(rhs2)))
    if (np.max(np.abs(lhs1 - rhs1)) > 1e-8 * scale
            or np.max(np.abs(lhs2 - rhs2)) > 1e-8 * scale):
        raise NotBilinear("sampled bilinearity identities failed for q")


def gaussian_average_q(q: Callable, g_diag: np.ndarray, n_quad: int = 100_000,
                       seed: int = 0, diagonal: bool = False) -> GaussianAverage:
    """Average q(w, w) over w ~ N(0, diag(lambda^2 / 2)).

    When `diagonal` is declared the exact second-moment identity
    qhat_i = q(e_i, e_i)_i lambda_i^2 / 2 is used and the standard error is
    zero; otherwise plain Monte Carlo with n_quad >= 1000 samples.
    """
    g = np.asarray(g_diag, dtype=np.float64)
    n_fast = g.size
    rng = np.random.default_rng(seed)
    _check_bilinear(q, n_fast, rng)
    if diagonal:
        eye = np.eye(n_fast)
        q_ee = q(eye, eye)  # row i = q(e_i, e_i)
        value = np.einsum("ii->i", q_ee) * g**2 / 2.0
        return GaussianAverage(value=value, std_error=np.zeros(n_fast),
                               method="exact-diagonal")
    if n_quad < 1000:
        raise ValueError("n_quad must be at least 1000")
    w = rng.standard_normal((n_quad, n_fast)) * (g / np.sqrt(2.0))
    samples = q(w, w)
    value = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(n_quad)
    return GaussianAverage(value=value, std_error=se, method="monte-carlo")


def drift_correction(spec: ProblemSpec, kind: str,
                     fd_step: float = DEFAULT_FD_STEP,
                     n_quad: int = 100_000, seed: int = 0) -> DriftCorrection:
    """Build one of the three correction objects for a spec."""
    c = spec.coeffs
    if kind == "ito_correction_bhat":
        fn = c.b_hat or corrected_drift(c.b, c.sigma, c.g_diag, fd_step)
        return DriftCorrection(kind=kind, map=fn)
    if kind == "stratonovich_sigma2":
        return DriftCorrection(kind=kind, map=sigma2_trace(c.sigma, fd_step))
    if kind == "gaussian_qhat":
        if c.q is None:
            raise ValueError(f"spec '{spec.name}' has no fast-fast interaction")
        avg = gaussian_average_q(c.q, c.g_diag, n_quad=n_quad, seed=seed,
                                 diagonal=c.q_diagonal)
        return avg.as_correction()
    raise ValueError(f"unknown correction kind {kind!r}")


# --------------------------------------------------------------------------
# integrators
# --------------------------------------------------------------------------

def _apply_overflow_guard(x: np.ndarray, x_prev: np.ndarray,
                          frozen: np.ndarray) -> np.ndarray:
    """Freeze paths whose state left the overflow box; returns updated mask."""
    bad = np.any(np.abs(x) > OVERFLOW_LIMIT, axis=1) | ~np.all(
        np.isfinite(x), axis=1
    )
    newly = bad & ~frozen
    if np.any(newly):
        x[newly] = x_prev[newly]
        frozen = frozen | newly
    x[frozen] = x_prev[frozen]
    return frozen


def _euler_substeps(spec: ProblemSpec, x: np.ndarray, q_now: np.ndarray,
                    dt: float, n_sub: int) -> np.ndarray:
    """Explicit Euler over one noise step, fast input held constant."""
    a_mat = spec.coeffs.A
    h = dt / n_sub
    for _ in range(n_sub):
        drift = x @ a_mat.T + spec.coeffs.b(x)
        drift += np.einsum("nim,nm->ni", spec.coeffs.sigma(x), q_now)
        x = x + h * drift
    return x


def _substep_count(dt: float, epsilon: float) -> int:
    return max(1, int(np.ceil(dt / (epsilon / 10.0))))


def _finish(values: np.ndarray, frozen: np.ndarray, scheme: str,
            provenance: str, grid: TimeGrid, controls=None,
            fast_values=None) -> SlowPathEnsemble:
    overflow = np.nonzero(frozen)[0]
    if overflow.size:
        warnings.warn(
            f"{overflow.size} path(s) hit the overflow guard and were frozen",
            OverflowWarning,
            stacklevel=3,
        )
    return SlowPathEnsemble(
        grid=grid,
        n_paths=values.shape[0],
        values=values,
        scheme=scheme,
        provenance=provenance,
        controls=controls,
        fast_values=fast_values,
        overflow_paths=overflow,
    )


def solve_forward_eps(spec: ProblemSpec,
                      fast: FastPathEnsemble) -> SlowPathEnsemble:
    """Pathwise ODE dX/dt = A X + b(X) + sigma(X) Q_t along a fast ensemble.

    Each noise step is subdivided into ceil(dt / (eps/10)) Euler substeps
    with the fast input held at its left-node value.
    """
    grid = fast.grid
    n_paths = fast.n_paths
    n_sub = _substep_count(grid.dt, fast.epsilon)
    values = np.empty((n_paths, grid.n_steps + 1, spec.dims.n_slow))
    values[:, 0, :] = spec.x0
    frozen = np.zeros(n_paths, dtype=bool)
    x = np.broadcast_to(spec.x0, (n_paths, spec.dims.n_slow)).copy()
    for k in range(grid.n_steps):
        x_new = _euler_substeps(spec, x, fast.values[:, k, :], grid.dt, n_sub)
        frozen = _apply_overflow_guard(x_new, x, frozen)
        x = x_new
        values[:, k + 1, :] = x
    return _finish(values, frozen, scheme="euler-substepped",
                   provenance=f"eps-forward({fast.generator}, "
                              f"eps={fast.epsilon})",
                   grid=grid, fast_values=fast.values)


def solve_forward_reduced(spec: ProblemSpec, wiener: WienerEnsemble,
                          extra_drift: DriftCorrection | None = None,
                          include_ito_correction: bool = True,
                          fd_step: float = DEFAULT_FD_STEP) -> SlowPathEnsemble:
    """Euler-Maruyama for the reduced equation

        dX = (A X + b_hat(X)) dt + sigma(X) G dW  [+ sigma(X) qhat dt]

    `include_ito_correction=False` drops the derivative correction and uses
    the raw drift b (ablation runs).
    """
    if wiener.n_fast != spec.dims.n_fast:
        raise GridMismatch("Wiener ensemble fast dimension does not match spec")
    c = spec.coeffs
    if include_ito_correction:
        b_hat = c.b_hat or corrected_drift(c.b, c.sigma, c.g_diag, fd_step)
    else:
        b_hat = c.b
    q_hat = None
    if extra_drift is not None:
        if extra_drift.kind != "gaussian_qhat":
            raise ValueError(
                "solve_forward_reduced only takes a gaussian_qhat extra drift"
            )
        q_hat = extra_drift.vector
    grid = wiener.grid
    n_paths = wiener.n_paths
    g = np.asarray(c.g_diag)
    values = np.empty((n_paths, grid.n_steps + 1, spec.dims.n_slow))
    values[:, 0, :] = spec.x0
    frozen = np.zeros(n_paths, dtype=bool)
    x = np.broadcast_to(spec.x0, (n_paths, spec.dims.n_slow)).copy()
    dt = grid.dt
    for k in range(grid.n_steps):
        sig = c.sigma(x)
        drift = x @ c.A.T + b_hat(x)
        if q_hat is not None:
            drift = drift + sig @ q_hat
        x_new = x + dt * drift + np.einsum(
            "nim,nm->ni", sig, g * wiener.increments[:, k, :]
        )
        frozen = _apply_overflow_guard(x_new, x, frozen)
        x = x_new
        values[:, k + 1, :] = x
    return _finish(values, frozen, scheme="euler-maruyama",
                   provenance=f"reduced(seed={wiener.master_seed})", grid=grid)


def solve_controlled(spec: ProblemSpec, policy, mode: str,
                     wiener: WienerEnsemble, epsilon: float | None = None,
                     include_ito_correction: bool = True,
                     fd_step: float = DEFAULT_FD_STEP) -> SlowPathEnsemble:
    """Controlled dynamics under a feedback policy, with control record.

    mode "reduced" adds the drift sigma(X) G r(X, u) to the reduced
    equation. mode "eps" routes the control through the shifted
    semimartingale: the fast state responds to G (r dt + dW) via the
    exponential-Euler update, and the slow state sees only the fast state.
    The policy is called as policy(step, t, x_batch) and is evaluated with
    the state at the left node.
    """
    if wiener.n_fast != spec.dims.n_fast:
        raise GridMismatch("Wiener ensemble fast dimension does not match spec")
    if mode not in ("eps", "reduced"):
        raise ValueError(f"mode must be 'eps' or 'reduced', got {mode!r}")
    if mode == "eps":
        if epsilon is None or epsilon <= 0.0:
            raise ValueError("mode='eps' needs a positive epsilon")
    c = spec.coeffs
    grid = wiener.grid
    dt = grid.dt
    n_paths = wiener.n_paths
    g = np.asarray(c.g_diag)
    values = np.empty((n_paths, grid.n_steps + 1, spec.dims.n_slow))
    values[:, 0, :] = spec.x0
    controls = np.empty((n_paths, grid.n_steps, spec.dims.n_control))
    frozen = np.zeros(n_paths, dtype=bool)
    x = np.broadcast_to(spec.x0, (n_paths, spec.dims.n_slow)).copy()

    if mode == "reduced":
        if include_ito_correction:
            b_hat = c.b_hat or corrected_drift(c.b, c.sigma, c.g_diag, fd_step)
        else:
            b_hat = c.b
        for k in range(grid.n_steps):
            u = _eval_policy(policy, k, k * dt, x)
            controls[:, k, :] = u
            sig = c.sigma(x)
            shift = g * c.r(x, u)
            drift = x @ c.A.T + b_hat(x) + np.einsum("nim,nm->ni", sig, shift)
            x_new = x + dt * drift + np.einsum(
                "nim,nm->ni", sig, g * wiener.increments[:, k, :]
            )
            frozen = _apply_overflow_guard(x_new, x, frozen)
            x = x_new
            values[:, k + 1, :] = x
        return _finish(values, frozen, scheme="euler-maruyama",
                       provenance="controlled-reduced", grid=grid,
                       controls=controls)

    # eps mode: control shifts the semimartingale feeding the fast state
    decay, gain = ou_step_coefficients(dt, epsilon)
    n_sub = _substep_count(dt, epsilon)
    q_now = np.zeros((n_paths, spec.dims.n_fast))
    fast_values = np.zeros((n_paths, grid.n_steps + 1, spec.dims.n_fast))
    for k in range(grid.n_steps):
        u = _eval_policy(policy, k, k * dt, x)
        controls[:, k, :] = u
        x_new = _euler_substeps(spec, x, q_now, dt, n_sub)
        increment = g * (c.r(x, u) * dt + wiener.increments[:, k, :])
        q_now = decay * q_now + gain * increment
        fast_values[:, k + 1, :] = q_now
        frozen = _apply_overflow_guard(x_new, x, frozen)
        x = x_new
        values[:, k + 1, :] = x
    return _finish(values, frozen, scheme="euler-substepped",
                   provenance=f"controlled-eps(eps={epsilon})", grid=grid,
                   controls=controls, fast_values=fast_values)


def _eval_policy(policy, step: int, t: float, x: np.ndarray) -> np.ndarray:
    try:
        u = np.asarray(policy(step, t, x), dtype=np.float64)
    except Exception as exc:  # pragma: no cover - defensive
        raise PolicyEvaluationFailure(
            f"policy raised at step {step}: {exc}"
        ) from exc
    if u.shape[0] != x.shape[0] or not np.all(np.isfinite(u)):
        raise PolicyEvaluationFailure(
            f"policy returned invalid controls at step {step}"
        )
    return u
