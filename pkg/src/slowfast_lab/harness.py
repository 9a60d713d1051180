"""End-to-end experiments: the scale-separation sweep and its relatives.

`epsilon_sweep` verifies, on a benchmark spec, that the optimal cost and
the optimal control of the fast-scale problem converge to those of the
reduced problem as epsilon shrinks: every epsilon row and the reduced
solve consume the *same* Wiener increments (common random numbers), the
backward equation is solved along each forward, and the gaps

    |Y0(eps) - Y0(reduced)|,   E int |u_eps - u_hat|^2 dt

must shrink down the epsilon list. No rate is asserted, only monotone
decrease within statistical slack plus configured absolute thresholds.

`wong_zakai_experiment` drives the slow state with a mollified derivative
instead of the fast Ornstein-Uhlenbeck response and measures the strong
gap to the corrected limit equation, with an ablation run that omits the
derivative correction. `fast_fast_experiment` adds a quadratic
self-interaction to the fast equation and compares against the reduced
equation with the Gaussian-average drift.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._reduce import mean_and_se
from .bsde import BasisSpec, BsdeSolution, solve_bsde
from .control import ControlProcess, CostEstimate, cost_weak
from .errors import SlowFastError
from .forward import (
    SlowPathEnsemble,
    drift_correction,
    solve_forward_eps,
    solve_forward_reduced,
)
from .hamiltonian import feedback_controls
from .model import ProblemSpec, load_preset
from .noise import (
    FastPathEnsemble,
    TimeGrid,
    WienerEnsemble,
    gamma_mollify,
    gamma_ou,
    ou_step_coefficients,
    sample_wiener,
    shift_semimartingale,
)

__all__ = [
    "SweepConfig",
    "SweepRow",
    "SweepResult",
    "epsilon_sweep",
    "wong_zakai_experiment",
    "fast_fast_experiment",
    "ExperimentRow",
]


@dataclass(frozen=True)
class SweepConfig:
    """Configuration of one epsilon sweep."""

    spec_name: str = "scalar-riesz"
    eps_list: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    n_paths: int = 20_000
    n_steps: int = 400
    seeds: tuple[int, ...] = (0,)
    n_schedule: tuple[float, ...] = (5.0, 10.0, 20.0)
    basis: BasisSpec = field(default_factory=BasisSpec)
    value_gap_threshold: float = 0.05
    control_gap_threshold: float = 0.05
    spec: ProblemSpec | None = None

    def __post_init__(self):
        eps = self.eps_list
        if len(eps) < 1 or any(e <= 0 for e in eps):
            raise ValueError("eps list must contain positive values")
        if list(eps) != sorted(eps, reverse=True) or len(set(eps)) != len(eps):
            if not all(eps[i] >= eps[i + 1] for i in range(len(eps) - 1)):
                raise ValueError("eps list must be decreasing")

    def resolve_spec(self) -> ProblemSpec:
        return self.spec if self.spec is not None else load_preset(self.spec_name)


@dataclass(frozen=True)
class SweepRow:
    """Per-epsilon measurements; `se_*` are Monte Carlo standard errors."""

    eps: float
    y0_eps: float
    se_y0_eps: float
    y0_hat: float
    se_y0_hat: float
    cost_eps: float
    se_cost_eps: float
    cost_hat: float
    se_cost_hat: float
    ctrl_l2_gap: float
    se_ctrl_l2_gap: float
    supy_gap: float
    se_supy_gap: float
    bmo_eps: float
    verdict: str = "ok"
    forward_gap: float = float("nan")

    @property
    def value_gap(self) -> float:
        return abs(self.y0_eps - self.y0_hat)

    @property
    def se_value_gap(self) -> float:
        return float(np.hypot(self.se_y0_eps, self.se_y0_hat))


@dataclass(frozen=True)
class SweepResult:
    config: SweepConfig
    rows: tuple[SweepRow, ...]
    verdict: str  # "PASS" | "FAIL"
    details: dict
    wall_time: float


def _zero_shift(wiener: WienerEnsemble, g_diag: np.ndarray):
    drift = np.zeros_like(wiener.increments)
    return shift_semimartingale(wiener, drift, g_diag)


def _gap_statistics(u_eps, u_hat, y_eps, y_hat, x_eps, x_hat, dt):
    """Pathwise control, value, and forward gaps under shared noise."""
    ctrl = np.sum((u_eps - u_hat) ** 2, axis=(1, 2)) * dt
    supy = np.max(np.abs(y_eps - y_hat), axis=1)
    fwd = np.mean(
        np.minimum(1.0, np.linalg.norm(x_eps - x_hat, axis=2)), axis=1
    )
    return ctrl, supy, fwd


def _solve_along(spec, forward, wiener, basis) -> tuple[BsdeSolution, np.ndarray]:
    solution = solve_bsde(forward, wiener, spec, basis=basis)
    controls = feedback_controls(
        spec, forward.values[:, :-1, :], solution.z
    )
    return solution, controls


def _sweep_one_seed(spec: ProblemSpec, config: SweepConfig, seed: int) -> list[dict]:
    grid = TimeGrid(spec.T, config.n_steps)
    wiener = sample_wiener(grid, config.n_paths, seed, spec.dims.n_fast)
    dt = grid.dt

    reduced = solve_forward_reduced(spec, wiener)
    sol_hat, u_hat = _solve_along(spec, reduced, wiener, config.basis)
    cost_hat = cost_weak(
        reduced,
        ControlProcess(u_hat, dt, provenance="bsde-feedback-reduced"),
        spec, wiener, config.n_schedule,
    )

    measurements = []
    for eps in config.eps_list:
        try:
            fast = gamma_ou(_zero_shift(wiener, spec.coeffs.g_diag), eps)
            fwd = solve_forward_eps(spec, fast)
            sol_eps, u_eps = _solve_along(spec, fwd, wiener, config.basis)
            cost_eps = cost_weak(
                fwd,
                ControlProcess(u_eps, dt, provenance="bsde-feedback-eps"),
                spec, wiener, config.n_schedule,
            )
            ctrl, supy, fwd_gap = _gap_statistics(
                u_eps, u_hat, sol_eps.y, sol_hat.y,
                fwd.values, reduced.values, dt,
            )
            ctrl_mean, ctrl_se = mean_and_se(ctrl)
            supy_mean, supy_se = mean_and_se(supy)
            fwd_mean, _ = mean_and_se(fwd_gap)
            measurements.append(dict(
                eps=eps, verdict="ok",
                y0_eps=sol_eps.y0, se_y0_eps=sol_eps.y0_std_error,
                y0_hat=sol_hat.y0, se_y0_hat=sol_hat.y0_std_error,
                cost_eps=cost_eps.value, se_cost_eps=cost_eps.std_error,
                cost_hat=cost_hat.value, se_cost_hat=cost_hat.std_error,
                ctrl_l2_gap=ctrl_mean, se_ctrl_l2_gap=ctrl_se,
                supy_gap=supy_mean, se_supy_gap=supy_se,
                bmo_eps=sol_eps.bmo_estimate,
                forward_gap=fwd_mean,
            ))
        except SlowFastError as exc:
            measurements.append(dict(eps=eps, verdict=f"FAILED: {exc}"))
    return measurements


def _combine_seed_rows(per_seed: list[list[dict]]) -> list[SweepRow]:
    """Average replicate measurements; combine SEs as independent."""
    rows = []
    n_eps = len(per_seed[0])
    s = len(per_seed)
    for i in range(n_eps):
        cells = [run[i] for run in per_seed]
        failed = [c for c in cells if c["verdict"] != "ok"]
        if failed:
            rows.append(SweepRow(
                eps=cells[0]["eps"], y0_eps=np.nan, se_y0_eps=np.nan,
                y0_hat=np.nan, se_y0_hat=np.nan, cost_eps=np.nan,
                se_cost_eps=np.nan, cost_hat=np.nan, se_cost_hat=np.nan,
                ctrl_l2_gap=np.nan, se_ctrl_l2_gap=np.nan, supy_gap=np.nan,
                se_supy_gap=np.nan, bmo_eps=np.nan,
                verdict=failed[0]["verdict"],
            ))
            continue
        def avg(key):
            return float(np.mean([c[key] for c in cells]))

        def se(key):
            return float(np.sqrt(np.sum([c[key] ** 2 for c in cells])) / s)

        rows.append(SweepRow(
            eps=cells[0]["eps"],
            y0_eps=avg("y0_eps"), se_y0_eps=se("se_y0_eps"),
            y0_hat=avg("y0_hat"), se_y0_hat=se("se_y0_hat"),
            cost_eps=avg("cost_eps"), se_cost_eps=se("se_cost_eps"),
            cost_hat=avg("cost_hat"), se_cost_hat=se("se_cost_hat"),
            ctrl_l2_gap=avg("ctrl_l2_gap"), se_ctrl_l2_gap=se("se_ctrl_l2_gap"),
            supy_gap=avg("supy_gap"), se_supy_gap=se("se_supy_gap"),
            bmo_eps=avg("bmo_eps"),
            forward_gap=avg("forward_gap"),
        ))
    return rows


def _nonincreasing_within_slack(values, slacks) -> bool:
    for i in range(len(values) - 1):
        allowance = 2.0 * float(np.hypot(slacks[i], slacks[i + 1]))
        if values[i + 1] > values[i] + allowance:
            return False
    return True


def epsilon_sweep(config: SweepConfig) -> SweepResult:
    """Run the sweep; verdict PASS iff both gap sequences are nonincreasing
    within 2 combined-SE slack and the final values clear the thresholds."""
    t0 = time.perf_counter()
    spec = config.resolve_spec()
    per_seed = [_sweep_one_seed(spec, config, s) for s in config.seeds]
    rows = _combine_seed_rows(per_seed)

    ok_rows = [r for r in rows if r.verdict == "ok"]
    details: dict = {"failed_rows": len(rows) - len(ok_rows)}
    if len(ok_rows) == len(rows) and len(ok_rows) >= 2:
        value_gaps = [r.value_gap for r in ok_rows]
        value_slack = [r.se_value_gap for r in ok_rows]
        ctrl_gaps = [r.ctrl_l2_gap for r in ok_rows]
        ctrl_slack = [r.se_ctrl_l2_gap for r in ok_rows]
        value_mono = _nonincreasing_within_slack(value_gaps, value_slack)
        ctrl_mono = _nonincreasing_within_slack(ctrl_gaps, ctrl_slack)
        value_final = value_gaps[-1] <= config.value_gap_threshold
        ctrl_final = ctrl_gaps[-1] <= config.control_gap_threshold
        details.update(
            value_gaps=value_gaps, ctrl_gaps=ctrl_gaps,
            value_monotone=value_mono, ctrl_monotone=ctrl_mono,
            value_below_threshold=value_final, ctrl_below_threshold=ctrl_final,
            forward_gaps=[r.forward_gap for r in ok_rows],
        )
        verdict = "PASS" if (value_mono and ctrl_mono and value_final
                             and ctrl_final) else "FAIL"
    else:
        verdict = "FAIL"
    return SweepResult(
        config=config,
        rows=tuple(rows),
        verdict=verdict,
        details=details,
        wall_time=time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------
# strong-error experiments
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentRow:
    """Strong terminal error at one epsilon, with the ablated variant."""

    eps: float
    error: float
    se_error: float
    error_ablated: float = float("nan")
    se_error_ablated: float = float("nan")


def _terminal_gap(a: SlowPathEnsemble, b: SlowPathEnsemble) -> tuple[float, float]:
    gap = np.linalg.norm(a.values[:, -1, :] - b.values[:, -1, :], axis=1)
    return mean_and_se(gap)


def wong_zakai_experiment(eps_list=(0.2, 0.1, 0.05, 0.025),
                          n_paths: int = 2000, n_steps: int = 2000,
                          seed: int = 0, spec: ProblemSpec | None = None,
                          kernel=None) -> list[ExperimentRow]:
    """Mollifier-driven paths against the derivative-corrected limit.

    The limit equation is the reduced equation (whose corrected drift is
    the Ito form of the Stratonovich limit); the ablated comparison solves
    it without the derivative correction. Strong errors are measured at T
    under shared noise.
    """
    spec = spec or load_preset("wz-sine")
    grid = TimeGrid(spec.T, n_steps)
    wiener = sample_wiener(grid, n_paths, seed, spec.dims.n_fast)
    limit = solve_forward_reduced(spec, wiener)
    ablated = solve_forward_reduced(spec, wiener, include_ito_correction=False)
    base = _zero_shift(wiener, spec.coeffs.g_diag)
    rows = []
    for eps in eps_list:
        fast = gamma_mollify(base, eps, kernel=kernel)
        fwd = solve_forward_eps(spec, fast)
        err, se = _terminal_gap(fwd, limit)
        err_ab, se_ab = _terminal_gap(fwd, ablated)
        rows.append(ExperimentRow(eps=eps, error=err, se_error=se,
                                  error_ablated=err_ab, se_error_ablated=se_ab))
    return rows


def _fast_quadratic(path, epsilon: float, q) -> FastPathEnsemble:
    """Fast equation with quadratic self-interaction:
    exponential-Euler linear part, explicit interaction term."""
    grid = path.grid
    decay, gain = ou_step_coefficients(grid.dt, epsilon)
    interaction_gain = epsilon * (1.0 - decay)
    inc = path.increments
    n_paths, n_steps, n_fast = inc.shape
    values = np.zeros((n_paths, n_steps + 1, n_fast))
    q_now = np.zeros((n_paths, n_fast))
    for k in range(n_steps):
        q_now = (decay * q_now + interaction_gain * q(q_now, q_now)
                 + gain * inc[:, k, :])
        # overflow guard: freeze exploding fast paths at the box edge
        np.clip(q_now, -1e12, 1e12, out=q_now)
        values[:, k + 1, :] = q_now
    return FastPathEnsemble(grid=grid, n_paths=n_paths, epsilon=epsilon,
                            values=values, generator="ou", source=path)


def fast_fast_experiment(eps_list=(0.2, 0.1, 0.05, 0.025),
                         n_paths: int = 2000, n_steps: int = 2000,
                         seed: int = 0,
                         spec: ProblemSpec | None = None) -> list[ExperimentRow]:
    """Quadratic fast-fast interaction against the Gaussian-average limit.

    The fast equation gains the drift q(Q, Q); the reduced equation gains
    sigma(X) qhat dt with qhat the average of q(w, w) under the stationary
    Gaussian law of the fast process.
    """
    spec = spec or load_preset("fastfast-diag")
    if spec.coeffs.q is None:
        raise ValueError("fast-fast experiment needs a spec with q")
    grid = TimeGrid(spec.T, n_steps)
    wiener = sample_wiener(grid, n_paths, seed, spec.dims.n_fast)
    q_hat = drift_correction(spec, "gaussian_qhat")
    limit = solve_forward_reduced(spec, wiener, extra_drift=q_hat)
    base = _zero_shift(wiener, spec.coeffs.g_diag)
    rows = []
    for eps in eps_list:
        fast = _fast_quadratic(base, eps, spec.coeffs.q)
        fwd = solve_forward_eps(spec, fast)
        err, se = _terminal_gap(fwd, limit)
        rows.append(ExperimentRow(eps=eps, error=err, se_error=se))
    return rows
