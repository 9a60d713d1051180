"""Weak-formulation cost machinery.

Controls with unbounded energy are handled by localization: the stopping
step tau_n cuts each path when its running control energy reaches n, the
control is switched to the neutral u_star afterwards, and the cost at level
n is a Girsanov-weighted average over *uncontrolled* paths. The reported
cost is the value at the largest schedule level together with the
stabilization table over n; a strong-formulation simulation of the same
policy provides the cross-check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._reduce import tree_sum
from .errors import (
    DegenerateWeightsWarning,
    GridMismatch,
    NotStabilizedWarning,
)
from .forward import SlowPathEnsemble, solve_controlled
from .model import ProblemSpec
from .noise import WienerEnsemble

__all__ = [
    "ControlProcess",
    "LocalizedControl",
    "GirsanovWeight",
    "CostEstimate",
    "localize",
    "girsanov_weight",
    "cost_weak",
    "cost_strong",
    "admissibility_diagnostic",
]


@dataclass(frozen=True)
class ControlProcess:
    """Adapted control values on grid steps, (n_paths, n_steps, n_control)."""

    values: np.ndarray
    dt: float
    provenance: str = "explicit"

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    def energy(self) -> np.ndarray:
        """Discrete running energy after k steps, shape (n_paths, n_steps+1)."""
        inc = np.sum(self.values**2, axis=2) * self.dt
        out = np.zeros((self.n_paths, self.n_steps + 1))
        np.cumsum(inc, axis=1, out=out[:, 1:])
        return out


@dataclass(frozen=True)
class LocalizedControl:
    """Control truncated at the energy-n stopping step.

    `tau_steps[p]` is the first step count k at which the running energy
    of path p reaches n (capped at the horizon); steps at and after
    tau_steps carry u_star.
    """

    base: ControlProcess
    level: float
    tau_steps: np.ndarray
    values: np.ndarray
    u_star: np.ndarray


@dataclass(frozen=True)
class GirsanovWeight:
    """Exponential-martingale weights along uncontrolled paths.

    `log_weights[:, k]` is log E at node k; increments vanish identically
    after the stopping step because r(., u_star) = 0.
    """

    log_weights: np.ndarray
    tau_steps: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return np.exp(self.log_weights[:, -1])

    def at_tau(self) -> np.ndarray:
        """E_{tau_n ^ T}, for the frozen-after-tau identity."""
        idx = np.arange(self.log_weights.shape[0])
        return np.exp(self.log_weights[idx, self.tau_steps])

    def effective_sample_size(self) -> float:
        w = self.final
        return float(tree_sum(w) ** 2 / tree_sum(w**2))


@dataclass(frozen=True)
class CostEstimate:
    """Monte Carlo cost value with localization diagnostics.

    `table` rows are (n, value, std_error, effective_sample_size) over the
    schedule; `value` is the entry at the largest level.
    """

    value: float
    std_error: float
    n_level: float
    table: tuple = ()
    ess: float = float("nan")
    stabilized: bool = True
    degenerate_weights: bool = False
    provenance: str = ""


def localize(u: ControlProcess, n: float,
             u_star: np.ndarray) -> LocalizedControl:
    """Truncate a control at energy level n > 0.

    tau_n is the first step count at which the running discrete energy
    sum |u_k|^2 dt reaches n, capped at the horizon; the truncated control
    keeps u strictly before tau_n and is u_star afterwards.
    """
    if n <= 0.0:
        raise ValueError("localization level must be positive")
    u_star = np.atleast_1d(np.asarray(u_star, dtype=np.float64))
    energy = u.energy()  # (n_paths, n_steps + 1)
    n_steps = u.n_steps
    crossed = energy[:, 1:] >= n
    tau = np.where(
        crossed.any(axis=1), crossed.argmax(axis=1) + 1, n_steps
    )
    mask = np.arange(n_steps)[None, :] >= tau[:, None]
    values = u.values.copy()
    values[mask] = u_star
    return LocalizedControl(base=u, level=float(n), tau_steps=tau,
                            values=values, u_star=u_star)


def girsanov_weight(forward: SlowPathEnsemble, loc: LocalizedControl,
                    wiener: WienerEnsemble,
                    spec: ProblemSpec) -> GirsanovWeight:
    """Accumulate log E = sum <r_k, dW_k> - |r_k|^2 dt / 2 along paths.

    r is evaluated at the uncontrolled state and the truncated control;
    after tau_n every increment is exactly zero.
    """
    grid = forward.grid
    if (wiener.grid.T, wiener.grid.n_steps) != (grid.T, grid.n_steps):
        raise GridMismatch("forward and Wiener ensembles on different grids")
    if forward.n_paths != wiener.n_paths:
        raise GridMismatch("path counts differ")
    if loc.values.shape[:2] != (forward.n_paths, grid.n_steps):
        raise GridMismatch("control process does not match the ensemble")
    n_paths, n_steps = forward.n_paths, grid.n_steps
    dt = grid.dt
    x_flat = forward.values[:, :-1, :].reshape(n_paths * n_steps, -1)
    u_flat = loc.values.reshape(n_paths * n_steps, -1)
    r = spec.coeffs.r(x_flat, u_flat).reshape(n_paths, n_steps, -1)
    incs = np.einsum("pkm,pkm->pk", r, wiener.increments)
    incs -= 0.5 * np.sum(r**2, axis=2) * dt
    log_w = np.zeros((n_paths, n_steps + 1))
    np.cumsum(incs, axis=1, out=log_w[:, 1:])
    return GirsanovWeight(log_weights=log_w, tau_steps=loc.tau_steps)


def _pathwise_cost(forward: SlowPathEnsemble, controls: np.ndarray,
                   spec: ProblemSpec) -> np.ndarray:
    """int l(X, u) dt + h(X_T) per path, left-endpoint quadrature."""
    n_paths, n_steps = controls.shape[:2]
    x_flat = forward.values[:, :-1, :].reshape(n_paths * n_steps, -1)
    u_flat = controls.reshape(n_paths * n_steps, -1)
    running = spec.coeffs.l(x_flat, u_flat).reshape(n_paths, n_steps)
    total = np.sum(running, axis=1) * forward.grid.dt
    return total + spec.coeffs.h(forward.values[:, -1, :])


def _weighted_mean_se(weights: np.ndarray,
                      payoff: np.ndarray) -> tuple[float, float]:
    prod = weights * payoff
    n = prod.size
    mean = float(tree_sum(prod) / n)
    var = float(tree_sum((prod - mean) ** 2) / (n - 1))
    return mean, float(np.sqrt(var / n))


def cost_weak(forward: SlowPathEnsemble, u: ControlProcess,
              spec: ProblemSpec, wiener: WienerEnsemble,
              n_schedule: tuple[float, ...] = (5.0, 10.0, 20.0)) -> CostEstimate:
    """Localized weak-formulation cost over an increasing schedule.

    For each level n the estimate is the weighted Monte Carlo average
    E[E_T (int l(X, u^n) dt + h(X_T))] on uncontrolled paths. The returned
    value is taken at the largest level; stabilization requires the last
    two levels to agree within max(2 combined SE, 1e-3 |value|).
    """
    if len(n_schedule) < 3:
        raise ValueError("n_schedule needs at least 3 levels")
    if list(n_schedule) != sorted(n_schedule):
        raise ValueError("n_schedule must be increasing")
    rows = []
    for n in n_schedule:
        loc = localize(u, n, spec.coeffs.u_star)
        gw = girsanov_weight(forward, loc, wiener, spec)
        payoff = _pathwise_cost(forward, loc.values, spec)
        value, se = _weighted_mean_se(gw.final, payoff)
        rows.append((float(n), value, se, gw.effective_sample_size()))

    last, prev = rows[-1], rows[-2]
    tol = max(2.0 * np.hypot(last[2], prev[2]), 1e-3 * abs(last[1]))
    stabilized = abs(last[1] - prev[1]) < tol
    if not stabilized:
        warnings.warn(
            f"weak cost not stabilized over schedule {tuple(n_schedule)}: "
            f"last two levels differ by {abs(last[1] - prev[1]):.3g} > {tol:.3g}",
            NotStabilizedWarning,
            stacklevel=2,
        )
    ess = last[3]
    degenerate = ess < 0.01 * forward.n_paths
    if degenerate:
        warnings.warn(
            f"effective sample size {ess:.1f} below 1% of {forward.n_paths} paths",
            DegenerateWeightsWarning,
            stacklevel=2,
        )
    return CostEstimate(
        value=last[1],
        std_error=last[2],
        n_level=last[0],
        table=tuple(rows),
        ess=ess,
        stabilized=stabilized,
        degenerate_weights=degenerate,
        provenance=f"weak({u.provenance})",
    )


def cost_strong(spec: ProblemSpec, policy, mode: str,
                wiener: WienerEnsemble, epsilon: float | None = None,
                **solver_kwargs) -> CostEstimate:
    """Unweighted cost of directly simulated controlled dynamics."""
    ens = solve_controlled(spec, policy, mode, wiener, epsilon=epsilon,
                           **solver_kwargs)
    payoff = _pathwise_cost(ens, ens.controls, spec)
    value, se = _weighted_mean_se(np.ones(ens.n_paths), payoff)
    return CostEstimate(
        value=value,
        std_error=se,
        n_level=float("inf"),
        ess=float(ens.n_paths),
        provenance=f"strong({mode}, {getattr(policy, 'description', 'policy')})",
    )


def admissibility_diagnostic(forward: SlowPathEnsemble, u: ControlProcess,
                             spec: ProblemSpec, wiener: WienerEnsemble,
                             n_schedule: tuple[float, ...] = (5.0, 10.0, 20.0)):
    """Table of E[E_T int_0^{tau_n} |u|^2 dt] over the schedule.

    Returns (rows, supremum, stabilized); rows are (n, value, std_error).
    A numerically stabilized, finite supremum is the computable proxy for
    admissibility of the control.
    """
    rows = []
    dt = forward.grid.dt
    for n in n_schedule:
        loc = localize(u, n, spec.coeffs.u_star)
        gw = girsanov_weight(forward, loc, wiener, spec)
        kept = np.arange(u.n_steps)[None, :] < loc.tau_steps[:, None]
        energy = np.sum(np.sum(u.values**2, axis=2) * kept, axis=1) * dt
        value, se = _weighted_mean_se(gw.final, energy)
        rows.append((float(n), value, se))
    sup = max(r[1] for r in rows)
    tol = max(2.0 * np.hypot(rows[-1][2], rows[-2][2]), 1e-3 * abs(sup))
    stabilized = abs(rows[-1][1] - rows[-2][1]) < tol
    return rows, sup, stabilized
