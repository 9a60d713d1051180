"""Wiener ensembles and noise-approximation operators.

Two approximation operators turn a semimartingale into an adapted fast
process on the same grid:

    gamma_ou       -- stochastic convolution against the exponential kernel,
                      i.e. the fast Ornstein-Uhlenbeck response dQ =
                      -(1/eps) Q dt + (1/eps) dI, via an exponential-Euler
                      update that is exact for piecewise-constant increment
                      densities.
    gamma_mollify  -- discrete derivative of the path mollified with a
                      backward-looking kernel of unit mass supported on
                      [0, eps], so the output at t only sees increments
                      strictly before t.

Randomness is counter-based: path p of an ensemble is drawn from its own
Philox substream keyed by (master_seed, p), so ensembles are bit-identical
however the work is split across workers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    GridMismatch,
    NonAdaptedKernel,
    NonPositiveEpsilon,
    StiffnessWarning,
)

__all__ = [
    "TimeGrid",
    "WienerEnsemble",
    "SemimartingalePath",
    "FastPathEnsemble",
    "MollifierKernel",
    "sample_wiener",
    "gamma_ou",
    "gamma_mollify",
    "shift_semimartingale",
    "ou_step_coefficients",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with n_steps intervals."""

    T: float
    n_steps: int

    def __post_init__(self):
        if self.T <= 0.0:
            raise ValueError("horizon T must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        """Node times t_0 = 0, ..., t_{n_steps} = T."""
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass(frozen=True)
class WienerEnsemble:
    """Increments of n_paths independent Wiener paths in H = R^{n_fast}.

    `increments` has shape (n_paths, n_steps, n_fast) and units sqrt(time);
    entry [p, k, :] is W(t_{k+1}) - W(t_k) for path p.
    """

    grid: TimeGrid
    n_paths: int
    n_fast: int
    increments: np.ndarray
    master_seed: int
    path_keys: np.ndarray = field(repr=False)

    def brownian(self) -> np.ndarray:
        """Cumulative paths, shape (n_paths, n_steps + 1, n_fast), W_0 = 0."""
        out = np.zeros((self.n_paths, self.grid.n_steps + 1, self.n_fast))
        np.cumsum(self.increments, axis=1, out=out[:, 1:, :])
        return out


@dataclass(frozen=True)
class SemimartingalePath:
    """Discretized increments dI_k = Phi_k dt + Psi_k dW_k on a shared grid.

    Only the realized increments are stored; the generating ensemble is kept
    as provenance so solvers can check seed lineage.
    """

    wiener: WienerEnsemble
    increments: np.ndarray  # (n_paths, n_steps, n_fast)

    @property
    def grid(self) -> TimeGrid:
        return self.wiener.grid

    @property
    def n_paths(self) -> int:
        return self.wiener.n_paths


@dataclass(frozen=True)
class FastPathEnsemble:
    """Adapted fast-process values Q on grid nodes.

    `values` has shape (n_paths, n_steps + 1, n_fast); Q at node k is a
    function of increments with index < k only.
    """

    grid: TimeGrid
    n_paths: int
    epsilon: float
    values: np.ndarray
    generator: str  # "ou" | "mollifier"
    source: SemimartingalePath | None = field(default=None, repr=False)


def sample_wiener(grid: TimeGrid, n_paths: int, master_seed: int,
                  n_fast: int = 1) -> WienerEnsemble:
    """Draw i.i.d. Gaussian(0, dt I) increments with per-path substreams.

    Path p is generated from Philox(key=master_seed, counter=(0,0,0,p)), so
    its increments are a deterministic function of (master_seed, p, step)
    and do not depend on n_paths or on how paths are distributed over
    workers.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if n_fast < 1:
        raise ValueError("n_fast must be >= 1")
    sqrt_dt = np.sqrt(grid.dt)
    increments = np.empty((n_paths, grid.n_steps, n_fast))
    for p in range(n_paths):
        gen = np.random.Generator(
            np.random.Philox(key=master_seed, counter=[0, 0, 0, p])
        )
        increments[p] = gen.standard_normal((grid.n_steps, n_fast)) * sqrt_dt
    return WienerEnsemble(
        grid=grid,
        n_paths=n_paths,
        n_fast=n_fast,
        increments=increments,
        master_seed=master_seed,
        path_keys=np.arange(n_paths, dtype=np.int64),
    )


def shift_semimartingale(base: WienerEnsemble, drift: np.ndarray,
                         g_diag: np.ndarray) -> SemimartingalePath:
    """Increments of I = G (W + integral of r dt) for a per-path drift r.

    `drift` has shape (n_paths, n_steps, n_fast) and is the drift density r
    at the left node of each step; `g_diag` holds the diagonal of G. The
    resulting increments are G (r dt + dW).
    """
    drift = np.asarray(drift, dtype=np.float64)
    if drift.shape != base.increments.shape:
        raise GridMismatch(
            f"drift shape {drift.shape} does not match Wiener increments "
            f"{base.increments.shape}"
        )
    g = np.asarray(g_diag, dtype=np.float64).reshape(1, 1, -1)
    if g.shape[2] != base.n_fast:
        raise GridMismatch("g_diag length does not match the fast dimension")
    increments = g * (drift * base.grid.dt + base.increments)
    return SemimartingalePath(wiener=base, increments=increments)


def ou_step_coefficients(dt: float, epsilon: float) -> tuple[float, float]:
    """(decay, gain) of the exponential-Euler update for one step.

    Q_{k+1} = decay * Q_k + gain * dI_k with decay = exp(-dt/eps) and
    gain = (1 - decay) / dt, the exact response to an increment spread
    uniformly over the step.
    """
    a = dt / epsilon
    decay = float(np.exp(-a))
    gain = float(-np.expm1(-a) / dt)
    return decay, gain


def gamma_ou(path: SemimartingalePath, epsilon: float) -> FastPathEnsemble:
    """Fast Ornstein-Uhlenbeck response to the semimartingale input.

    Solves the discretized dQ = -(1/eps) Q dt + (1/eps) dI with Q_0 = 0
    using the exponential-Euler update, which reproduces the
    variation-of-constants formula exactly when the increment density is
    constant over each step.
    """
    if epsilon <= 0.0:
        raise NonPositiveEpsilon(f"epsilon must be > 0, got {epsilon}")
    grid = path.grid
    if grid.dt > epsilon / 5.0:
        warnings.warn(
            f"dt = {grid.dt:.3g} > epsilon/5 = {epsilon / 5:.3g}; the fast "
            "scale is poorly resolved",
            StiffnessWarning,
            stacklevel=2,
        )
    decay, gain = ou_step_coefficients(grid.dt, epsilon)
    inc = path.increments
    values = np.zeros((path.n_paths, grid.n_steps + 1, inc.shape[2]))
    for k in range(grid.n_steps):
        values[:, k + 1, :] = decay * values[:, k, :] + gain * inc[:, k, :]
    return FastPathEnsemble(
        grid=grid,
        n_paths=path.n_paths,
        epsilon=epsilon,
        values=values,
        generator="ou",
        source=path,
    )


@dataclass(frozen=True)
class MollifierKernel:
    """Smooth bump of unit mass supported on [0, 1], applied to t - s.

    The default profile c s^2 (1-s)^2 vanishes with its first derivative at
    both endpoints; `profile` may be replaced by any callable vanishing
    outside [0, 1]. Support on the nonnegative axis is what keeps the
    mollified derivative adapted.
    """

    profile: callable = None
    support: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.profile is None:
            object.__setattr__(self, "profile", _polynomial_bump)
        lo, hi = self.support
        if lo < 0.0:
            raise NonAdaptedKernel(
                f"kernel support [{lo}, {hi}] touches negative lags"
            )
        if hi <= lo:
            raise ValueError("kernel support must have positive length")

    def weights(self, epsilon: float, dt: float) -> np.ndarray:
        """Kernel values rho_eps(i dt) over the scaled support, i >= 0."""
        n_lags = int(np.ceil(self.support[1] * epsilon / dt))
        lags = np.arange(n_lags + 1) * dt
        return self.profile(lags / epsilon) / epsilon


def _polynomial_bump(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    inside = (s > 0.0) & (s < 1.0)
    # normalization: integral of s^2 (1-s)^2 over [0, 1] is 1/30
    return np.where(inside, 30.0 * s**2 * (1.0 - s) ** 2, 0.0)


def gamma_mollify(path: SemimartingalePath, epsilon: float,
                  kernel: MollifierKernel | None = None) -> FastPathEnsemble:
    """Discrete derivative of the kernel-mollified path.

    Output at node t_k is sum_j rho_eps(t_k - t_j) dI_j with
    rho_eps(s) = rho(s/eps)/eps, the path extended by zero outside [0, T].
    The convolution is evaluated lag by lag so that values at node k are
    exactly unaffected by increments at steps >= k.
    """
    if epsilon <= 0.0:
        raise NonPositiveEpsilon(f"epsilon must be > 0, got {epsilon}")
    kernel = kernel or MollifierKernel()
    grid = path.grid
    inc = path.increments
    n_steps = grid.n_steps
    w = kernel.weights(epsilon, grid.dt)
    values = np.zeros((path.n_paths, n_steps + 1, inc.shape[2]))
    # values[:, k] = sum_i w[i] * inc[:, k - i]; w[0] multiplies the step
    # starting at t_k, which the bump profile sends to zero anyway.
    for i in range(1, len(w)):
        if w[i] == 0.0:
            continue
        hi = min(n_steps, n_steps - 1 + i)
        values[:, i : hi + 1, :] += w[i] * inc[:, 0 : hi + 1 - i, :]
    return FastPathEnsemble(
        grid=grid,
        n_paths=path.n_paths,
        epsilon=epsilon,
        values=values,
        generator="mollifier",
        source=path,
    )
