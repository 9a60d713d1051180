"""Finite-difference oracle for the 1-D reduced control problem.

The value function of the reduced problem solves the terminal-value PDE

    v_t + (A x + b_hat(x)) v_x + (sigma(x) g)^2 v_xx / 2
        + psi(x, sigma(x) g v_x) = 0,        v(T, .) = h,

with the closed-form Hamiltonian psi(x, z) = l0(x) - (r0(x) z)^2 / 4. It is
marched backward with an explicit scheme: upwinded drift, central diffusion
and Hamiltonian gradient, zero-second-derivative boundaries. Time steps are
subdivided automatically to satisfy the monotonicity (CFL) condition, and a
half-resolution solve provides a Richardson error estimate. This solver is
deliberately independent of the Monte Carlo machinery it cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryDominance, CflViolation
from .forward import DEFAULT_FD_STEP, corrected_drift
from .model import ProblemSpec

__all__ = ["HjbGrid", "HjbSolution", "hjb_oracle", "default_domain"]

CFL_SAFETY = 0.8


@dataclass(frozen=True)
class HjbGrid:
    """Spatial interval with n_x nodes and n_t requested output steps."""

    x_lo: float
    x_hi: float
    n_x: int
    n_t: int
    boundary: str = "neumann-zero-curvature"

    def __post_init__(self):
        if self.x_hi <= self.x_lo:
            raise ValueError("need x_hi > x_lo")
        if self.n_x < 16 or self.n_t < 1:
            raise ValueError("grid too small: need n_x >= 16 and n_t >= 1")

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.n_x - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_x)


@dataclass(frozen=True)
class HjbSolution:
    grid: HjbGrid
    value_at_origin: float
    richardson: float
    initial_slice: np.ndarray
    terminal_slice: np.ndarray
    substeps_per_output: int
    surface: np.ndarray | None = field(default=None, repr=False)


def default_domain(spec: ProblemSpec, width_multiplier: float = 1.0) -> tuple[float, float]:
    """[x0 - m, x0 + m] with m = (6 sigma_max g sqrt(T) + T b_max) * multiplier."""
    probe = np.linspace(-20.0, 20.0, 4001)[:, None]
    sig = spec.coeffs.sigma(probe)[:, 0, :]
    sigma_g_max = float(np.max(np.abs(sig * spec.coeffs.g_diag)))
    b_max = float(np.max(np.abs(spec.coeffs.b(probe))))
    half = (6.0 * sigma_g_max * np.sqrt(spec.T) + spec.T * b_max)
    half *= width_multiplier
    x0 = float(spec.x0[0])
    return x0 - half, x0 + half


def _march(spec: ProblemSpec, grid: HjbGrid, allow_substep: bool,
           fd_step: float, store_surface: bool):
    c = spec.coeffs
    x = grid.nodes[:, None]  # (n_x, 1) batch of slow states
    dx = grid.dx

    b_hat = c.b_hat or corrected_drift(c.b, c.sigma, c.g_diag, fd_step)
    drift = (x @ c.A.T + b_hat(x))[:, 0]
    sig_g = c.sigma(x)[:, 0, :] * c.g_diag  # (n_x, n_fast)
    diff = 0.5 * np.sum(sig_g**2, axis=1)  # (sigma g)^2 / 2
    l0 = c.l0(x)
    # |r0(x)' z|^2 with z = sigma g v_x collapses to p2 * v_x^2 in 1-D control
    r0 = c.r0(x)  # (n_x, n_fast, 1)
    p2 = np.einsum("nm,nmc->nc", sig_g, r0)[:, 0] ** 2

    dt_out = spec.T / grid.n_t
    cfl_dt = CFL_SAFETY / np.max(
        np.abs(drift) / dx + 2.0 * diff / dx**2
    )
    if dt_out > cfl_dt:
        if not allow_substep:
            raise CflViolation(
                f"output step {dt_out:.3g} exceeds the stable step "
                f"{cfl_dt:.3g}; enable substepping or refine n_t"
            )
        n_sub = int(np.ceil(dt_out / cfl_dt))
    else:
        n_sub = 1
    dt = dt_out / n_sub

    pos = np.maximum(drift, 0.0)
    neg = np.minimum(drift, 0.0)
    v = c.h(x).copy()
    terminal = v.copy()
    surface = None
    if store_surface:
        surface = np.empty((grid.n_t + 1, grid.n_x))
        surface[-1] = v

    for m in range(grid.n_t - 1, -1, -1):
        for _ in range(n_sub):
            fwd = np.empty_like(v)
            bwd = np.empty_like(v)
            fwd[:-1] = (v[1:] - v[:-1]) / dx
            fwd[-1] = fwd[-2]
            bwd[1:] = (v[1:] - v[:-1]) / dx
            bwd[0] = bwd[1]
            vxx = np.zeros_like(v)
            vxx[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / dx**2
            central = 0.5 * (fwd + bwd)
            psi = l0 - 0.25 * p2 * central**2
            v = v + dt * (pos * fwd + neg * bwd + diff * vxx + psi)
        if store_surface:
            surface[m] = v
    return v, terminal, n_sub, surface


def hjb_oracle(spec: ProblemSpec, grid: HjbGrid | None = None,
               n_x: int = 2001, n_t: int = 4000,
               allow_substep: bool = True, check_boundary: bool = False,
               with_richardson: bool = True,
               fd_step: float = DEFAULT_FD_STEP,
               store_surface: bool = False) -> HjbSolution:
    """Value surface and v(0, x0) for a 1-D closed-form-Hamiltonian spec.

    When `grid` is omitted the domain covers at least six diffusion standard
    deviations plus drift travel around x0. `check_boundary=True` re-solves
    on a widened domain and raises BoundaryDominance if v(0, x0) moves by
    more than 0.1%.
    """
    if spec.dims.n_slow != 1 or spec.dims.n_control != 1:
        raise ValueError("the PDE oracle handles 1-D slow state and control")
    if not spec.closed_form_hamiltonian:
        raise ValueError("the PDE oracle needs the closed-form Hamiltonian")
    if grid is None:
        x_lo, x_hi = default_domain(spec)
        grid = HjbGrid(x_lo=x_lo, x_hi=x_hi, n_x=n_x, n_t=n_t)

    v0, v_T, n_sub, surface = _march(spec, grid, allow_substep, fd_step,
                                     store_surface)
    x0 = float(spec.x0[0])
    value = float(np.interp(x0, grid.nodes, v0))

    richardson = float("nan")
    if with_richardson:
        coarse = HjbGrid(
            x_lo=grid.x_lo, x_hi=grid.x_hi,
            n_x=max(16, (grid.n_x + 1) // 2),
            n_t=max(1, grid.n_t // 2),
            boundary=grid.boundary,
        )
        vc, _, _, _ = _march(spec, coarse, allow_substep, fd_step, False)
        value_coarse = float(np.interp(x0, coarse.nodes, vc))
        richardson = abs(value - value_coarse)

    if check_boundary:
        wide_lo, wide_hi = default_domain(spec, width_multiplier=1.3)
        lo = min(wide_lo, grid.x_lo - 0.3 * (x0 - grid.x_lo))
        hi = max(wide_hi, grid.x_hi + 0.3 * (grid.x_hi - x0))
        n_x_wide = int(round((hi - lo) / grid.dx)) + 1
        wide = HjbGrid(x_lo=lo, x_hi=hi, n_x=n_x_wide, n_t=grid.n_t,
                       boundary=grid.boundary)
        vw, _, _, _ = _march(spec, wide, allow_substep, fd_step, False)
        value_wide = float(np.interp(x0, wide.nodes, vw))
        if abs(value_wide - value) > 1e-3 * max(1.0, abs(value)):
            raise BoundaryDominance(
                f"widening the domain moves v(0, x0) from {value:.6g} to "
                f"{value_wide:.6g}"
            )

    return HjbSolution(
        grid=grid,
        value_at_origin=value,
        richardson=richardson,
        initial_slice=v0,
        terminal_slice=v_T,
        substeps_per_output=n_sub,
        surface=surface,
    )
