"""Hamiltonian of the cost functional and its minimizing feedback.

The Hamiltonian is

    psi(x, z) = inf_u { l(x, u) - <z, r(x, u)> }

with minimizer ubar(x, z). Specs flagged `closed_form_hamiltonian` declare
l(x,u) = l0(x) + |u|^2 and r(x,u) = r0(x) u, for which

    psi(x, z) = l0(x) - |r0(x)' z|^2 / 4,    ubar(x, z) = r0(x)' z / 2.

Everything else goes through a derivative-free multi-start coordinate
descent confined to the ball |u| <= 2 c_conf (1 + |z|), inside which the
infimum is guaranteed to be attained under the coercivity constants.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import MinimizerStallWarning
from .model import ProblemSpec

__all__ = [
    "HamiltonianEval",
    "FeedbackPolicy",
    "hamiltonian_closed_form",
    "hamiltonian_numeric",
    "hamiltonian_values",
    "feedback",
    "feedback_controls",
]

PSI_TOL = 1e-8
U_TOL = 1e-6
MAX_SWEEPS = 60


@dataclass(frozen=True)
class HamiltonianEval:
    """Value and minimizer of the Hamiltonian at one point."""

    value: float
    minimizer: np.ndarray
    method: str  # "closed_form" | "numeric"
    search_radius: float


def hamiltonian_closed_form(x: np.ndarray, z: np.ndarray, l0: Callable,
                            r0: Callable) -> tuple[np.ndarray, np.ndarray]:
    """Batched closed-form Hamiltonian for the quadratic-cost structure.

    Returns (psi, u_min) with shapes (n,) and (n, n_control) for inputs of
    shape (n, n_slow) and (n, n_fast).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    r0x = r0(x)  # (n, n_fast, n_control)
    rtz = np.einsum("nmc,nm->nc", r0x, z)
    psi = l0(x) - 0.25 * np.sum(rtz**2, axis=1)
    return psi, 0.5 * rtz


def hamiltonian_values(spec: ProblemSpec, x: np.ndarray,
                       z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched (psi, u_min); closed form when available, else a point loop."""
    if spec.closed_form_hamiltonian:
        return hamiltonian_closed_form(x, z, spec.coeffs.l0, spec.coeffs.r0)
    x = np.atleast_2d(x)
    z = np.atleast_2d(z)
    psi = np.empty(x.shape[0])
    u = np.empty((x.shape[0], spec.dims.n_control))
    for i in range(x.shape[0]):
        ev = hamiltonian_numeric(spec, x[i], z[i])
        psi[i] = ev.value
        u[i] = ev.minimizer
    return psi, u


def _objective(spec: ProblemSpec, x: np.ndarray, z: np.ndarray) -> Callable:
    xb = np.asarray(x, dtype=np.float64).reshape(1, -1)
    zb = np.asarray(z, dtype=np.float64).reshape(1, -1)

    def f(u: np.ndarray) -> float:
        ub = np.asarray(u, dtype=np.float64).reshape(1, -1)
        val = spec.coeffs.l(xb, ub)[0]
        val -= float(np.dot(zb[0], spec.coeffs.r(xb, ub)[0]))
        return float(val)

    return f


def _golden_line(f: Callable, u: np.ndarray, axis: int, lo: float,
                 hi: float, n_iter: int = 40) -> tuple[np.ndarray, float]:
    """Golden-section search for f along one coordinate inside [lo, hi]."""
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)

    def eval_at(t):
        v = u.copy()
        v[axis] = t
        return f(v), v

    fc, _ = eval_at(c)
    fd, _ = eval_at(d)
    for _ in range(n_iter):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc, _ = eval_at(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd, _ = eval_at(d)
    t = c if fc < fd else d
    val, v = eval_at(t)
    return v, val


def hamiltonian_numeric(spec: ProblemSpec, x: np.ndarray,
                        z: np.ndarray) -> HamiltonianEval:
    """Multi-start coordinate descent inside the confinement ball.

    Starts include u_star, so the returned value never exceeds
    l(x, u_star). A MinimizerStallWarning is issued when the final sweep
    still improved by more than the tolerance.
    """
    k = spec.constants
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    radius = 2.0 * k.confinement_radius * (1.0 + float(np.linalg.norm(z)))
    f = _objective(spec, x, z)
    m = spec.dims.n_control
    starts = _start_points(spec.coeffs.u_star, radius, m)

    best_u, best_val = None, np.inf
    stalled = False
    for s in starts:
        u = np.clip(s, -radius, radius).astype(np.float64)
        val = f(u)
        for _ in range(MAX_SWEEPS):
            prev = val
            for axis in range(m):
                u, val = _golden_line(f, u, axis, -radius, radius)
            if prev - val <= PSI_TOL:
                break
        else:
            stalled = True
        if val < best_val - PSI_TOL:
            best_u, best_val = u, val
        elif val <= best_val + PSI_TOL and np.linalg.norm(u) < np.linalg.norm(best_u):
            # ties broken toward the smaller control
            best_u, best_val = u, min(val, best_val)
    if stalled:
        warnings.warn(
            "coordinate descent was still improving on its final sweep",
            MinimizerStallWarning,
            stacklevel=2,
        )
    return HamiltonianEval(value=float(best_val), minimizer=best_u,
                           method="numeric", search_radius=radius)


def _start_points(u_star: np.ndarray, radius: float, m: int) -> list[np.ndarray]:
    pts = [np.asarray(u_star, dtype=np.float64), np.zeros(m)]
    e1 = np.zeros(m)
    e1[0] = 1.0
    diag = np.ones(m) / np.sqrt(m)
    for scale in (0.5, 0.9):
        pts.append(scale * radius * e1)
        pts.append(-scale * radius * e1)
    pts.append(0.5 * radius * diag)
    pts.append(-0.5 * radius * diag)
    return pts[:8]


def feedback(spec: ProblemSpec, x: np.ndarray, z: np.ndarray) -> HamiltonianEval:
    """Minimizing control at one point, with the method recorded."""
    if spec.closed_form_hamiltonian:
        psi, u = hamiltonian_closed_form(x, z, spec.coeffs.l0, spec.coeffs.r0)
        return HamiltonianEval(value=float(psi[0]), minimizer=u[0],
                               method="closed_form", search_radius=0.0)
    return hamiltonian_numeric(spec, x, z)


def feedback_controls(spec: ProblemSpec, states: np.ndarray,
                      z_values: np.ndarray) -> np.ndarray:
    """Pathwise optimal controls ubar(X_k, Z_k) along an ensemble.

    `states` is (n_paths, n_steps, n_slow) at the left nodes and `z_values`
    is (n_paths, n_steps, n_fast); the result is
    (n_paths, n_steps, n_control).
    """
    n_paths, n_steps, n_slow = states.shape
    flat_x = states.reshape(n_paths * n_steps, n_slow)
    flat_z = z_values.reshape(n_paths * n_steps, -1)
    _, u = hamiltonian_values(spec, flat_x, flat_z)
    return u.reshape(n_paths, n_steps, spec.dims.n_control)


class FeedbackPolicy:
    """Feedback law u(t, x) built from a z-provider.

    The provider maps (step, x_batch) to z values; the policy then applies
    the Hamiltonian minimizer. Constructors cover the three sources used in
    practice: a solved backward equation's regression surfaces, a constant
    control, and an arbitrary function of (t, x).
    """

    def __init__(self, spec: ProblemSpec, evaluator: Callable,
                 description: str):
        self.spec = spec
        self._evaluator = evaluator
        self.description = description

    def __call__(self, step: int, t: float, x: np.ndarray) -> np.ndarray:
        return self._evaluator(step, t, np.atleast_2d(x))

    @classmethod
    def from_bsde(cls, spec: ProblemSpec, solution) -> "FeedbackPolicy":
        """Optimal feedback from a BsdeSolution's fitted Z surfaces."""

        def evaluator(step, t, x):
            z = solution.z_at(step, x)
            _, u = hamiltonian_values(spec, x, z)
            return u

        return cls(spec, evaluator, "bsde-feedback")

    @classmethod
    def constant(cls, spec: ProblemSpec, u_value: np.ndarray) -> "FeedbackPolicy":
        u_value = np.atleast_1d(np.asarray(u_value, dtype=np.float64))

        def evaluator(step, t, x):
            return np.broadcast_to(u_value, (x.shape[0], u_value.size))

        return cls(spec, evaluator, f"constant({u_value.tolist()})")

    @classmethod
    def neutral(cls, spec: ProblemSpec) -> "FeedbackPolicy":
        """The control u_star that switches the shift off."""
        return cls.constant(spec, spec.coeffs.u_star)

    @classmethod
    def from_function(cls, spec: ProblemSpec, fn: Callable,
                      description: str = "custom") -> "FeedbackPolicy":
        def evaluator(step, t, x):
            return np.asarray(fn(t, x))

        return cls(spec, evaluator, description)
