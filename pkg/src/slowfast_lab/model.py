"""Problem specification: dimensions, coefficients, assumption constants.

A `ProblemSpec` is the single source of truth for an experiment. Coefficient
callables are black boxes evaluated on batches:

    b(x)        (n, n_slow)                    -> (n, n_slow)
    sigma(x)    (n, n_slow)                    -> (n, n_slow, n_fast)
    r(x, u)     (n, n_slow), (n, n_control)    -> (n, n_fast)
    l(x, u)     likewise                       -> (n,)
    h(x)        (n, n_slow)                    -> (n,)
    q(v, w)     (n, n_fast), (n, n_fast)       -> (n, n_fast)   [optional]

Assumption constants are user-supplied and verified by probe sampling, not
proven; `validate_spec` reports the worst sampled violation ratio of each
inequality. Ratios are normalized so that `ratio <= 1` means the inequality
held at every probe.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (
    ConfigError,
    MissingUStar,
    NonFiniteCoefficient,
    UnknownPreset,
)

__all__ = [
    "Dimensions",
    "CoefficientSet",
    "AssumptionConstants",
    "ProblemSpec",
    "CheckResult",
    "ValidationReport",
    "validate_spec",
    "load_preset",
    "load_spec_config",
    "PRESET_NAMES",
]

U_STAR_TOLERANCE = 1e-12
RATIO_PASS = 1.0 + 1e-9


@dataclass(frozen=True)
class Dimensions:
    """Finite-dimensional realization: slow in R^n_slow, fast in R^n_fast,
    controls in R^n_control."""

    n_slow: int
    n_fast: int
    n_control: int

    def __post_init__(self):
        for name in ("n_slow", "n_fast", "n_control"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")


@dataclass(frozen=True)
class CoefficientSet:
    """Model coefficients. `g_diag` holds the diagonal entries of G.

    `b_hat` may be omitted; solvers then build the corrected drift by
    finite differences. `l0`/`r0` are the closed-form cost pieces
    l(x,u) = l0(x) + |u|^2, r(x,u) = r0(x) u and are required only when the
    owning spec is flagged `closed_form_hamiltonian`.
    """

    A: np.ndarray
    b: Callable
    sigma: Callable
    g_diag: np.ndarray
    r: Callable
    u_star: np.ndarray
    l: Callable
    h: Callable
    b_hat: Callable | None = None
    q: Callable | None = None
    q_diagonal: bool = False
    l0: Callable | None = None
    r0: Callable | None = None


@dataclass(frozen=True)
class AssumptionConstants:
    """Growth/Lipschitz constants, plus derived Hamiltonian constants.

    The derived triple (M_psi, L_psi, L_ubar) follows the constructive
    bounds: the minimizing control is confined to a ball of radius
    c_conf (1 + |z|), with c_conf the positive root of
    m_l c^2 - M_r c - (c_l + M_r) = 0.
    """

    L_b: float
    L_sigma: float
    M_r: float
    L_r: float
    m_l: float
    c_l: float
    M_l: float
    L_l: float
    M_h: float
    L_h: float
    M_psi: float | None = None
    L_psi: float | None = None
    L_ubar: float | None = None

    def __post_init__(self):
        if self.m_l <= 0.0:
            raise ValueError("coercivity requires m_l > 0")
        if not np.isfinite(self.M_h):
            raise ValueError("terminal cost bound M_h must be finite")
        for name in ("L_b", "L_sigma", "M_r", "L_r", "c_l", "M_l", "L_l", "L_h"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def confinement_radius(self) -> float:
        """Coefficient c_conf of the minimizer ball radius c_conf (1+|z|)."""
        disc = self.M_r**2 + 4.0 * self.m_l * (self.c_l + self.M_r)
        return (self.M_r + np.sqrt(disc)) / (2.0 * self.m_l)

    def derived(self, u_star_norm: float = 0.0) -> "AssumptionConstants":
        """Fill M_psi, L_psi, L_ubar unless explicitly supplied."""
        c = self.confinement_radius
        c_l_abs = max(self.M_l, self.c_l)  # |l| <= c_l_abs (1 + |u|^2)
        m_psi = self.M_psi
        if m_psi is None:
            m_psi = max(
                c_l_abs * (1.0 + u_star_norm**2),
                self.c_l + (c + 1.0) * self.M_r,
            )
        l_psi = self.L_psi
        if l_psi is None:
            l_psi = max(
                (c + 1.0) * self.M_r,
                max(self.L_l, 2.0 * c_l_abs) * (1.0 + 2.0 * c**2)
                + 1.5 * self.L_r * (1.0 + c),
            )
        l_ubar = self.L_ubar
        if l_ubar is None:
            # exact for the closed-form feedback u = r0(x)' z / 2; for
            # numeric Hamiltonians this is a postulate measured empirically
            l_ubar = 0.5 * max(self.M_r, self.L_r)
        return replace(self, M_psi=float(m_psi), L_psi=float(l_psi),
                       L_ubar=float(l_ubar))

    @property
    def y_bound_rate(self) -> float:
        """M_psi, raising if derivation was skipped."""
        if self.M_psi is None:
            raise ValueError("call .derived() before using M_psi")
        return self.M_psi


@dataclass(frozen=True)
class ProblemSpec:
    """A complete, immutable experiment definition."""

    name: str
    dims: Dimensions
    coeffs: CoefficientSet
    constants: AssumptionConstants
    T: float
    x0: np.ndarray
    closed_form_hamiltonian: bool = False

    def __post_init__(self):
        if self.T <= 0.0:
            raise ValueError("horizon T must be positive")
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=np.float64))
        if x0.shape != (self.dims.n_slow,):
            raise ValueError(
                f"x0 has shape {x0.shape}, expected ({self.dims.n_slow},)"
            )
        if not np.all(np.isfinite(x0)):
            raise ValueError("x0 must be finite")
        object.__setattr__(self, "x0", x0)
        if self.constants.M_psi is None:
            u_star_norm = float(np.linalg.norm(self.coeffs.u_star))
            object.__setattr__(
                self, "constants", self.constants.derived(u_star_norm)
            )
        if self.closed_form_hamiltonian and (
            self.coeffs.l0 is None or self.coeffs.r0 is None
        ):
            raise ValueError(
                "closed_form_hamiltonian requires l0 and r0 coefficients"
            )

    @property
    def y_bound(self) -> float:
        """A-priori bound M_h + M_psi T on the backward component."""
        return self.constants.M_h + self.constants.M_psi * self.T


@dataclass(frozen=True)
class CheckResult:
    name: str
    worst_ratio: float

    @property
    def passed(self) -> bool:
        return self.worst_ratio <= RATIO_PASS


@dataclass(frozen=True)
class ValidationReport:
    spec_name: str
    n_probe: int
    seed: int
    checks: tuple[CheckResult, ...]
    g_diag_sq_sum: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = [f"validation of '{self.spec_name}' "
               f"({self.n_probe} probes, seed {self.seed})"]
        for c in self.checks:
            mark = "ok  " if c.passed else "FAIL"
            out.append(f"  {mark} {c.name:<28s} worst ratio {c.worst_ratio:.6g}")
        out.append(f"  sum of squared G entries: {self.g_diag_sq_sum:.6g}")
        out.append("PASS" if self.passed else "FAIL")
        return out


def _ratio(lhs: np.ndarray, rhs: np.ndarray) -> float:
    """Worst normalized violation ratio of lhs <= rhs over a probe batch.

    ratio = 1 + (lhs - rhs) / max(1, |lhs|, |rhs|): exactly 1 on the
    boundary, <= 1 when satisfied, robust when either side approaches 0.
    """
    scale = np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    return float(np.max(1.0 + (lhs - rhs) / scale))


def _require_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteCoefficient(
                f"coefficient '{name}' returned a non-finite value at a probe point"
            )


def validate_spec(spec: ProblemSpec, n_probe: int = 10_000,
                  seed: int = 0) -> ValidationReport:
    """Probe-sample every assumption inequality and report worst ratios.

    Probes are uniform on [-10, 10] per coordinate. Raises
    NonFiniteCoefficient if any coefficient evaluates to NaN/inf, and
    MissingUStar if r(x, u_star) exceeds 1e-12 at any probe.
    """
    if n_probe < 100:
        raise ValueError("n_probe must be at least 100")
    rng = np.random.default_rng(seed)
    d, c = spec.dims, spec.coeffs
    k = spec.constants
    x = rng.uniform(-10.0, 10.0, size=(n_probe, d.n_slow))
    y = rng.uniform(-10.0, 10.0, size=(n_probe, d.n_slow))
    u = rng.uniform(-10.0, 10.0, size=(n_probe, d.n_control))

    bx, by = c.b(x), c.b(y)
    sx, sy = c.sigma(x), c.sigma(y)
    rxu, ryu = c.r(x, u), c.r(y, u)
    lxu, lyu = c.l(x, u), c.l(y, u)
    hx, hy = c.h(x), c.h(y)
    _require_finite("b", bx, by)
    _require_finite("sigma", sx, sy)
    _require_finite("r", rxu, ryu)
    _require_finite("l", lxu, lyu)
    _require_finite("h", hx, hy)

    u_star_batch = np.broadcast_to(c.u_star, (n_probe, d.n_control))
    r_star = c.r(x, u_star_batch)
    worst_star = float(np.max(np.linalg.norm(r_star, axis=1)))
    if worst_star > U_STAR_TOLERANCE:
        raise MissingUStar(
            f"|r(x, u_star)| reaches {worst_star:.3g} > {U_STAR_TOLERANCE:g}"
        )

    dxy = np.linalg.norm(x - y, axis=1)
    u_norm = np.linalg.norm(u, axis=1)
    checks = [
        CheckResult("b Lipschitz", _ratio(
            np.linalg.norm(bx - by, axis=1), k.L_b * dxy)),
        CheckResult("sigma Lipschitz", _ratio(
            np.linalg.norm(sx - sy, ord=2, axis=(1, 2)), k.L_sigma * dxy)),
        CheckResult("r growth", _ratio(
            np.linalg.norm(rxu, axis=1), k.M_r * (1.0 + u_norm))),
        CheckResult("r Lipschitz", _ratio(
            np.linalg.norm(rxu - ryu, axis=1),
            k.L_r * np.minimum(dxy, 1.0) * (1.0 + u_norm))),
        CheckResult("l coercive below", _ratio(
            k.m_l * u_norm**2 - k.c_l, lxu)),
        CheckResult("l quadratic above", _ratio(
            lxu, k.M_l * (1.0 + u_norm**2))),
        CheckResult("l Lipschitz", _ratio(
            np.abs(lxu - lyu), k.L_l * dxy)),
        CheckResult("h bounded", _ratio(np.abs(hx), np.full(n_probe, k.M_h))),
        CheckResult("h Lipschitz", _ratio(np.abs(hx - hy), k.L_h * dxy)),
        CheckResult("u_star neutral", _ratio(
            np.linalg.norm(r_star, axis=1), np.full(n_probe, U_STAR_TOLERANCE))),
    ]

    if spec.closed_form_hamiltonian:
        checks.extend(_closed_form_checks(spec, x, u))

    return ValidationReport(
        spec_name=spec.name,
        n_probe=n_probe,
        seed=seed,
        checks=tuple(checks),
        g_diag_sq_sum=float(np.sum(np.asarray(c.g_diag) ** 2)),
    )


def _closed_form_checks(spec: ProblemSpec, x: np.ndarray,
                        u: np.ndarray) -> list[CheckResult]:
    """Sampled consistency of the declared l = l0 + |u|^2, r = r0 u split."""
    c = spec.coeffs
    n = x.shape[0]
    tol = np.full(n, 1e-9)
    l_decomp = np.abs(
        c.l(x, u) - (c.l0(x) + np.sum(u**2, axis=1))
    )
    r0x = c.r0(x)
    r_linear = np.linalg.norm(
        c.r(x, u) - np.einsum("nij,nj->ni", r0x, u), axis=1
    )
    return [
        CheckResult("closed form: l = l0 + |u|^2",
                    _ratio(l_decomp, tol * np.maximum(1.0, np.abs(c.l(x, u))))),
        CheckResult("closed form: r = r0 u",
                    _ratio(r_linear, tol * (1.0 + np.linalg.norm(u, axis=1)))),
    ]


# --------------------------------------------------------------------------
# benchmark presets
# --------------------------------------------------------------------------

def _bump_cost(x):
    return 1.0 / (1.0 + np.sum(np.asarray(x) ** 2, axis=1))


def _quadratic_cost_factory(l0):
    def l(x, u):
        return l0(x) + np.sum(np.asarray(u) ** 2, axis=1)
    return l


def _linear_control_factory(r0):
    def r(x, u):
        return np.einsum("nij,nj->ni", r0(x), np.asarray(u))
    return r


def _scalar_riesz() -> ProblemSpec:
    def b(x):
        return np.cos(x)

    def sigma(x):
        return (1.0 + 0.5 * np.sin(x))[:, :, None]

    def r0(x):
        return np.ones((x.shape[0], 1, 1))

    return ProblemSpec(
        name="scalar-riesz",
        dims=Dimensions(1, 1, 1),
        coeffs=CoefficientSet(
            A=np.array([[-1.0]]),
            b=b,
            sigma=sigma,
            g_diag=np.array([1.0]),
            r=_linear_control_factory(r0),
            u_star=np.zeros(1),
            l=_quadratic_cost_factory(_bump_cost),
            h=_bump_cost,
            l0=_bump_cost,
            r0=r0,
        ),
        constants=AssumptionConstants(
            L_b=1.0, L_sigma=0.5, M_r=1.0, L_r=1.0,
            m_l=1.0, c_l=1.0, M_l=1.0, L_l=0.65, M_h=1.0, L_h=0.65,
        ),
        T=1.0,
        x0=np.array([0.5]),
        closed_form_hamiltonian=True,
    )


def _wz_sine() -> ProblemSpec:
    def b(x):
        return np.zeros_like(x)

    def sigma(x):
        return np.sin(x)[:, :, None]

    def r0(x):
        return np.ones((x.shape[0], 1, 1))

    return ProblemSpec(
        name="wz-sine",
        dims=Dimensions(1, 1, 1),
        coeffs=CoefficientSet(
            A=np.array([[0.0]]),
            b=b,
            sigma=sigma,
            g_diag=np.array([1.0]),
            r=_linear_control_factory(r0),
            u_star=np.zeros(1),
            l=_quadratic_cost_factory(_bump_cost),
            h=_bump_cost,
            l0=_bump_cost,
            r0=r0,
        ),
        constants=AssumptionConstants(
            L_b=0.1, L_sigma=1.0, M_r=1.0, L_r=1.0,
            m_l=1.0, c_l=1.0, M_l=1.0, L_l=0.65, M_h=1.0, L_h=0.65,
        ),
        T=1.0,
        x0=np.array([0.5]),
        closed_form_hamiltonian=True,
    )


def _fastfast_diag() -> ProblemSpec:
    def b(x):
        return np.cos(x)

    def sigma(x):
        s = np.empty((x.shape[0], 1, 2))
        s[:, 0, 0] = 0.8 + 0.25 * np.sin(x[:, 0])
        s[:, 0, 1] = 0.6 + 0.2 * np.cos(x[:, 0])
        return s

    def r0(x):
        out = np.empty((x.shape[0], 2, 1))
        out[:, 0, 0] = 0.7
        out[:, 1, 0] = 0.7
        return out

    def q(v, w):
        return np.asarray(v) * np.asarray(w)

    return ProblemSpec(
        name="fastfast-diag",
        dims=Dimensions(1, 2, 1),
        coeffs=CoefficientSet(
            A=np.array([[-1.0]]),
            b=b,
            sigma=sigma,
            g_diag=np.array([0.5, 0.4]),
            r=_linear_control_factory(r0),
            u_star=np.zeros(1),
            l=_quadratic_cost_factory(_bump_cost),
            h=_bump_cost,
            q=q,
            q_diagonal=True,
            l0=_bump_cost,
            r0=r0,
        ),
        constants=AssumptionConstants(
            L_b=1.0, L_sigma=0.35, M_r=1.0, L_r=1.0,
            m_l=1.0, c_l=1.0, M_l=1.0, L_l=0.65, M_h=1.0, L_h=0.65,
        ),
        T=1.0,
        x0=np.array([0.5]),
        closed_form_hamiltonian=True,
    )


_PRESETS: dict[str, Callable[[], ProblemSpec]] = {
    "scalar-riesz": _scalar_riesz,
    "wz-sine": _wz_sine,
    "fastfast-diag": _fastfast_diag,
}

PRESET_NAMES = tuple(sorted(_PRESETS))


def load_preset(name: str) -> ProblemSpec:
    """Return a fully populated benchmark spec by name."""
    try:
        factory = _PRESETS[name]
    except KeyError:
        raise UnknownPreset(
            f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}"
        ) from None
    return factory()


# --------------------------------------------------------------------------
# spec configuration documents
# --------------------------------------------------------------------------

def load_spec_config(path: str | Path) -> ProblemSpec:
    """Build a spec from an INI document.

    Sections: [preset] (required, `name = ...` picks the registered
    coefficient set), [constants] and [horizon] override scalars,
    [dimensions] may restate the preset dimensions (checked, not changed).
    Coefficients are only ever selected by registered name; no code is
    loaded from the document.
    """
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"could not read spec config {path!r}")
    if not parser.has_section("preset") or not parser.has_option("preset", "name"):
        raise ConfigError("spec config needs a [preset] section with a name")
    base = load_preset(parser.get("preset", "name"))

    if parser.has_section("dimensions"):
        for key, attr in (("n_slow", "n_slow"), ("n_fast", "n_fast"),
                          ("n_control", "n_control")):
            if parser.has_option("dimensions", key):
                stated = parser.getint("dimensions", key)
                actual = getattr(base.dims, attr)
                if stated != actual:
                    raise ConfigError(
                        f"[dimensions] {key}={stated} conflicts with preset "
                        f"value {actual}"
                    )

    constants = base.constants
    if parser.has_section("constants"):
        overrides = {}
        valid = {f for f in AssumptionConstants.__dataclass_fields__}
        for key, raw in parser.items("constants"):
            if key not in valid:
                raise ConfigError(f"unknown constant {key!r} in [constants]")
            try:
                overrides[key] = float(raw)
            except ValueError:
                raise ConfigError(f"constant {key} = {raw!r} is not a number")
        constants = replace(constants, **overrides)

    T, x0 = base.T, base.x0
    if parser.has_section("horizon"):
        if parser.has_option("horizon", "t"):
            T = parser.getfloat("horizon", "t")
        if parser.has_option("horizon", "x0"):
            raw = parser.get("horizon", "x0")
            try:
                x0 = np.array([float(v) for v in raw.split(",")])
            except ValueError:
                raise ConfigError(f"x0 = {raw!r} is not a comma list of numbers")

    return ProblemSpec(
        name=base.name,
        dims=base.dims,
        coeffs=base.coeffs,
        constants=constants,
        T=T,
        x0=x0,
        closed_form_hamiltonian=base.closed_form_hamiltonian,
    )
