"""Command-line interface.

Subcommands mirror the library surface: validate, simulate-forward,
hamiltonian-table, solve-bsde, evaluate-cost, sweep-epsilon, wong-zakai,
fast-fast, hjb-oracle. Every run writes its tables plus a manifest into
--out; figure rendering (SVG) is on by default and disabled with --no-svg.

Exit codes: 0 success, 2 verdict FAIL, 1 usage or runtime error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import harness, report
from .bsde import BasisSpec, solve_bsde
from .control import ControlProcess, cost_strong, cost_weak
from .errors import SlowFastError
from .forward import (
    drift_correction,
    solve_controlled,
    solve_forward_eps,
    solve_forward_reduced,
)
from .hamiltonian import FeedbackPolicy, feedback_controls, hamiltonian_values
from .hjb import hjb_oracle
from .model import PRESET_NAMES, load_preset, load_spec_config, validate_spec
from .noise import TimeGrid, gamma_ou, sample_wiener, shift_semimartingale


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # one-line reason, exit 1
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _add_spec_args(p: argparse.ArgumentParser):
    group = p.add_mutually_exclusive_group()
    group.add_argument("--preset", default="scalar-riesz",
                       help=f"benchmark preset ({', '.join(PRESET_NAMES)})")
    group.add_argument("--config", help="INI spec configuration file")


def _add_run_args(p: argparse.ArgumentParser, paths=10_000, steps=200):
    p.add_argument("--paths", type=int, default=paths)
    p.add_argument("--steps", type=int, default=steps)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("runs/out"))
    p.add_argument("--svg", action=argparse.BooleanOptionalAction, default=True,
                   help="render SVG figures alongside the CSV output")
    p.add_argument("--deterministic-reduce",
                   action=argparse.BooleanOptionalAction, default=True,
                   help="fixed-order tree reductions (always on; recorded)")


def _resolve_spec(args):
    if getattr(args, "config", None):
        return load_spec_config(args.config)
    return load_preset(args.preset)


def _parse_range(text: str) -> np.ndarray:
    try:
        lo, hi, n = text.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise SlowFastError(f"expected lo:hi:n, got {text!r}") from None


def _eps_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _schedule(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _manifest(args, out_dir: Path, extra: dict) -> None:
    snapshot = {k: v for k, v in vars(args).items() if k != "func"}
    report.write_manifest(out_dir / "manifest.json", {
        "config": snapshot,
        **extra,
    })


def _cmd_validate(args) -> int:
    spec = _resolve_spec(args)
    rep = validate_spec(spec, n_probe=args.probes, seed=args.seed)
    for line in rep.lines():
        print(line)
    return 0 if rep.passed else 2


def _cmd_simulate_forward(args) -> int:
    t0 = time.perf_counter()
    spec = _resolve_spec(args)
    grid = TimeGrid(spec.T, args.steps)
    wiener = sample_wiener(grid, args.paths, args.seed, spec.dims.n_fast)
    if args.mode == "eps":
        base = shift_semimartingale(
            wiener, np.zeros_like(wiener.increments), spec.coeffs.g_diag
        )
        ens = solve_forward_eps(spec, gamma_ou(base, args.eps))
    else:
        ens = solve_forward_reduced(spec, wiener)
    out = args.out
    times = grid.times
    mean = ens.values.mean(axis=0)
    std = ens.values.std(axis=0)
    header = ("t",) + tuple(
        f"{s}_x{i}" for i in range(spec.dims.n_slow) for s in ("mean", "std")
    )
    rows = [
        (t,) + tuple(v for i in range(spec.dims.n_slow)
                     for v in (mean[k, i], std[k, i]))
        for k, t in enumerate(times)
    ]
    report.write_csv(out / "forward_stats.csv", header, rows)
    if args.dump_paths:
        report.dump_paths_csv(out / "paths.csv", times,
                              ens.values[: args.dump_paths, :, 0])
    if args.correction_table:
        xs = _parse_range(args.x_grid)[:, None]
        corr = drift_correction(spec, args.correction_table)
        if corr.kind == "gaussian_qhat":
            rows = [tuple(corr.vector)]
            header = tuple(f"qhat_{m}" for m in range(len(corr.vector)))
        else:
            vals = corr.map(xs)
            header = ("x", args.correction_table)
            rows = [(float(x), float(v)) for x, v in zip(xs[:, 0], vals[:, 0])]
        report.write_csv(out / "correction_table.csv", header, rows)
    if args.svg:
        report.line_plot_svg(out / "forward_mean.svg", times,
                             {"mean": mean[:, 0]}, "t", "mean slow state")
    _manifest(args, out, {
        "wall_time": time.perf_counter() - t0,
        "overflow_paths": int(ens.overflow_paths.size),
    })
    return 0


def _cmd_hamiltonian_table(args) -> int:
    spec = _resolve_spec(args)
    xs = _parse_range(args.x_grid)
    zs = _parse_range(args.z_grid)
    rows = []
    for x in xs:
        xb = np.full((len(zs), spec.dims.n_slow), x)
        zb = np.column_stack([zs] * spec.dims.n_fast)
        psi, u = hamiltonian_values(spec, xb, zb)
        for z, p, uu in zip(zs, psi, u):
            rows.append((float(x), float(z), float(p),
                         float(np.linalg.norm(uu))))
    report.write_csv(args.out / "hamiltonian_table.csv",
                     ("x", "z", "psi", "u_norm"), rows)
    _manifest(args, args.out, {})
    return 0


def _cmd_solve_bsde(args) -> int:
    t0 = time.perf_counter()
    spec = _resolve_spec(args)
    grid = TimeGrid(spec.T, args.steps)
    wiener = sample_wiener(grid, args.paths, args.seed, spec.dims.n_fast)
    if args.mode == "eps":
        base = shift_semimartingale(
            wiener, np.zeros_like(wiener.increments), spec.coeffs.g_diag
        )
        fwd = solve_forward_eps(spec, gamma_ou(base, args.eps))
    else:
        fwd = solve_forward_reduced(spec, wiener)
    sol = solve_bsde(fwd, wiener, spec, basis=BasisSpec.parse(args.basis))
    times = grid.times
    mean_y = sol.y.mean(axis=0)
    mean_abs_z = np.concatenate([
        np.linalg.norm(sol.z, axis=2).mean(axis=0), [np.nan]
    ])
    rows = list(zip(times, mean_y, mean_abs_z, sol.bmo.profile))
    report.write_csv(args.out / "bsde_profile.csv",
                     ("t", "mean_y", "mean_abs_z", "bmo_profile"), rows)
    if args.svg:
        report.line_plot_svg(args.out / "bsde_profile.svg", times,
                             {"mean Y": mean_y}, "t", "mean Y")
    print(f"y0 = {sol.y0:.6g} (se {sol.y0_std_error:.2g}), "
          f"bmo = {sol.bmo_estimate:.4g}, "
          f"y-violation rate = {sol.y_violation_rate:.3g}")
    _manifest(args, args.out, {
        "y0": sol.y0, "bmo": sol.bmo_estimate,
        "clip_level": sol.clip_level,
        "y_violation_rate": sol.y_violation_rate,
        "z_clip_rate": sol.z_clip_rate,
        "wall_time": time.perf_counter() - t0,
    })
    return 0


def _cmd_evaluate_cost(args) -> int:
    t0 = time.perf_counter()
    spec = _resolve_spec(args)
    grid = TimeGrid(spec.T, args.steps)
    wiener = sample_wiener(grid, args.paths, args.seed, spec.dims.n_fast)
    if args.mode == "eps":
        base = shift_semimartingale(
            wiener, np.zeros_like(wiener.increments), spec.coeffs.g_diag
        )
        fwd = solve_forward_eps(spec, gamma_ou(base, args.eps))
    else:
        fwd = solve_forward_reduced(spec, wiener)

    if args.policy == "optimal":
        sol = solve_bsde(fwd, wiener, spec, basis=BasisSpec.parse(args.basis))
        controls = feedback_controls(spec, fwd.values[:, :-1, :], sol.z)
        policy = FeedbackPolicy.from_bsde(spec, sol)
    elif args.policy == "neutral":
        controls = np.broadcast_to(
            spec.coeffs.u_star,
            (args.paths, args.steps, spec.dims.n_control),
        ).copy()
        policy = FeedbackPolicy.neutral(spec)
    elif args.policy.startswith("constant:"):
        u_val = np.array([float(v) for v in args.policy[9:].split(",")])
        controls = np.broadcast_to(
            u_val, (args.paths, args.steps, spec.dims.n_control)
        ).copy()
        policy = FeedbackPolicy.constant(spec, u_val)
    else:
        raise SlowFastError(f"unknown policy {args.policy!r}")

    process = ControlProcess(controls, grid.dt, provenance=args.policy)
    estimate = cost_weak(fwd, process, spec, wiener,
                         n_schedule=_schedule(args.n_schedule))
    rows = [(n, v, se, ess) for (n, v, se, ess) in estimate.table]
    report.write_csv(args.out / "stabilization.csv",
                     ("n", "value", "se", "ess"), rows)
    print(f"weak cost = {estimate.value:.6g} (se {estimate.std_error:.2g}, "
          f"n = {estimate.n_level:g}, ess = {estimate.ess:.0f}, "
          f"stabilized = {estimate.stabilized})")
    extra = {"weak_cost": estimate.value, "stabilized": estimate.stabilized,
             "wall_time": time.perf_counter() - t0}
    if args.strong:
        strong = cost_strong(spec, policy, args.mode, wiener,
                             epsilon=args.eps if args.mode == "eps" else None)
        print(f"strong cost = {strong.value:.6g} (se {strong.std_error:.2g})")
        extra["strong_cost"] = strong.value
    _manifest(args, args.out, extra)
    return 0


def _cmd_sweep_epsilon(args) -> int:
    config = harness.SweepConfig(
        spec_name=args.preset if not args.config else "config",
        eps_list=_eps_list(args.eps),
        n_paths=args.paths,
        n_steps=args.steps,
        seeds=tuple(int(s) for s in args.seed.split(",")),
        n_schedule=_schedule(args.n_schedule),
        basis=BasisSpec.parse(args.basis),
        value_gap_threshold=args.value_gap_threshold,
        control_gap_threshold=args.control_gap_threshold,
        spec=load_spec_config(args.config) if args.config else None,
    )
    result = harness.epsilon_sweep(config)
    out = args.out
    report.write_csv(out / "sweep.csv", report.SWEEP_COLUMNS,
                     report.sweep_csv_rows(result.rows))
    diag_rows = [
        (r.eps, r.forward_gap, r.value_gap, r.se_value_gap)
        for r in result.rows
    ]
    report.write_csv(out / "diagnostics.csv",
                     ("eps", "forward_gap", "value_gap", "se_value_gap"),
                     diag_rows)
    if args.svg:
        eps = [r.eps for r in result.rows]
        report.line_plot_svg(out / "value_gap.svg", eps,
                             {"|y0_eps - y0_hat|": [r.value_gap for r in result.rows]},
                             "eps", "value gap", log_x=True)
        report.line_plot_svg(out / "control_gap.svg", eps,
                             {"E int |u_eps - u_hat|^2": [r.ctrl_l2_gap for r in result.rows]},
                             "eps", "control L2 gap", log_x=True)
    _manifest(args, out, {
        "verdict": result.verdict,
        "details": result.details,
        "wall_time": result.wall_time,
    })
    print(f"sweep verdict: {result.verdict} "
          f"(wall time {result.wall_time:.1f}s)")
    return 0 if result.verdict == "PASS" else 2


def _cmd_wong_zakai(args) -> int:
    t0 = time.perf_counter()
    rows = harness.wong_zakai_experiment(
        eps_list=_eps_list(args.eps), n_paths=args.paths,
        n_steps=args.steps, seed=args.seed,
    )
    table = [(r.eps, r.error, r.se_error, r.error_ablated, r.se_error_ablated)
             for r in rows]
    report.write_csv(args.out / "wong_zakai.csv",
                     ("eps", "error", "se_error", "error_ablated",
                      "se_error_ablated"), table)
    if args.svg:
        report.line_plot_svg(
            args.out / "wong_zakai.svg", [r.eps for r in rows],
            {"corrected": [r.error for r in rows],
             "ablated": [r.error_ablated for r in rows]},
            "eps", "strong error at T", log_x=True, log_y=True,
        )
    decreasing = all(rows[i].error >= rows[i + 1].error
                     for i in range(len(rows) - 1))
    _manifest(args, args.out, {
        "decreasing": decreasing,
        "wall_time": time.perf_counter() - t0,
    })
    return 0 if decreasing else 2


def _cmd_fast_fast(args) -> int:
    t0 = time.perf_counter()
    rows = harness.fast_fast_experiment(
        eps_list=_eps_list(args.eps), n_paths=args.paths,
        n_steps=args.steps, seed=args.seed,
    )
    table = [(r.eps, r.error, r.se_error) for r in rows]
    report.write_csv(args.out / "fast_fast.csv",
                     ("eps", "error", "se_error"), table)
    if args.svg:
        report.line_plot_svg(
            args.out / "fast_fast.svg", [r.eps for r in rows],
            {"strong error": [r.error for r in rows]},
            "eps", "strong error at T", log_x=True, log_y=True,
        )
    decreasing = all(rows[i].error >= rows[i + 1].error
                     for i in range(len(rows) - 1))
    _manifest(args, args.out, {
        "decreasing": decreasing,
        "wall_time": time.perf_counter() - t0,
    })
    return 0 if decreasing else 2


def _cmd_hjb_oracle(args) -> int:
    spec = _resolve_spec(args)
    sol = hjb_oracle(spec, n_x=args.nx, n_t=args.nt,
                     check_boundary=args.check_boundary)
    rows = list(zip(sol.grid.nodes, sol.initial_slice))
    report.write_csv(args.out / "hjb_slice.csv", ("x", "v0"), rows)
    if args.svg:
        report.line_plot_svg(args.out / "hjb_slice.svg", sol.grid.nodes,
                             {"v(0, x)": sol.initial_slice}, "x", "value")
    print(f"v(0, x0) = {sol.value_at_origin:.6g} "
          f"(richardson {sol.richardson:.2g}, "
          f"substeps {sol.substeps_per_output})")
    _manifest(args, args.out, {
        "value_at_origin": sol.value_at_origin,
        "richardson": sol.richardson,
    })
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sflab",
                     description="slow-fast stochastic control laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="probe-check assumption constants")
    _add_spec_args(p)
    p.add_argument("--probes", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("simulate-forward", help="simulate the slow state")
    _add_spec_args(p)
    p.add_argument("--mode", choices=("eps", "reduced"), default="reduced")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--dump-paths", type=int, default=0,
                   help="also dump this many raw paths")
    p.add_argument("--correction-table",
                   choices=("ito_correction_bhat", "stratonovich_sigma2",
                            "gaussian_qhat"),
                   help="dump a drift-correction table")
    p.add_argument("--x-grid", default="-3:3:121", help="lo:hi:n for tables")
    _add_run_args(p)
    p.set_defaults(func=_cmd_simulate_forward)

    p = sub.add_parser("hamiltonian-table", help="psi and u on an (x,z) grid")
    _add_spec_args(p)
    p.add_argument("--x-grid", default="-2:2:41")
    p.add_argument("--z-grid", default="-2:2:41")
    p.add_argument("--out", type=Path, default=Path("runs/out"))
    p.set_defaults(func=_cmd_hamiltonian_table)

    p = sub.add_parser("solve-bsde", help="regression Monte Carlo backward solve")
    _add_spec_args(p)
    p.add_argument("--mode", choices=("eps", "reduced"), default="reduced")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--basis", default="poly:4")
    _add_run_args(p)
    p.set_defaults(func=_cmd_solve_bsde)

    p = sub.add_parser("evaluate-cost", help="weak-formulation cost of a policy")
    _add_spec_args(p)
    p.add_argument("--mode", choices=("eps", "reduced"), default="reduced")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--policy", default="optimal",
                   help="optimal | neutral | constant:c1[,c2,...]")
    p.add_argument("--n-schedule", default="5,10,20")
    p.add_argument("--basis", default="poly:4")
    p.add_argument("--strong", action="store_true",
                   help="also run the strong-formulation cross-check")
    _add_run_args(p)
    p.set_defaults(func=_cmd_evaluate_cost)

    p = sub.add_parser("sweep-epsilon", help="convergence sweep over eps")
    _add_spec_args(p)
    p.add_argument("--eps", default="0.2,0.1,0.05,0.025")
    p.add_argument("--seed", default="0", help="comma list of replicate seeds")
    p.add_argument("--paths", type=int, default=20_000)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--n-schedule", default="5,10,20")
    p.add_argument("--basis", default="poly:4")
    p.add_argument("--value-gap-threshold", type=float, default=0.05)
    p.add_argument("--control-gap-threshold", type=float, default=0.05)
    p.add_argument("--out", type=Path, default=Path("runs/sweep"))
    p.add_argument("--svg", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--deterministic-reduce",
                   action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=_cmd_sweep_epsilon)

    p = sub.add_parser("wong-zakai", help="mollifier-vs-limit strong error")
    p.add_argument("--eps", default="0.2,0.1,0.05,0.025")
    _add_run_args(p, paths=2000, steps=2000)
    p.set_defaults(func=_cmd_wong_zakai)

    p = sub.add_parser("fast-fast", help="quadratic fast-fast strong error")
    p.add_argument("--eps", default="0.2,0.1,0.05,0.025")
    _add_run_args(p, paths=2000, steps=2000)
    p.set_defaults(func=_cmd_fast_fast)

    p = sub.add_parser("hjb-oracle", help="finite-difference value oracle")
    _add_spec_args(p)
    p.add_argument("--nx", type=int, default=2001)
    p.add_argument("--nt", type=int, default=4000)
    p.add_argument("--check-boundary", action="store_true")
    p.add_argument("--out", type=Path, default=Path("runs/hjb"))
    p.add_argument("--svg", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=_cmd_hjb_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SlowFastError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
