"""Output writers: delimited tables, run manifests, and figure rendering.

Every artifact is written atomically (temp file + rename) so interrupted
runs never leave half-written tables, and every table travels with a JSON
manifest recording the configuration, seeds, library versions, and wall
time that produced it.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

SWEEP_COLUMNS = (
    "eps", "y0_eps", "se_y0_eps", "y0_hat", "se_y0_hat",
    "cost_eps", "se_cost_eps", "cost_hat", "se_cost_hat",
    "ctrl_l2_gap", "se_ctrl_l2_gap", "supy_gap", "se_supy_gap",
    "bmo_eps", "verdict",
)


def _atomic_write(path: Path, data: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _format_cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path: str | Path, header: tuple[str, ...], rows) -> Path:
    """Write a delimited table; floats use repr for round-trip fidelity."""
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_format_cell(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


def write_manifest(path: str | Path, payload: dict) -> Path:
    """Write the run manifest next to the tables it describes."""
    path = Path(path)
    enriched = {
        "created_unix": time.time(),
        "versions": {
            "slowfast_lab": _package_version(),
            "numpy": np.__version__,
            "matplotlib": matplotlib.__version__,
        },
        **payload,
    }
    _atomic_write(path, json.dumps(enriched, indent=2, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    return str(obj)


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("slowfast-lab")
    except Exception:
        return "unknown"


def dump_paths_csv(path: str | Path, times: np.ndarray,
                   values: np.ndarray) -> Path:
    """Path dump: header row t_0..t_N, one row per path (one coordinate)."""
    header = tuple(f"t_{k}" for k in range(len(times)))
    first = tuple(float(t) for t in times)
    rows = [first] + [tuple(row) for row in np.asarray(values)]
    return write_csv(path, header, rows)


def line_plot_svg(path: str | Path, x, series: dict[str, np.ndarray],
                  xlabel: str, ylabel: str, log_x: bool = False,
                  log_y: bool = False, title: str = "") -> Path:
    """Single-metric line chart rendered to an SVG file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for label, ys in series.items():
        ax.plot(x, ys, marker="o", label=label)
    if log_x:
        ax.set_xscale("log")
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def sweep_csv_rows(rows) -> list[tuple]:
    """SweepRow records in the pinned sweep.csv column order."""
    out = []
    for r in rows:
        out.append((
            r.eps, r.y0_eps, r.se_y0_eps, r.y0_hat, r.se_y0_hat,
            r.cost_eps, r.se_cost_eps, r.cost_hat, r.se_cost_hat,
            r.ctrl_l2_gap, r.se_ctrl_l2_gap, r.supy_gap, r.se_supy_gap,
            r.bmo_eps, r.verdict,
        ))
    return out
