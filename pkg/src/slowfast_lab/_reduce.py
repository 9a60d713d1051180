"""Deterministic reductions over the path axis.

Monte Carlo estimates must reproduce bit-for-bit between runs regardless of
how many workers the caller uses, so cross-path sums are done with a fixed
binary tree instead of whatever accumulation order a BLAS picks.
"""

from __future__ import annotations

import numpy as np


def tree_sum(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sum `values` along `axis` with a fixed-arity (pairwise) tree.

    The reduction order depends only on the array shape, never on thread or
    worker count, so repeated runs produce identical bits.
    """
    v = np.moveaxis(np.asarray(values, dtype=np.float64), axis, 0)
    n = v.shape[0]
    if n == 0:
        return np.zeros(v.shape[1:])
    while n > 1:
        half = n // 2
        v = v[:half] + v[half : 2 * half] if n % 2 == 0 else np.concatenate(
            [v[:half] + v[half : 2 * half], v[2 * half :]], axis=0
        )
        n = v.shape[0]
    return v[0]


def tree_mean(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Arithmetic mean along `axis` using the deterministic tree sum."""
    n = np.asarray(values).shape[axis]
    return tree_sum(values, axis=axis) / n


def mean_and_se(values: np.ndarray) -> tuple[float, float]:
    """Mean and standard error of a 1-D Monte Carlo sample, tree-reduced."""
    x = np.asarray(values, dtype=np.float64).ravel()
    n = x.size
    m = float(tree_sum(x) / n)
    if n < 2:
        return m, float("inf")
    var = float(tree_sum((x - m) ** 2) / (n - 1))
    return m, float(np.sqrt(var / n))


def normal_equations(design: np.ndarray, targets: np.ndarray,
                     chunk: int = 65536) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate A'A and A'y over fixed path chunks, deterministically.

    `design` is (n, k); `targets` is (n,) or (n, m). Chunks are combined with
    `tree_sum`, and within a chunk `einsum(optimize=False)` is used, which
    does not dispatch to threaded BLAS.
    """
    a = np.asarray(design, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    n = a.shape[0]
    bounds = range(0, n, chunk)
    ata_parts = []
    aty_parts = []
    for lo in bounds:
        hi = min(lo + chunk, n)
        ata_parts.append(np.einsum("pi,pj->ij", a[lo:hi], a[lo:hi], optimize=False))
        aty_parts.append(np.einsum("pi,pm->im", a[lo:hi], y[lo:hi], optimize=False))
    ata = tree_sum(np.stack(ata_parts))
    aty = tree_sum(np.stack(aty_parts))
    if squeeze:
        aty = aty[:, 0]
    return ata, aty
