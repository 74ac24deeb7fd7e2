"""Unbiased Gaussian-kernel maximum mean discrepancy and its gradient.

The gradient with respect to the generated sample matrix is computed in
closed form here and chained through the generator by the autodiff engine.
"""

from __future__ import annotations

import numpy as np


def median_bandwidth(data: np.ndarray) -> float:
    """Median pairwise distance of the data sample (a standard MMD heuristic)."""
    d2 = _sqdist(data, data)
    tri = d2[np.triu_indices(len(data), k=1)]
    return float(np.sqrt(np.median(tri)))


def _sqdist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    xx = np.sum(x * x, axis=1)
    yy = np.sum(y * y, axis=1)
    return np.maximum(xx[:, None] + yy[None, :] - 2.0 * (x @ y.T), 0.0)


def _kernels(d2: np.ndarray, sigmas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum over bandwidths of the kernel and of kernel/sigma^2 (for gradients)."""
    k = np.zeros_like(d2)
    w = np.zeros_like(d2)
    for s in sigmas:
        e = np.exp(d2 / (-2.0 * s * s))
        k += e
        w += e / (s * s)
    return k, w


def yy_term(y: np.ndarray, sigmas) -> float:
    """The data-only part of the unbiased statistic; constant across epochs."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    n = len(y)
    k_yy, _ = _kernels(_sqdist(y, y), sigmas)
    return float((k_yy.sum() - np.trace(k_yy)) / (n * (n - 1)))


def mmd2_and_grad(
    x: np.ndarray, y: np.ndarray, sigmas, yy: float | None = None
) -> tuple[float, np.ndarray]:
    """Unbiased MMD^2 between samples x (m, d) and y (n, d), plus d(MMD^2)/dx.

    Pass a precomputed `yy_term(y, sigmas)` to skip the constant data block.
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    m, n = len(x), len(y)
    if yy is None:
        yy = yy_term(y, sigmas)
    k_xx, w_xx = _kernels(_sqdist(x, x), sigmas)
    k_xy, w_xy = _kernels(_sqdist(x, y), sigmas)
    np.fill_diagonal(k_xx, 0.0)
    np.fill_diagonal(w_xx, 0.0)
    mmd2 = k_xx.sum() / (m * (m - 1)) + yy - 2.0 * k_xy.sum() / (m * n)

    # sum_j w_ij (x_i - x_j) = rowsum(w) x_i - w @ x
    g_xx = w_xx.sum(axis=1)[:, None] * x - w_xx @ x
    g_xy = w_xy.sum(axis=1)[:, None] * x - w_xy @ y
    grad = -2.0 / (m * (m - 1)) * g_xx + 2.0 / (m * n) * g_xy
    return float(mmd2), grad


def mmd2(x: np.ndarray, y: np.ndarray, sigmas, yy: float | None = None) -> float:
    return mmd2_and_grad(x, y, sigmas, yy=yy)[0]
