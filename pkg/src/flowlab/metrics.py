"""Transport distances and operator norms.

The quantities every bound check compares: squared-distance optimal
transport between empirical clouds (exact assignment, with an entropic
fallback for large clouds), the coupled upper bound that needs no
assignment at all, and largest singular values of Jacobian batches.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

_EXACT_CAP = 4096


@dataclass(frozen=True)
class TransportResult:
    """Empirical transport distance between two sample clouds.

    ``value`` is the distance (not squared).  For the entropic method,
    ``entropic_gap_bound`` bounds how much the plan's cost can exceed the
    exact squared distance: at most 2 * reg * log(n) for uniform marginals
    on n atoms, so the reported value overshoots by at most that much in
    squared units.
    """

    value: float
    method: str
    n0: int
    n1: int
    runtime_seconds: float
    entropic_gap_bound: float | None = None


def _sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    sq = (
        np.sum(x**2, axis=1)[:, None]
        - 2.0 * x @ y.T
        + np.sum(y**2, axis=1)[None, :]
    )
    np.maximum(sq, 0.0, out=sq)
    return sq


def _sinkhorn_sq(cost: np.ndarray, reg: float, max_iter: int = 5_000, tol: float = 1e-7):
    """Log-domain Sinkhorn with uniform marginals; returns plan cost in squared units."""
    n0, n1 = cost.shape
    log_a = -np.log(n0) * np.ones(n0)
    log_b = -np.log(n1) * np.ones(n1)
    f = np.zeros(n0)
    g = np.zeros(n1)
    k = -cost / reg
    for _ in range(max_iter):
        f_new = reg * (log_a - logsumexp(k + g[None, :] / reg, axis=1))
        g_new = reg * (log_b - logsumexp(k + f_new[:, None] / reg, axis=0))
        shift = max(float(np.abs(f_new - f).max()), float(np.abs(g_new - g).max()))
        f, g = f_new, g_new
        if shift < tol:
            break
    # potentials already absorb the marginal weights
    plan = np.exp((f[:, None] + g[None, :] - cost) / reg)
    return float(np.sum(plan * cost))


def w2_empirical(
    x: np.ndarray,
    y: np.ndarray,
    method: str = "auto",
    exact_cap: int = _EXACT_CAP,
    sinkhorn_reg: float | None = None,
) -> TransportResult:
    """Quadratic Wasserstein distance between two equal-weight sample clouds.

    ``method="exact"`` solves the assignment problem (requires equal
    counts, at most ``exact_cap`` points); ``method="sinkhorn"`` runs
    log-domain entropic regularization with reg defaulting to 1% of the
    median squared distance.  ``"auto"`` picks exact when it fits.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[1] != y.shape[1]:
        raise ValueError("clouds must share a dimension")
    n0, n1 = x.shape[0], y.shape[0]
    if method == "auto":
        method = "exact" if (n0 == n1 and n0 <= exact_cap) else "sinkhorn"
    t0 = time.perf_counter()
    if method == "exact":
        if n0 != n1:
            raise ValueError("exact assignment needs equal sample counts")
        if n0 > exact_cap:
            raise ValueError(
                f"exact assignment capped at {exact_cap} points; use method='sinkhorn'"
            )
        cost = _sq_dists(x, y)
        rows, cols = linear_sum_assignment(cost)
        # recompute matched costs from coordinates: the expanded form above
        # carries O(1e-16) noise that matters when the optimum is zero
        diff = x[rows] - y[cols]
        value = float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))
        return TransportResult(value, "exact", n0, n1, time.perf_counter() - t0)
    if method == "sinkhorn":
        cost = _sq_dists(x, y)
        reg = sinkhorn_reg if sinkhorn_reg is not None else 0.01 * float(np.median(cost))
        if reg <= 0.0:
            reg = 1e-12
        sq = _sinkhorn_sq(cost, reg)
        gap = 2.0 * reg * np.log(max(n0, n1, 2))
        return TransportResult(
            float(np.sqrt(max(sq, 0.0))),
            "sinkhorn",
            n0,
            n1,
            time.perf_counter() - t0,
            entropic_gap_bound=float(gap),
        )
    raise ValueError(f"unknown method: {method!r}")


def coupled_w2_upper(x: np.ndarray, y: np.ndarray) -> float:
    """Root mean squared row-wise distance; an upper bound for the W2 of the laws.

    Rows must be paired draws under a common coupling (here: shared starts
    pushed through two flows).  Any coupling's transport cost dominates the
    optimum, so this needs no assignment.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError("coupled clouds must have identical shape")
    return float(np.sqrt(np.mean(np.sum((x - y) ** 2, axis=1))))


def operator_norm(mats, method: str = "auto", tol: float = 1e-10, max_iter: int = 10_000):
    """Largest singular value of one matrix or a batch, shape (..., d, d) -> (...).

    Singular value decomposition up to d = 16; power iteration on A^T A
    beyond that (or on request), run to relative tolerance ``tol``.
    """
    mats = np.asarray(mats, dtype=float)
    if mats.ndim < 2:
        raise ValueError("need at least a 2-d array")
    d = mats.shape[-1]
    if method == "auto":
        method = "svd" if d <= 16 else "power"
    if method == "svd":
        out = np.linalg.svd(mats, compute_uv=False)[..., 0]
        return float(out) if out.ndim == 0 else out
    if method != "power":
        raise ValueError(f"unknown method: {method!r}")
    batch_shape = mats.shape[:-2]
    flat = mats.reshape((-1,) + mats.shape[-2:])
    start_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(0xA5)))
    v = start_rng.standard_normal((flat.shape[0], mats.shape[-1]))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    prev = np.zeros(flat.shape[0])
    gram = np.einsum("bij,bik->bjk", flat, flat)
    for _ in range(max_iter):
        w = np.einsum("bjk,bk->bj", gram, v)
        norms = np.linalg.norm(w, axis=1)
        sigma = np.sqrt(norms)
        v = w / np.where(norms > 0, norms, 1.0)[:, None]
        if np.all(np.abs(sigma - prev) <= tol * np.maximum(1.0, sigma)):
            prev = sigma
            break
        prev = sigma
    out = prev.reshape(batch_shape)
    return float(out) if out.ndim == 0 else out


def operator_norm_symmetric(mats):
    """Largest eigenvalue magnitude of symmetric matrices, shape (..., d, d) -> (...)."""
    mats = np.asarray(mats, dtype=float)
    eigs = np.linalg.eigvalsh(mats)
    out = np.abs(eigs).max(axis=-1)
    return float(out) if out.ndim == 0 else out
