"""Smoothed-conditioning regularity of mixture laws.

A law W is called lambda-regular when noising it at any scale tau > 0,
W' = W + xi with xi ~ N(0, tau^2 I), and conditioning on the observed
W' = x inflates the covariance of xi by at most a factor lambda:

    || cov(xi | W' = x) ||_op <= lambda * tau^2   for all x, tau.

Since W = x - xi under the conditioning, this is also the posterior
covariance of the clean draw.  For Gaussian mixtures the posterior is
available in closed form per component, so the quantity can be evaluated
exactly at any probe point and the supremum estimated by maximizing over
a (tau, x) grid.  That maximum is a lower bound on the true lambda; a
certificate gives a provable upper bound for the mixture families where
one is known.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import rng as rng_mod
from .errors import DomainError
from .metrics import operator_norm, operator_norm_symmetric
from .mixtures import GaussianMixture, combine_independent
from .schedules import Schedule, eval_coefficients

_EIG_DIM_CAP = 16


def noise_posterior_covariance(gm: GaussianMixture, x, tau: float) -> np.ndarray:
    """Covariance of the noise given the noisy observation, cov(xi | W + xi = x).

    x has shape (n, d) or (d,); the result has shape (n, d, d) or (d, d).
    Exact for mixtures: a weighted within-component posterior covariance
    plus the between-component spread of posterior means.
    """
    tau = float(tau)
    if tau <= 0.0:
        raise DomainError("tau must be positive")
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    pts = np.atleast_2d(x)
    n, d = pts.shape
    if d != gm.dim:
        raise ValueError(f"points must have dimension {gm.dim}")
    t2 = tau**2

    logw = np.log(np.where(gm.weights > 0, gm.weights, np.nan))
    if gm.isotropic:
        var = gm.sigmas**2 + t2  # (K,)
        sq = (
            np.sum(pts**2, axis=1)[None, :]
            - 2.0 * gm.means @ pts.T
            + np.sum(gm.means**2, axis=1)[:, None]
        )
        np.maximum(sq, 0.0, out=sq)
        logpost = logw[:, None] - 0.5 * (d * np.log(2.0 * np.pi * var[:, None]) + sq / var[:, None])
        logpost = np.where(np.isnan(logpost), -np.inf, logpost)
        logpost -= logsumexp(logpost, axis=0, keepdims=True)
        u = np.exp(logpost)  # (K, n)
        gain = gm.sigmas**2 / var  # (K,)
        within_scal = u.T @ (t2 * gain)  # (n,)
        # posterior mean of W per component: m_k + gain_k (x - m_k)
        e = gm.means[None, :, :] + gain[None, :, None] * (pts[:, None, :] - gm.means[None, :, :])
        ebar = np.einsum("kn,nkd->nd", u, e)
        centered = e - ebar[:, None, :]
        between = np.einsum("kn,nki,nkj->nij", u, centered, centered)
        cov = within_scal[:, None, None] * np.eye(d)[None, :, :] + between
    else:
        covs = gm.covariances
        smat = covs + t2 * np.eye(d)[None, :, :]
        chol = np.linalg.cholesky(smat)
        k = gm.n_components
        logpost = np.empty((k, n))
        e = np.empty((n, k, d))
        within = np.empty((k, d, d))
        for i in range(k):
            diff = pts - gm.means[i]
            y = np.linalg.solve(chol[i], diff.T)  # (d, n)
            logdet = 2.0 * np.sum(np.log(np.diag(chol[i])))
            logpost[i] = logw[i] - 0.5 * (d * np.log(2.0 * np.pi) + logdet + np.sum(y**2, axis=0))
            sinv_diff = np.linalg.solve(chol[i].T, y)  # (d, n) rows of S^{-1} diff
            gain_diff = covs[i] @ sinv_diff  # (d, n)
            e[:, i, :] = gm.means[i] + gain_diff.T
            within[i] = t2 * covs[i] @ np.linalg.inv(smat[i])
            within[i] = 0.5 * (within[i] + within[i].T)
        logpost = np.where(np.isnan(logpost), -np.inf, logpost)
        logpost -= logsumexp(logpost, axis=0, keepdims=True)
        u = np.exp(logpost)
        ebar = np.einsum("kn,nkd->nd", u, e)
        centered = e - ebar[:, None, :]
        between = np.einsum("kn,nki,nkj->nij", u, centered, centered)
        cov = np.einsum("kn,kij->nij", u, within) + between
    cov = 0.5 * (cov + cov.transpose(0, 2, 1))
    return cov[0] if squeeze else cov


def lambda_certificate(gm: GaussianMixture) -> float | None:
    """Provable regularity level for mixture families with a known bound.

    Single Gaussians are 1-regular (log-concavity).  Isotropic mixtures
    with a common sigma are (1 + max_i ||m_i||^2 / sigma^2)-regular, since
    they decompose as a bounded variable plus independent Gaussian noise.
    Returns None when no certificate applies.
    """
    if gm.n_components == 1:
        return 1.0
    if gm.isotropic and float(np.ptp(gm.sigmas)) == 0.0:
        sigma = float(gm.sigmas[0])
        return 1.0 + gm.max_mean_norm() ** 2 / sigma**2
    return None


def default_tau_grid(gm: GaussianMixture, n_tau: int = 33) -> np.ndarray:
    """Log-spaced tau grid spanning well below the smallest component scale
    and well above the overall extent of the mixture."""
    if gm.isotropic:
        s_min = float(gm.sigmas.min())
        s_max = float(gm.sigmas.max())
    else:
        eigs = np.linalg.eigvalsh(gm.covariances)
        s_min = float(np.sqrt(eigs.min()))
        s_max = float(np.sqrt(eigs.max()))
    extent = gm.max_mean_norm() + s_max
    return np.geomspace(s_min / 10.0, 10.0 * extent, n_tau)


def _ridge_probes(gm: GaussianMixture) -> np.ndarray:
    """Component means plus points along segments between mean pairs.

    The between-component term peaks on these ridges, so they are where
    the posterior covariance is likely to be largest.
    """
    pts = [gm.means]
    k = gm.n_components
    for i in range(k):
        for j in range(i + 1, k):
            seg = gm.means[j] - gm.means[i]
            for frac in (0.25, 0.5, 0.75):
                pts.append((gm.means[i] + frac * seg)[None, :])
    return np.concatenate(pts, axis=0)


def _probe_points(
    gm: GaussianMixture,
    tau: float,
    strategies: tuple,
    n_probe: int,
    rng: np.random.Generator,
) -> np.ndarray:
    pts = []
    for strategy in strategies:
        if strategy == "sampled":
            w = gm.sample(n_probe, rng)
            xi = tau * rng.standard_normal((n_probe, gm.dim))
            pts.append(w + xi)
        elif strategy == "ridge":
            pts.append(_ridge_probes(gm))
        elif strategy == "grid":
            if gm.dim > 2:
                raise ValueError("grid probes are only supported for d <= 2")
            if gm.isotropic:
                s_max = float(gm.sigmas.max())
            else:
                s_max = float(np.sqrt(np.linalg.eigvalsh(gm.covariances).max()))
            half = gm.max_mean_norm() + 3.0 * s_max + tau
            axes = [np.linspace(-half, half, 17) for _ in range(gm.dim)]
            mesh = np.meshgrid(*axes, indexing="ij")
            pts.append(np.stack([m.ravel() for m in mesh], axis=1))
        else:
            raise ValueError(f"unknown probe strategy: {strategy!r}")
    return np.concatenate(pts, axis=0)


@dataclass(frozen=True)
class RegularityEstimate:
    """Probe maximum of the normalized posterior covariance.

    ``lambda_hat`` maximizes ||cov(xi | W'=x)||_op / tau^2 over the probe
    set; it is a lower bound on the true regularity level.  ``lambda_cert``
    is a provable upper bound when available, else None.
    """

    lambda_hat: float
    lambda_cert: float | None
    tau_star: float
    x_star: np.ndarray
    n_tau: int
    n_probe: int
    strategies: tuple


def estimate_lambda(
    gm: GaussianMixture,
    tau_grid=None,
    strategies: tuple = ("sampled", "ridge"),
    n_probe: int = 128,
    rng: np.random.Generator | None = None,
) -> RegularityEstimate:
    """Maximize the normalized posterior covariance norm over (tau, x) probes."""
    if tau_grid is None:
        tau_grid = default_tau_grid(gm)
    tau_grid = np.asarray(tau_grid, dtype=float)
    if np.any(tau_grid <= 0.0):
        raise DomainError("tau grid must be positive")
    if rng is None:
        rng = rng_mod.stream(0, "lambda-probe")
    best = -np.inf
    tau_star = float(tau_grid[0])
    x_star = np.zeros(gm.dim)
    for tau in tau_grid:
        pts = _probe_points(gm, float(tau), strategies, n_probe, rng)
        covs = noise_posterior_covariance(gm, pts, float(tau))
        if gm.dim <= _EIG_DIM_CAP:
            norms = operator_norm_symmetric(covs)
        else:
            norms = operator_norm(covs, method="power")
        norms = np.atleast_1d(norms) / tau**2
        idx = int(norms.argmax())
        if norms[idx] > best:
            best = float(norms[idx])
            tau_star = float(tau)
            x_star = pts[idx].copy()
    return RegularityEstimate(
        lambda_hat=best,
        lambda_cert=lambda_certificate(gm),
        tau_star=tau_star,
        x_star=x_star,
        n_tau=int(tau_grid.size),
        n_probe=n_probe,
        strategies=tuple(strategies),
    )


@dataclass(frozen=True)
class RegularityProfile:
    """Per-time regularity estimates for the clean part of an interpolant."""

    times: np.ndarray
    estimates: tuple

    @property
    def lambda_max(self) -> float:
        return max(e.lambda_hat for e in self.estimates)

    @property
    def cert_max(self) -> float | None:
        certs = [e.lambda_cert for e in self.estimates]
        if any(c is None for c in certs):
            return None
        return max(certs)

    def rows(self) -> list[dict]:
        out = []
        for t, e in zip(self.times, self.estimates):
            out.append(
                {
                    "t": float(t),
                    "tau_star": e.tau_star,
                    "x_star_norm": float(np.linalg.norm(e.x_star)),
                    "lambda_hat": e.lambda_hat,
                    "lambda_cert": e.lambda_cert if e.lambda_cert is not None else "",
                }
            )
        return out


def interpolant_marginal_regularity(
    pi0: GaussianMixture,
    pi1: GaussianMixture,
    schedule: Schedule,
    t_grid,
    rng: np.random.Generator | None = None,
    tau_grid=None,
    strategies: tuple = ("sampled", "ridge"),
    n_probe: int = 128,
    max_components: int = 10_000,
) -> RegularityProfile:
    """Regularity of alpha_t X_0 + beta_t X_1 along a time grid.

    The Gaussian part gamma_t Z is excluded: the growth bounds require
    regularity of the clean combination, with gamma_t playing the role of
    the noising scale.  Times where both weights vanish contribute a point
    mass, which is regular at every level; they are recorded with zeros.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if rng is None:
        rng = rng_mod.stream(0, "marginal-regularity")
    estimates = []
    for t in t_grid:
        c = eval_coefficients(schedule, float(t))
        if c.alpha == 0.0 and c.beta == 0.0:
            estimates.append(
                RegularityEstimate(
                    lambda_hat=0.0,
                    lambda_cert=0.0,
                    tau_star=float("nan"),
                    x_star=np.zeros(pi0.dim),
                    n_tau=0,
                    n_probe=0,
                    strategies=tuple(strategies),
                )
            )
            continue
        gm_t = combine_independent(pi0, pi1, c.alpha, c.beta, max_components=max_components)
        estimates.append(
            estimate_lambda(
                gm_t, tau_grid=tau_grid, strategies=strategies, n_probe=n_probe, rng=rng
            )
        )
    return RegularityProfile(times=t_grid, estimates=tuple(estimates))


@dataclass(frozen=True)
class HighProbCheck:
    """Empirical check of the universal high-probability covariance bound."""

    threshold: float
    violation_rate: float
    rate_bound: float
    ci_half_width: float
    passed: bool
    n: int


def high_probability_cov_check(
    gm: GaussianMixture, tau: float, c: float, n: int, rng: np.random.Generator
) -> HighProbCheck:
    """Check that ||cov(xi | W')||_op <= 2 d c^2 tau^2 fails with frequency
    at most 6 d exp(-c^2 / 2), up to binomial sampling error.

    Valid for c >= 1.  The bound is vacuous when the rate exceeds 1, which
    the caller can detect from ``rate_bound``.
    """
    if c < 1.0:
        raise DomainError("the tail bound requires c >= 1")
    tau = float(tau)
    d = gm.dim
    w = gm.sample(n, rng)
    xi = tau * rng.standard_normal((n, d))
    covs = noise_posterior_covariance(gm, w + xi, tau)
    norms = np.atleast_1d(
        operator_norm_symmetric(covs) if d <= _EIG_DIM_CAP else operator_norm(covs, "power")
    )
    threshold = 2.0 * d * c**2 * tau**2
    rate = float(np.mean(norms > threshold))
    rate_bound = 6.0 * d * float(np.exp(-(c**2) / 2.0))
    ci = 3.0 * float(np.sqrt(max(rate * (1.0 - rate), 1.0 / n) / n))
    return HighProbCheck(
        threshold=threshold,
        violation_rate=rate,
        rate_bound=rate_bound,
        ci_half_width=ci,
        passed=rate <= rate_bound + ci,
        n=n,
    )
