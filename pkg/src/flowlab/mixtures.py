"""Finite Gaussian mixtures: sampling, densities, and closure operations.

Mixtures are the endpoint laws of every experiment here because they are
closed under the three operations the interpolant construction needs:
scaling, adding independent Gaussian noise, and combining two independent
mixture draws.  Components are either all isotropic (per-component scalar
sigma) or all full-covariance; the isotropic representation is kept
explicit because it unlocks much cheaper conditioning later.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import binom

from .errors import DomainError, MixtureSizeError

_WEIGHT_TOL = 1e-12
_MAX_COMPONENTS = 10_000


class GaussianMixture:
    """Mixture of Gaussians with validated, immutable parameters.

    Exactly one of ``sigmas`` (shape (K,), isotropic components) or
    ``covariances`` (shape (K, d, d), symmetric positive definite) must be
    given.  Weights must be non-negative and sum to 1 within 1e-12.
    """

    def __init__(self, weights, means, *, sigmas=None, covariances=None):
        weights = np.asarray(weights, dtype=float)
        means = np.asarray(means, dtype=float)
        if means.ndim != 2:
            raise DomainError("means must have shape (K, d)")
        k, d = means.shape
        if weights.shape != (k,):
            raise DomainError("weights must have shape (K,)")
        if np.any(weights < 0.0):
            raise DomainError("weights must be non-negative")
        if abs(float(weights.sum()) - 1.0) > _WEIGHT_TOL:
            raise DomainError(f"weights must sum to 1 within {_WEIGHT_TOL}")
        if (sigmas is None) == (covariances is None):
            raise DomainError("give exactly one of sigmas or covariances")

        self._weights = weights.copy()
        self._means = means.copy()
        if sigmas is not None:
            sigmas = np.asarray(sigmas, dtype=float)
            if sigmas.shape != (k,):
                raise DomainError("sigmas must have shape (K,)")
            if np.any(sigmas <= 0.0):
                raise DomainError("sigmas must be positive")
            self._sigmas = sigmas.copy()
            self._covs = None
            self._chol = None
        else:
            covs = np.asarray(covariances, dtype=float)
            if covs.shape != (k, d, d):
                raise DomainError("covariances must have shape (K, d, d)")
            scale = max(float(np.abs(covs).max()), 1.0)
            if float(np.abs(covs - covs.transpose(0, 2, 1)).max()) > 1e-12 * scale:
                raise DomainError("covariances must be symmetric")
            covs = 0.5 * (covs + covs.transpose(0, 2, 1))
            eigs = np.linalg.eigvalsh(covs)
            if float(eigs.min()) <= 0.0:
                raise DomainError("covariances must be positive definite")
            self._sigmas = None
            self._covs = covs
            self._chol = np.linalg.cholesky(covs)
        for arr in (self._weights, self._means, self._sigmas, self._covs, self._chol):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def dim(self) -> int:
        return self._means.shape[1]

    @property
    def n_components(self) -> int:
        return self._means.shape[0]

    @property
    def isotropic(self) -> bool:
        return self._sigmas is not None

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def means(self) -> np.ndarray:
        return self._means

    @property
    def sigmas(self) -> np.ndarray | None:
        return self._sigmas

    @property
    def covariances(self) -> np.ndarray:
        """Component covariances as (K, d, d), materialized if isotropic."""
        if self._covs is not None:
            return self._covs
        eye = np.eye(self.dim)
        return self._sigmas[:, None, None] ** 2 * eye[None, :, :]

    def max_mean_norm(self) -> float:
        return float(np.linalg.norm(self._means, axis=1).max())

    def mean(self) -> np.ndarray:
        return self._weights @ self._means

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        centered = self._means - mu
        between = np.einsum("k,ki,kj->ij", self._weights, centered, centered)
        if self.isotropic:
            within = float(self._weights @ self._sigmas**2) * np.eye(self.dim)
        else:
            within = np.einsum("k,kij->ij", self._weights, self._covs)
        return within + between

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n i.i.d. draws, shape (n, d). Row order carries no component structure."""
        idx = rng.choice(self.n_components, size=n, p=self._weights)
        z = rng.standard_normal((n, self.dim))
        out = self._means[idx].copy()
        if self.isotropic:
            out += self._sigmas[idx, None] * z
        else:
            for k in range(self.n_components):
                rows = idx == k
                if rows.any():
                    out[rows] += z[rows] @ self._chol[k].T
        return out

    def log_density(self, x) -> np.ndarray | float:
        """Log density at x, shape (n, d) -> (n,) or (d,) -> scalar. Stable in the tails."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise DomainError(f"points must have dimension {self.dim}")
        d = self.dim
        with np.errstate(divide="ignore"):
            logw = np.log(self._weights)  # zero weights drop out as -inf
        if self.isotropic:
            sq = (
                np.sum(pts**2, axis=1)[None, :]
                - 2.0 * self._means @ pts.T
                + np.sum(self._means**2, axis=1)[:, None]
            )
            np.maximum(sq, 0.0, out=sq)
            var = self._sigmas[:, None] ** 2
            comp = -0.5 * (d * np.log(2.0 * np.pi * var) + sq / var)
        else:
            comp = np.empty((self.n_components, pts.shape[0]))
            for k in range(self.n_components):
                diff = pts - self._means[k]
                y = np.linalg.solve(self._chol[k], diff.T)
                logdet = 2.0 * np.sum(np.log(np.diag(self._chol[k])))
                comp[k] = -0.5 * (d * np.log(2.0 * np.pi) + logdet + np.sum(y**2, axis=0))
        out = logsumexp(comp + logw[:, None], axis=0)
        return float(out[0]) if squeeze else out


def standard_normal(dim: int) -> GaussianMixture:
    """The reference law N(0, I_d) as a one-component mixture."""
    return GaussianMixture([1.0], np.zeros((1, dim)), sigmas=[1.0])


def single_gaussian(mean, *, sigma: float | None = None, cov=None) -> GaussianMixture:
    mean = np.asarray(mean, dtype=float).reshape(1, -1)
    if sigma is not None:
        return GaussianMixture([1.0], mean, sigmas=[float(sigma)])
    return GaussianMixture([1.0], mean, covariances=np.asarray(cov, dtype=float)[None])


@dataclass(frozen=True)
class SupportRadius:
    """Monte Carlo estimate of a norm quantile of a mixture.

    ``radius`` is the ``quantile``-level quantile of the norm of a draw,
    clamped from below by the largest component mean norm.  ``ci`` is a
    99.7% two-sided order-statistic interval for the unclamped quantile.
    """

    radius: float
    quantile: float
    ci: tuple[float, float]
    tail_mass: float
    n_samples: int


def effective_support_radius(
    gm: GaussianMixture,
    rng: np.random.Generator,
    quantile: float = 0.999,
    n: int = 1_000_000,
) -> SupportRadius:
    """Norm quantile of the mixture, used as a bounded-support surrogate.

    Mixtures with Gaussian tails have unbounded support, so bounds that
    want a support radius get the radius containing ``quantile`` of the
    mass; the excluded tail mass is reported alongside.
    """
    if not 0.0 < quantile < 1.0:
        raise DomainError("quantile must lie strictly between 0 and 1")
    norms = np.sort(np.linalg.norm(gm.sample(n, rng), axis=1))
    radius = float(np.quantile(norms, quantile))
    k_lo = int(binom.ppf(0.0015, n, quantile))
    k_hi = int(binom.ppf(0.9985, n, quantile))
    ci = (float(norms[max(k_lo - 1, 0)]), float(norms[min(k_hi, n - 1)]))
    return SupportRadius(
        radius=max(radius, gm.max_mean_norm()),
        quantile=quantile,
        ci=ci,
        tail_mass=1.0 - quantile,
        n_samples=n,
    )


def relax_boundary(gm: GaussianMixture, coeff: float, noise_scale: float) -> GaussianMixture:
    """Law of coeff * X + noise_scale * Z for X ~ gm and independent Z ~ N(0, I).

    Scaling and Gaussian convolution keep the mixture Gaussian, so this is
    exact.  ``coeff`` must be non-zero; ``noise_scale`` may be zero.
    """
    coeff = float(coeff)
    noise_scale = float(noise_scale)
    if coeff == 0.0:
        raise DomainError("coeff must be non-zero; a pure Gaussian should be built directly")
    if noise_scale < 0.0:
        raise DomainError("noise_scale must be non-negative")
    means = coeff * gm.means
    if gm.isotropic:
        sigmas = np.sqrt((coeff * gm.sigmas) ** 2 + noise_scale**2)
        return GaussianMixture(gm.weights, means, sigmas=sigmas)
    covs = coeff**2 * gm.covariances + noise_scale**2 * np.eye(gm.dim)
    return GaussianMixture(gm.weights, means, covariances=covs)


def combine_independent(
    gm0: GaussianMixture,
    gm1: GaussianMixture,
    a: float,
    b: float,
    max_components: int = _MAX_COMPONENTS,
) -> GaussianMixture:
    """Law of a * X_0 + b * X_1 for independent X_0 ~ gm0, X_1 ~ gm1.

    The result has one component per component pair; pair counts above
    ``max_components`` raise MixtureSizeError.  A vanishing coefficient
    collapses to the surviving factor instead of duplicating components.
    """
    if gm0.dim != gm1.dim:
        raise DomainError("mixtures must share a dimension")
    a, b = float(a), float(b)
    if a == 0.0 and b == 0.0:
        raise DomainError("a and b cannot both vanish; the law degenerates to a point mass")
    if a == 0.0:
        return relax_boundary(gm1, b, 0.0)
    if b == 0.0:
        return relax_boundary(gm0, a, 0.0)
    k = gm0.n_components * gm1.n_components
    if k > max_components:
        raise MixtureSizeError(
            f"combination needs {k} components, above the budget of {max_components}"
        )
    weights = np.outer(gm0.weights, gm1.weights).ravel()
    means = (a * gm0.means[:, None, :] + b * gm1.means[None, :, :]).reshape(k, -1)
    if gm0.isotropic and gm1.isotropic:
        var = (a * gm0.sigmas[:, None]) ** 2 + (b * gm1.sigmas[None, :]) ** 2
        return GaussianMixture(weights, means, sigmas=np.sqrt(var).ravel())
    c0 = a**2 * gm0.covariances
    c1 = b**2 * gm1.covariances
    covs = (c0[:, None, :, :] + c1[None, :, :, :]).reshape(k, gm0.dim, gm0.dim)
    return GaussianMixture(weights, means, covariances=covs)


def interpolant_marginal(
    gm0: GaussianMixture,
    gm1: GaussianMixture,
    a: float,
    b: float,
    g: float,
    max_components: int = _MAX_COMPONENTS,
) -> GaussianMixture:
    """Law of a * X_0 + b * X_1 + g * Z with Z ~ N(0, I) independent of both."""
    g = float(g)
    if g < 0.0:
        raise DomainError("g must be non-negative")
    if a == 0.0 and b == 0.0:
        if g == 0.0:
            raise DomainError("all three coefficients vanish; the law is a point mass")
        return single_gaussian(np.zeros(gm0.dim), sigma=g)
    if a == 0.0:
        return relax_boundary(gm1, b, g)
    if b == 0.0:
        return relax_boundary(gm0, a, g)
    combined = combine_independent(gm0, gm1, a, b, max_components=max_components)
    if g == 0.0:
        return combined
    return relax_boundary(combined, 1.0, g)
