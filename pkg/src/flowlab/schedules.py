"""Interpolant coefficient schedules and their path integrals.

A schedule is the triple of time curves (alpha_t, beta_t, gamma_t) that
weights the two endpoint draws and the Gaussian smoothing term in the
stochastic interpolant

    X_t = alpha_t X_0 + beta_t X_1 + gamma_t Z,    t in [0, 1].

Derivatives are supplied analytically alongside the curves; nothing here
differentiates numerically.  The path integrals of |alpha_dot|/gamma,
|beta_dot|/gamma and |gamma_dot|/gamma drive every bound downstream, so
they get a dedicated composite quadrature with sign-change splitting and
a convergence check.
"""

import enum
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import DomainError, QuadratureError


class ScheduleKind(enum.Enum):
    GENERIC_CONCAVE = "generic_concave"
    VP = "vp"
    VE = "ve"
    CUSTOM = "custom"


class Coefficients(NamedTuple):
    alpha: float
    beta: float
    gamma: float
    alpha_dot: float
    beta_dot: float
    gamma_dot: float


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre settings for schedule path integrals."""

    panels: int = 256
    order: int = 8
    scan_points: int = 4096
    rel_tol: float = 1e-9


@dataclass(frozen=True)
class Schedule:
    """Coefficient curves with analytic derivatives.

    All six callables must accept scalars or numpy arrays and broadcast.
    gamma must stay strictly positive on [0, 1]; the endpoint values
    gamma_0, gamma_1 are the relaxation scales of the two boundaries.
    """

    alpha: Callable
    beta: Callable
    gamma: Callable
    alpha_dot: Callable
    beta_dot: Callable
    gamma_dot: Callable
    kind: ScheduleKind
    params: dict = field(default_factory=dict)

    def at(self, t) -> Coefficients:
        """Evaluate all six coefficients at scalar time t (no domain check)."""
        return Coefficients(
            float(self.alpha(t)),
            float(self.beta(t)),
            float(self.gamma(t)),
            float(self.alpha_dot(t)),
            float(self.beta_dot(t)),
            float(self.gamma_dot(t)),
        )

    def gamma_range(self) -> tuple[float, float]:
        """(min, max) of gamma over [0, 1], located by scan plus local polish."""
        ts = np.linspace(0.0, 1.0, 4097)
        gs = np.asarray(self.gamma(ts), dtype=float)
        lo, hi = float(gs.min()), float(gs.max())
        for which, idx in (("min", int(gs.argmin())), ("max", int(gs.argmax()))):
            a = ts[max(idx - 2, 0)]
            b = ts[min(idx + 2, ts.size - 1)]
            if b > a:
                sgn = 1.0 if which == "min" else -1.0
                res = minimize_scalar(
                    lambda t: sgn * float(self.gamma(t)),
                    bounds=(a, b),
                    method="bounded",
                    options={"xatol": 1e-14},
                )
                val = sgn * float(res.fun)
                if which == "min":
                    lo = min(lo, val)
                else:
                    hi = max(hi, val)
        return lo, hi


def eval_coefficients(schedule: Schedule, t: float) -> Coefficients:
    """Coefficients at time t, with domain checks.

    Raises DomainError if t is outside [0, 1] or gamma_t <= 0.
    """
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t={t} outside [0, 1]")
    c = schedule.at(t)
    if not np.isfinite(c).all():
        raise DomainError(f"schedule produced non-finite coefficients at t={t}")
    if c.gamma <= 0.0:
        raise DomainError(f"gamma must be positive; got {c.gamma} at t={t}")
    return c


def generic_concave(radius: float = 1.0, delta: float = 1e-2) -> Schedule:
    """Linear endpoint weights with a concave gamma bump vanishing like sqrt(delta).

        alpha_t = 1 - t,  beta_t = t,
        gamma_t = 2 * radius * sqrt((delta + t) * (1 + delta - t)).

    gamma is concave, symmetric about t = 1/2, with
    gamma_min = 2 * radius * sqrt(delta * (1 + delta)) at the ends and
    gamma_max = radius * (1 + 2 * delta) at the middle.
    """
    if radius <= 0.0:
        raise DomainError("radius must be positive")
    if delta <= 0.0:
        raise DomainError("delta must be positive so gamma stays positive at t=0,1")
    r, d = float(radius), float(delta)

    def gamma(t):
        t = np.asarray(t, dtype=float)
        return 2.0 * r * np.sqrt((d + t) * (1.0 + d - t))

    def gamma_dot(t):
        t = np.asarray(t, dtype=float)
        return r * (1.0 - 2.0 * t) / np.sqrt((d + t) * (1.0 + d - t))

    return Schedule(
        alpha=lambda t: 1.0 - np.asarray(t, dtype=float),
        beta=lambda t: np.asarray(t, dtype=float) + 0.0,
        gamma=gamma,
        alpha_dot=lambda t: np.full_like(np.asarray(t, dtype=float), -1.0),
        beta_dot=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        gamma_dot=gamma_dot,
        kind=ScheduleKind.GENERIC_CONCAVE,
        params={"radius": r, "delta": d},
    )


def vp(radius: float = 1.0, delta: float = 1e-2) -> Schedule:
    """Variance-preserving trigonometric schedule on a slightly shortened arc.

        alpha_t = 0,  beta_t = sin(w t),  gamma_t = radius * cos(w t),
        w = pi/2 - delta,

    so beta_t^2 + (gamma_t / radius)^2 = 1 and gamma_1 = radius * sin(delta) > 0.
    """
    if radius <= 0.0:
        raise DomainError("radius must be positive")
    if not 0.0 < delta < np.pi / 2:
        raise DomainError("delta must lie in (0, pi/2)")
    r, w = float(radius), float(np.pi / 2 - delta)

    return Schedule(
        alpha=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        beta=lambda t: np.sin(w * np.asarray(t, dtype=float)),
        gamma=lambda t: r * np.cos(w * np.asarray(t, dtype=float)),
        alpha_dot=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        beta_dot=lambda t: w * np.cos(w * np.asarray(t, dtype=float)),
        gamma_dot=lambda t: -r * w * np.sin(w * np.asarray(t, dtype=float)),
        kind=ScheduleKind.VP,
        params={"radius": r, "delta": float(delta)},
    )


def ve(gamma_0: float = 1.0, gamma_1: float = 1e-2) -> Schedule:
    """Variance-exploding schedule: geometric decay of gamma at constant log rate.

        alpha_t = 0,  beta_t = 1,  gamma_t = gamma_0 * (gamma_1 / gamma_0)^t,

    so |gamma_dot| / gamma = log(gamma_0 / gamma_1) at every t.
    """
    if not 0.0 < gamma_1 < gamma_0:
        raise DomainError("need 0 < gamma_1 < gamma_0 for a decreasing positive gamma")
    g0, g1 = float(gamma_0), float(gamma_1)
    rate = np.log(g1 / g0)

    def gamma(t):
        return g0 * np.exp(rate * np.asarray(t, dtype=float))

    return Schedule(
        alpha=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        beta=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        gamma=gamma,
        alpha_dot=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        beta_dot=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        gamma_dot=lambda t: rate * gamma(t),
        kind=ScheduleKind.VE,
        params={"gamma_0": g0, "gamma_1": g1},
    )


def custom(
    alpha: Callable,
    beta: Callable,
    gamma: Callable,
    alpha_dot: Callable,
    beta_dot: Callable,
    gamma_dot: Callable,
    params: dict | None = None,
) -> Schedule:
    """Wrap user-supplied coefficient curves. Derivatives must be analytic."""
    return Schedule(
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        alpha_dot=alpha_dot,
        beta_dot=beta_dot,
        gamma_dot=gamma_dot,
        kind=ScheduleKind.CUSTOM,
        params=dict(params or {}),
    )


def _interior_roots(f: Callable, scan_points: int) -> list[float]:
    """Roots of f in (0, 1) located by a sign-change scan plus bisection."""
    ts = np.linspace(0.0, 1.0, scan_points)
    vals = np.asarray(f(ts), dtype=float)
    if not np.isfinite(vals).all():
        raise DomainError("schedule derivative is non-finite inside [0, 1]")
    roots = []
    for i in range(ts.size - 1):
        a, b = vals[i], vals[i + 1]
        if a == 0.0 and 0 < i:
            roots.append(float(ts[i]))
        elif a * b < 0.0:
            roots.append(float(brentq(lambda t: float(f(t)), ts[i], ts[i + 1], xtol=1e-15)))
    # dedupe near-coincident roots
    out: list[float] = []
    for rt in sorted(roots):
        if not out or rt - out[-1] > 1e-12:
            out.append(rt)
    return out


def _panel_allocation(breaks: np.ndarray, panels: int) -> np.ndarray:
    """Distribute panels across segments proportionally to length, at least one each."""
    lengths = np.diff(breaks)
    return np.maximum(1, np.round(panels * lengths / lengths.sum()).astype(int))


def _gl_fixed(f: Callable, breaks: np.ndarray, alloc: np.ndarray, order: int) -> float:
    """Composite Gauss-Legendre over [0,1] split at the given breakpoints."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    total = 0.0
    for (a, b), n_p in zip(zip(breaks[:-1], breaks[1:]), alloc):
        edges = np.linspace(a, b, n_p + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 * np.diff(edges)
        ts = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
        ws = (half[:, None] * weights[None, :]).ravel()
        total += float(ws @ np.asarray(f(ts), dtype=float))
    return total


def _integrate_ratio(
    numerator_dot: Callable, schedule: Schedule, quad: QuadratureSpec
) -> float:
    """Integral of |numerator_dot(t)| / gamma_t over [0, 1] with convergence check."""
    roots = _interior_roots(numerator_dot, quad.scan_points)
    breaks = np.array([0.0] + roots + [1.0])

    def integrand(ts):
        ts = np.asarray(ts, dtype=float)
        g = np.asarray(schedule.gamma(ts), dtype=float)
        if np.any(g <= 0.0):
            raise DomainError("gamma must stay positive on [0, 1]")
        return np.abs(np.asarray(numerator_dot(ts), dtype=float)) / g

    # refine by doubling every segment's panel count until two successive
    # levels agree; schedules with a thin boundary layer (small delta) need
    # more than the base count
    base = _panel_allocation(breaks, quad.panels)
    coarse = _gl_fixed(integrand, breaks, base, quad.order)
    achieved = np.inf
    for level in range(1, 8):
        fine = _gl_fixed(integrand, breaks, base * 2**level, quad.order)
        achieved = abs(fine - coarse)
        if achieved <= quad.rel_tol * max(1.0, abs(fine)) + 1e-14:
            return fine
        coarse = fine
    raise QuadratureError(
        "schedule path integral did not converge; refine the quadrature", achieved
    )


def log_gamma_total_variation(schedule: Schedule, quad: QuadratureSpec | None = None) -> float:
    """Total variation of log gamma_t over [0, 1], i.e. the integral of |gamma_dot| / gamma.

    For positive concave gamma this equals 2 * log(gamma_max / gamma_min);
    the quadrature here is independent of that identity so the two can be
    checked against each other.
    """
    quad = quad or QuadratureSpec()
    return _integrate_ratio(schedule.gamma_dot, schedule, quad)


@dataclass(frozen=True)
class ScheduleIntegrals:
    """The three path integrals that enter the growth bounds."""

    i_alpha: float  # integral of |alpha_dot| / gamma
    i_beta: float  # integral of |beta_dot| / gamma
    i_gamma: float  # integral of |gamma_dot| / gamma

    def as_dict(self) -> dict:
        return {"i_alpha": self.i_alpha, "i_beta": self.i_beta, "i_gamma": self.i_gamma}


def schedule_integrals(schedule: Schedule, quad: QuadratureSpec | None = None) -> ScheduleIntegrals:
    """Compute all three |coefficient_dot| / gamma path integrals at once."""
    quad = quad or QuadratureSpec()
    return ScheduleIntegrals(
        i_alpha=_integrate_ratio(schedule.alpha_dot, schedule, quad),
        i_beta=_integrate_ratio(schedule.beta_dot, schedule, quad),
        i_gamma=_integrate_ratio(schedule.gamma_dot, schedule, quad),
    )
