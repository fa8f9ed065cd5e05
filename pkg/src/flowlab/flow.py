"""Flow ODE integration and flow-map diagnostics.

Integrates dx/dt = v(x, t) for batches of particles with an embedded
Dormand-Prince 5(4) pair (adaptive) or classic fourth-order fixed steps.
The variational variant carries the flow-map Jacobian alongside the
state, solving dJ/dt = grad_x v(x, t) J from J = I.

Two diagnostics build on the integrator: the first-variation residual
check, which verifies that the difference between the endpoints of two
flows equals the integral of Jacobian-weighted drift mismatches along
the second flow's path, and the marginal law check, which verifies that
the exact field transports the time-0 interpolant marginal onto the
time-t one.

Fields are duck-typed: anything with ``velocity(x, t) -> (n, d)`` works,
plus ``jacobian(x, t) -> (n, d, d)`` for the variational solver.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, StiffnessError
from .metrics import w2_empirical

_H_MIN = 1e-12

# Dormand-Prince 5(4) tableau.  The last stage row doubles as the fifth
# order solution weights (first-same-as-last).
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_ERR = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)


@dataclass(frozen=True)
class SolverSpec:
    """Integrator settings. ``h`` is the fixed step for method="rk4"."""

    method: str = "rk45"
    rtol: float = 1e-8
    atol: float = 1e-8
    h: float = 1e-2
    max_steps: int = 100_000


@dataclass(frozen=True)
class SolverStats:
    n_steps: int
    n_rejected: int
    max_error_estimate: float


@dataclass(frozen=True)
class FlowResult:
    """Trajectory of a particle batch, recorded at every accepted step.

    ``states`` has shape (T, n, d); ``jacobians`` is (T, n, d, d) when the
    variational system was integrated, else None.
    """

    times: np.ndarray
    states: np.ndarray
    jacobians: np.ndarray | None
    stats: SolverStats

    @property
    def endpoints(self) -> np.ndarray:
        return self.states[-1]

    @property
    def endpoint_jacobians(self) -> np.ndarray:
        if self.jacobians is None:
            raise ValueError("this result carries no Jacobians")
        return self.jacobians[-1]


def _error_norm(err: np.ndarray, y0: np.ndarray, y1: np.ndarray, spec: SolverSpec) -> float:
    scale = spec.atol + spec.rtol * np.maximum(np.abs(y0), np.abs(y1))
    ratio = err / scale
    per_particle = np.sqrt(np.mean(ratio**2, axis=tuple(range(1, ratio.ndim))))
    return float(per_particle.max())


def _integrate_core(rhs, y0: np.ndarray, t0: float, t1: float, spec: SolverSpec):
    """Shared stepper: returns (times list, states list, stats)."""
    span = t1 - t0
    if span == 0.0:
        return [t0], [y0.copy()], SolverStats(0, 0, 0.0)
    direction = 1.0 if span > 0 else -1.0
    times = [t0]
    states = [y0.copy()]
    if spec.method == "rk4":
        n_steps = max(1, int(np.ceil(abs(span) / spec.h)))
        # exact node grid: accumulating t += h can drift past t1 and put
        # stage times outside the field's domain
        grid = t0 + span * np.arange(n_steps + 1) / n_steps
        grid[-1] = t1
        y = y0.copy()
        for ta, tb in zip(grid[:-1], grid[1:]):
            h = tb - ta
            tm = ta + h / 2
            k1 = rhs(ta, y)
            k2 = rhs(tm, y + (h / 2) * k1)
            k3 = rhs(tm, y + (h / 2) * k2)
            k4 = rhs(tb, y + h * k3)
            y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            times.append(tb)
            states.append(y.copy())
        return times, states, SolverStats(n_steps, 0, float("nan"))
    if spec.method != "rk45":
        raise DomainError(f"unknown method {spec.method!r}")

    t, y = t0, y0.copy()
    h = abs(span) / 100.0
    k1 = rhs(t, y)
    n_acc = 0
    n_rej = 0
    max_err = 0.0
    while (t1 - t) * direction > 0:
        h = min(h, abs(t1 - t))
        if h < _H_MIN:
            raise StiffnessError("step size underflow; the field is too stiff here", t)
        hs = direction * h
        ks = [k1]
        for i in range(1, 7):
            yi = y + hs * sum(a * k for a, k in zip(_DP_A[i], ks))
            # t + c*hs can pass t1 by one ulp on the final clamped step
            ts = t + _DP_C[i] * hs
            ts = min(ts, t1) if direction > 0 else max(ts, t1)
            ks.append(rhs(ts, yi))
        y_new = y + hs * sum(a * k for a, k in zip(_DP_A[6], ks))
        err_vec = hs * sum(e * k for e, k in zip(_DP_ERR, ks))
        err = _error_norm(err_vec, y, y_new, spec)
        if err <= 1.0:
            t = t1 if abs(t1 - (t + hs)) < 1e-15 else t + hs
            y = y_new
            k1 = ks[6]  # first-same-as-last
            times.append(t)
            states.append(y.copy())
            n_acc += 1
            max_err = max(max_err, err)
        else:
            n_rej += 1
        factor = 0.9 * err ** (-0.2) if err > 0 else 5.0
        h *= min(5.0, max(0.2, factor))
        if n_acc + n_rej > spec.max_steps:
            raise StiffnessError("step budget exhausted", t)
    return times, states, SolverStats(n_acc, n_rej, max_err)


def integrate(
    field, starts, t0: float, t1: float, spec: SolverSpec | None = None
) -> FlowResult:
    """Integrate the flow of ``field`` from t0 to t1 for a batch of starts."""
    spec = spec or SolverSpec()
    y0 = np.atleast_2d(np.asarray(starts, dtype=float))

    def rhs(t, y):
        return field.velocity(y, t)

    times, states, stats = _integrate_core(rhs, y0, float(t0), float(t1), spec)
    return FlowResult(
        times=np.asarray(times), states=np.asarray(states), jacobians=None, stats=stats
    )


def integrate_with_jacobian(
    field, starts, t0: float, t1: float, spec: SolverSpec | None = None
) -> FlowResult:
    """Integrate the flow together with its Jacobian with respect to the starts.

    The state is packed as (n, d + d^2) so the error control sees both the
    positions and the Jacobian entries.
    """
    spec = spec or SolverSpec()
    y0 = np.atleast_2d(np.asarray(starts, dtype=float))
    n, d = y0.shape
    eye = np.broadcast_to(np.eye(d), (n, d, d))
    packed0 = np.concatenate([y0, eye.reshape(n, d * d)], axis=1)

    def rhs(t, packed):
        x = packed[:, :d]
        jac = packed[:, d:].reshape(n, d, d)
        v = field.velocity(x, t)
        dv = field.jacobian(x, t)
        djac = np.einsum("nij,njk->nik", dv, jac)
        return np.concatenate([v, djac.reshape(n, d * d)], axis=1)

    times, states, stats = _integrate_core(rhs, packed0, float(t0), float(t1), spec)
    arr = np.asarray(states)
    return FlowResult(
        times=np.asarray(times),
        states=arr[:, :, :d],
        jacobians=arr[:, :, d:].reshape(len(times), n, d, d),
        stats=stats,
    )


def _chain_through(field, starts, checkpoints, spec: SolverSpec):
    """Integrate through successive times, returning the state at each checkpoint."""
    out = []
    state = np.atleast_2d(np.asarray(starts, dtype=float))
    t_prev = checkpoints[0]
    out.append(state.copy())
    for t_next in checkpoints[1:]:
        state = integrate(field, state, t_prev, t_next, spec).endpoints
        out.append(state.copy())
        t_prev = t_next
    return out


@dataclass(frozen=True)
class VariationResidual:
    """First-variation identity residuals for a batch of starts.

    ``lhs`` is the endpoint gap between the reference flow and the probe
    flow from shared starts; ``rhs`` the quadrature of Jacobian-weighted
    drift mismatches along the probe path.  ``residual`` is the row-wise
    norm of their difference.
    """

    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray
    lhs_norms: np.ndarray
    n_nodes: int


def alekseev_grobner_residual(
    v_true,
    v_approx,
    starts,
    t0: float = 0.0,
    t1: float = 1.0,
    n_nodes: int = 64,
    spec: SolverSpec | None = None,
) -> VariationResidual:
    """Check the first-variation identity connecting two flows.

    With X the flow map of ``v_true`` and Y the flow of ``v_approx`` from
    the same starts,

        X_{t0->t1}(Y_{t0}) - Y_{t1}
            = integral of (grad X_{r->t1})(Y_r) [v_true - v_approx](Y_r, r) dr,

    evaluated here with Gauss-Legendre nodes in r.  Each node restarts a
    Jacobian flow of the true field from the probe path's state, so the
    cost is n_nodes short variational solves.
    """
    spec = spec or SolverSpec()
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    mid, half = 0.5 * (t0 + t1), 0.5 * (t1 - t0)
    rs = mid + half * nodes
    ws = half * weights
    order = np.argsort(rs)
    rs, ws = rs[order], ws[order]

    y_at_nodes = _chain_through(v_approx, starts, [t0, *rs, t1], spec)
    y_final = y_at_nodes[-1]
    z_final = integrate(v_true, starts, t0, t1, spec).endpoints
    lhs = z_final - y_final

    rhs = np.zeros_like(lhs)
    for r, w, y_r in zip(rs, ws, y_at_nodes[1:-1]):
        mismatch = v_true.velocity(y_r, float(r)) - v_approx.velocity(y_r, float(r))
        jac = integrate_with_jacobian(v_true, y_r, float(r), t1, spec).endpoint_jacobians
        rhs += w * np.einsum("nij,nj->ni", jac, mismatch)

    residual = np.linalg.norm(lhs - rhs, axis=1)
    return VariationResidual(
        lhs=lhs,
        rhs=rhs,
        residual=residual,
        lhs_norms=np.linalg.norm(lhs, axis=1),
        n_nodes=n_nodes,
    )


@dataclass(frozen=True)
class MarginalCheck:
    t: float
    w2_flow: float
    w2_calibration: float
    ratio: float
    passed: bool


def marginal_law_check(
    field,
    rng: np.random.Generator,
    n: int = 2000,
    t_checks=(0.25, 0.5, 0.75, 1.0),
    spec: SolverSpec | None = None,
    ratio_cap: float = 2.0,
) -> list[MarginalCheck]:
    """Verify that the exact flow reproduces the interpolant marginals.

    Starts are drawn from the time-0 marginal and pushed through the flow;
    at each checkpoint the transported cloud is compared against a fresh
    interpolant draw, with the distance between two independent direct
    draws as the sampling-noise calibration.  Passes when the flow's
    distance is at most ``ratio_cap`` times the calibration.
    """
    spec = spec or SolverSpec()
    t_checks = tuple(float(t) for t in t_checks)
    starts = field.marginal(0.0).sample(n, rng)
    flow_states = _chain_through(field, starts, [0.0, *t_checks], spec)[1:]
    out = []
    for t, cloud in zip(t_checks, flow_states):
        direct_a, _ = field.sample_interpolant(n, t, rng)
        direct_b, _ = field.sample_interpolant(n, t, rng)
        w2_flow = w2_empirical(cloud, direct_a).value
        w2_cal = w2_empirical(direct_b, direct_a).value
        ratio = w2_flow / w2_cal if w2_cal > 0 else float("inf")
        out.append(
            MarginalCheck(
                t=t,
                w2_flow=w2_flow,
                w2_calibration=w2_cal,
                ratio=ratio,
                passed=ratio <= ratio_cap,
            )
        )
    return out
