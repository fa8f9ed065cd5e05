"""End-to-end acceptance runs: every advertised guarantee at its stated tolerance.

Each test prints one ACCEPTANCE line (collected by conftest) before asserting,
so a failing run still reports the status of every criterion it reached.
"""

import math
import time

import numpy as np
from scipy import stats

from conftest import record_acceptance
from flowlab import rng as rng_mod
from flowlab.bounds import rhs_corollary_4_3, rhs_theorem_4_4
from flowlab.config import from_dict
from flowlab.experiments import run_bound_suite, run_pfode_suite
from flowlab.flow import (
    SolverSpec,
    alekseev_grobner_residual,
    integrate,
    marginal_law_check,
)
from flowlab.metrics import coupled_w2_upper
from flowlab.mixtures import (
    GaussianMixture,
    effective_support_radius,
    single_gaussian,
    standard_normal,
)
from flowlab.regularity import (
    estimate_lambda,
    high_probability_cov_check,
    lambda_certificate,
)
from flowlab.schedules import generic_concave, schedule_integrals, ve, vp
from flowlab.velocity import (
    ExactVelocityField,
    PerturbedVelocityField,
    l2_error,
    lipschitz_profile,
    objective_gap_check,
)


def _finish(number, desc, t0, cap, ok, detail=""):
    dt = time.perf_counter() - t0
    status = "PASS" if ok and dt < cap else "FAIL"
    record_acceptance(f"ACCEPTANCE {number}: {status} - {desc} ({dt:.1f}s)")
    assert ok, detail
    assert dt < cap, f"runtime {dt:.1f}s exceeds the {cap}s budget"


def _fd_jacobian(fn, x, h):
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        fp = fn((x + e)[None, :])[0]
        fm = fn((x - e)[None, :])[0]
        cols.append((fp - fm) / (2.0 * h))
    return np.stack(cols, axis=1)


def _rel_err(a, b):
    return float(np.abs(a - b).max() / (1.0 + np.abs(a).max()))


def _posterior_var_quad(gm, x, tau, n_grid=100_001):
    # d=1 oracle: trapezoid over w = x - xi with density p_W(w) phi_tau(x - w)
    if gm.isotropic:
        s_max = float(gm.sigmas.max())
    else:
        s_max = float(np.sqrt(gm.covariances.max()))
    lo = min(float(gm.means.min()) - 10.0 * s_max, x - 10.0 * tau)
    hi = max(float(gm.means.max()) + 10.0 * s_max, x + 10.0 * tau)
    w = np.linspace(lo, hi, n_grid)
    logp = gm.log_density(w[:, None]) + stats.norm.logpdf(x - w, scale=tau)
    p = np.exp(logp - logp.max())
    z = np.trapezoid(p, w)
    m = np.trapezoid(w * p, w) / z
    return float(np.trapezoid((w - m) ** 2 * p, w) / z)


class ScalarLinearField:
    """Velocity a*x, whose flow and first variation are known in closed form."""

    def __init__(self, rate):
        self.rate = rate

    def velocity(self, x, t):
        return self.rate * np.atleast_2d(x)

    def jacobian(self, x, t):
        x = np.atleast_2d(x)
        n, d = x.shape
        return np.tile(self.rate * np.eye(d), (n, 1, 1))


def _full_cov_pair():
    c0 = [[[0.6, 0.15], [0.15, 0.4]], [[0.5, -0.1], [-0.1, 0.7]]]
    c1 = [[[0.4, 0.1], [0.1, 0.5]], [[0.6, 0.0], [0.0, 0.3]]]
    pi0 = GaussianMixture([0.5, 0.5], [[-0.6, 0.2], [0.7, -0.3]], covariances=c0)
    pi1 = GaussianMixture([0.4, 0.6], [[0.8, 0.5], [-0.5, -0.6]], covariances=c1)
    return pi0, pi1


def test_jacobians_match_finite_differences():
    t0 = time.perf_counter()
    fc0, fc1 = _full_cov_pair()
    instances = [
        (
            standard_normal(1),
            GaussianMixture([0.6, 0.4], [[-0.8], [0.8]], sigmas=[0.45, 0.55]),
            generic_concave(),
            False,
        ),
        (fc0, fc1, generic_concave(0.8, 0.03), False),
        (
            standard_normal(4),
            GaussianMixture(
                [0.4, 0.3, 0.3],
                [
                    [0.7, 0.0, -0.4, 0.2],
                    [-0.5, 0.6, 0.0, -0.3],
                    [0.0, -0.7, 0.5, 0.4],
                ],
                sigmas=[0.5, 0.5, 0.5],
            ),
            generic_concave(),
            False,
        ),
        (
            standard_normal(2),
            GaussianMixture([0.5, 0.5], [[0.8, 0.0], [-0.8, 0.0]], sigmas=[0.5, 0.5]),
            ve(1.0, 0.15),
            True,
        ),
        (
            standard_normal(1),
            GaussianMixture([0.5, 0.5], [[0.7], [-0.7]], sigmas=[0.5, 0.5]),
            vp(1.0, 0.1),
            True,
        ),
    ]
    worst_fd = 0.0
    worst_route = 0.0
    ok = True
    detail = ""
    for k, (pi0, pi1, schedule, gaussian_ref) in enumerate(instances):
        field = ExactVelocityField(pi0, pi1, schedule)
        rng = rng_mod.stream(101, "acc1", k)
        for _ in range(50):
            t = float(rng.uniform(0.1, 0.9))
            x = field.sample_interpolant(1, t, rng)[0][0]
            h = 1e-5 * (1.0 + float(np.linalg.norm(x)))
            jac = field.jacobian(x[None, :], t)[0]
            jac_fd = _fd_jacobian(lambda p: field.velocity(p, t), x, h)
            errs = [_rel_err(jac, jac_fd)]
            for which in ("x0", "x1"):
                cm = field.conditional_mean_jacobian(x[None, :], t, which)[0]
                cm_fd = _fd_jacobian(
                    lambda p, w=which: field.conditional_mean(p, t, w), x, h
                )
                errs.append(_rel_err(cm, cm_fd))
            worst_fd = max(worst_fd, *errs)
            if max(errs) > 1e-5:
                ok = False
                detail = f"instance {k}: finite-difference mismatch {max(errs):.2e} at t={t:.3f}"
            if gaussian_ref:
                jac_ode = field.jacobian_pfode(x[None, :], t)[0]
                route = _rel_err(jac, jac_ode)
                worst_route = max(worst_route, route)
                if route > 1e-8:
                    ok = False
                    detail = f"instance {k}: score route differs by {route:.2e}"
    _finish(
        1,
        f"velocity and conditional-mean jacobians vs central differences "
        f"(worst rel {worst_fd:.1e}, score-route gap {worst_route:.1e})",
        t0,
        60.0,
        ok,
        detail,
    )


def test_flow_reproduces_interpolant_marginals():
    t0 = time.perf_counter()
    fc0, fc1 = _full_cov_pair()
    instances = [
        (
            standard_normal(1),
            GaussianMixture([0.3, 0.7], [[-2.0], [2.0]], sigmas=[0.3, 0.3]),
            generic_concave(),
        ),
        (standard_normal(2), fc1, generic_concave(0.8, 0.03)),
        (
            standard_normal(2),
            GaussianMixture([0.5, 0.5], [[1.0, 0.0], [-1.0, 0.0]], sigmas=[0.5, 0.5]),
            ve(1.0, 0.1),
        ),
    ]
    ok = True
    detail = ""
    worst = 0.0
    for k, (pi0, pi1, schedule) in enumerate(instances):
        field = ExactVelocityField(pi0, pi1, schedule)
        checks = marginal_law_check(field, rng_mod.stream(202, "acc2", k), n=2000)
        assert [c.t for c in checks] == [0.25, 0.5, 0.75, 1.0]
        worst = max(worst, max(c.ratio for c in checks))
        for c in checks:
            if not c.passed:
                ok = False
                detail = f"instance {k}: ratio {c.ratio:.2f} at t={c.t}"
    _finish(
        2,
        f"flow marginals within 2x of sampling calibration, n=2000, "
        f"3 mixtures (worst ratio {worst:.2f})",
        t0,
        300.0,
        ok,
        detail,
    )


def test_transport_error_within_gronwall_bound_across_error_levels():
    t0 = time.perf_counter()
    pi0 = single_gaussian([0.0, 0.0], sigma=0.3)
    pi1 = GaussianMixture([0.5, 0.5], [[0.4, 0.0], [-0.4, 0.0]], sigmas=[0.3, 0.3])
    schedule = generic_concave(0.6, 0.02)
    base = ExactVelocityField(pi0, pi1, schedule)
    omega = np.array([1.0, 0.5])
    unit = l2_error(
        PerturbedVelocityField(base, 1.0, omega), rng_mod.stream(303, "acc3-unit"), 64
    ).epsilon_closed_form
    targets = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)

    rng = rng_mod.stream(303, "acc3")
    starts = base.marginal(0.0).sample(2000, rng)
    true_ends = integrate(base, starts, 0.0, 1.0).endpoints
    t_grid = np.linspace(0.0, 1.0, 21)

    ok = True
    detail = ""
    eps_hat = []
    lhs_list = []
    margins = []
    for i, target in enumerate(targets):
        field = PerturbedVelocityField(base, target / unit, omega)
        eps = l2_error(field, rng_mod.stream(303, "acc3-eps", i), 512).epsilon
        if abs(eps / target - 1.0) > 0.02:
            ok = False
            detail = f"measured error {eps:.4e} missed the {target:.0e} level"
        lip = lipschitz_profile(field, t_grid, rng_mod.stream(303, "acc3-lip", i))
        rhs = eps * math.exp(lip.integral())
        lhs = coupled_w2_upper(true_ends, integrate(field, starts, 0.0, 1.0).endpoints)
        slack = max(1e-6, 1e-3 * rhs)
        if lhs > rhs + slack:
            ok = False
            detail = f"transport error {lhs:.4e} exceeds bound {rhs:.4e} at eps={eps:.0e}"
        eps_hat.append(eps)
        lhs_list.append(lhs)
        margins.append(lhs / rhs)
    slope = float(np.polyfit(np.log(eps_hat), np.log(lhs_list), 1)[0])
    if not 0.8 <= slope <= 1.1:
        ok = False
        detail = f"log-log slope {slope:.3f} outside [0.8, 1.1]"
    _finish(
        3,
        f"coupled transport error under eps*exp(int L) at 5 error levels "
        f"(slope {slope:.3f}, max lhs/rhs {max(margins):.2f})",
        t0,
        600.0,
        ok,
        detail,
    )


def test_gradient_envelope_dominates_probed_norms():
    t0 = time.perf_counter()
    sigma = 0.3  # common component scale of both endpoint mixtures
    pi0 = single_gaussian([0.0, 0.0], sigma=sigma)
    pi1 = GaussianMixture(
        [1 / 3, 1 / 3, 1 / 3],
        [[0.5, 0.0], [-0.3, 0.4], [0.0, -0.5]],
        sigmas=[sigma, sigma, sigma],
    )
    schedule = generic_concave(0.5, 0.02)
    base = ExactVelocityField(pi0, pi1, schedule)

    r0 = effective_support_radius(pi0, rng_mod.stream(404, "acc4-r0"), 0.999, 100_000)
    r1 = effective_support_radius(pi1, rng_mod.stream(404, "acc4-r1"), 0.999, 100_000)
    radius = max(r0.radius, r1.radius)
    tail = max(r0.tail_mass, r1.tail_mass)
    lam = 1.0 + (radius / sigma) ** 2

    ts = np.linspace(0.0, 1.0, 21)
    a_dot = np.abs(np.asarray(schedule.alpha_dot(ts), dtype=float))
    b_dot = np.abs(np.asarray(schedule.beta_dot(ts), dtype=float))
    g = np.asarray(schedule.gamma(ts), dtype=float)
    g_dot = np.abs(np.asarray(schedule.gamma_dot(ts), dtype=float))
    envelope = lam * g_dot / g + math.sqrt(lam) * radius * (a_dot + b_dot) / g

    profile = lipschitz_profile(base, ts, rng_mod.stream(404, "acc4"), n_probe=512)
    gaps = profile.values - envelope * (1.0 + 1e-3)
    ok = bool(np.all(gaps <= 0.0))
    k = int(np.argmax(gaps))
    detail = f"probe norm {profile.values[k]:.3f} above envelope {envelope[k]:.3f} at t={ts[k]:.2f}"
    _finish(
        4,
        f"probed gradient norms under the regularity envelope at 21 nodes "
        f"(lam={lam:.1f}, excluded tail mass {tail:.1e}, "
        f"max ratio {float(np.max(profile.values / envelope)):.3f})",
        t0,
        300.0,
        ok,
        detail if not ok else "",
    )


def test_schedule_integrals_match_closed_forms():
    t0 = time.perf_counter()
    ok = True
    detail = ""
    worst = 0.0
    for radius, delta in ((1.0, 1e-2), (0.2, 1e-3), (0.5, 0.04)):
        s = generic_concave(radius, delta)
        g_min = 2.0 * radius * math.sqrt(delta * (1.0 + delta))
        g_max = radius * (1.0 + 2.0 * delta)
        got = schedule_integrals(s).i_gamma
        want = 2.0 * math.log(g_max / g_min)
        worst = max(worst, abs(got - want))
        if abs(got - want) > 1e-8:
            ok = False
            detail = f"concave radius={radius}: {got!r} vs {want!r}"
    for gamma_1 in (1e-2, 0.05):
        got = schedule_integrals(ve(1.0, gamma_1)).i_gamma
        want = math.log(1.0 / gamma_1)
        worst = max(worst, abs(got - want))
        if abs(got - want) > 1e-8:
            ok = False
            detail = f"ve gamma_1={gamma_1}: {got!r} vs {want!r}"
    _finish(
        5,
        f"noising-rate integrals vs closed forms (worst abs err {worst:.1e})",
        t0,
        1.0,
        ok,
        detail,
    )


def test_regularity_estimates_respect_certificates():
    t0 = time.perf_counter()
    ok = True
    detail = ""

    singles = [
        single_gaussian([0.0], sigma=0.7),
        GaussianMixture(
            [1.0], [[0.3, -0.2]], covariances=[[[0.5, 0.2], [0.2, 0.4]]]
        ),
        GaussianMixture([1.0], [[1.0, -0.5]], sigmas=[1.2]),
        # near-singular covariance stands in for a rank-deficient Gaussian
        GaussianMixture([1.0], [[0.0, 0.0]], covariances=[[[1.0, 0.0], [0.0, 1e-12]]]),
    ]
    for k, gm in enumerate(singles):
        est = estimate_lambda(gm, rng=rng_mod.stream(606, "acc6-single", k))
        if est.lambda_hat > 1.0 + 1e-6:
            ok = False
            detail = f"single gaussian {k}: lambda_hat {est.lambda_hat!r} above 1"

    isos = [
        GaussianMixture([0.5, 0.5], [[-1.5], [1.5]], sigmas=[0.5, 0.5]),
        GaussianMixture(
            [0.4, 0.3, 0.3],
            [[1.0, 0.0], [-0.5, 0.8], [0.0, -1.0]],
            sigmas=[0.6, 0.6, 0.6],
        ),
        GaussianMixture(
            [0.5, 0.5],
            [[0.8, 0.0, 0.0, 0.0], [-0.8, 0.0, 0.0, 0.0]],
            sigmas=[0.5, 0.5],
        ),
    ]
    for k, gm in enumerate(isos):
        cert = lambda_certificate(gm)
        sig = float(gm.sigmas[0])
        assert cert is not None
        assert math.isclose(cert, 1.0 + gm.max_mean_norm() ** 2 / sig**2, rel_tol=1e-12)
        est = estimate_lambda(gm, rng=rng_mod.stream(606, "acc6-iso", k))
        assert est.n_tau == 33
        assert "ridge" in est.strategies
        if est.lambda_hat > cert + 1e-6:
            ok = False
            detail = f"mixture {k}: lambda_hat {est.lambda_hat:.6f} above certificate {cert:.6f}"

    worst_quad = 0.0
    for k, gm in enumerate([singles[0], isos[0]]):
        est = estimate_lambda(gm, rng=rng_mod.stream(606, "acc6-quad", k))
        lam_quad = (
            _posterior_var_quad(gm, float(est.x_star[0]), est.tau_star)
            / est.tau_star**2
        )
        err = abs(est.lambda_hat - lam_quad) / max(1.0, est.lambda_hat)
        worst_quad = max(worst_quad, err)
        if err > 1e-6:
            ok = False
            detail = f"1-d quadrature disagrees: {est.lambda_hat!r} vs {lam_quad!r}"

    tails = [
        (GaussianMixture([0.5, 0.5], [[-1.2], [1.2]], sigmas=[0.5, 0.5]), 0.5),
        (GaussianMixture([0.5, 0.5], [[-1.2], [1.2]], sigmas=[0.05, 0.05]), 0.3),
        (GaussianMixture([0.5, 0.5], [[1.0, 0.0], [-1.0, 0.0]], sigmas=[0.4, 0.4]), 0.4),
    ]
    worst_rate = 0.0
    for k, (gm, tau) in enumerate(tails):
        for c in (1.0, 1.5, 2.0, 3.0):
            chk = high_probability_cov_check(
                gm, tau, c, 100_000, rng_mod.stream(606, "acc6-tail", k)
            )
            worst_rate = max(worst_rate, chk.violation_rate)
            if not chk.passed:
                ok = False
                detail = (
                    f"tail check failed at c={c}: rate {chk.violation_rate:.2e} vs "
                    f"bound {chk.rate_bound:.2e} + {3 * chk.ci_half_width:.2e}"
                )
    _finish(
        6,
        f"regularity probe maxima under certificates, 1-d quadrature match "
        f"{worst_quad:.1e}, covariance tail rates within bounds "
        f"(max rate {worst_rate:.1e})",
        t0,
        300.0,
        ok,
        detail,
    )


def test_first_variation_identity():
    t0 = time.perf_counter()
    ok = True
    detail = ""

    rng = rng_mod.stream(707, "acc7")
    starts = rng.normal(size=(5, 2))
    res = alekseev_grobner_residual(
        ScalarLinearField(1.0),
        ScalarLinearField(0.5),
        starts,
        n_nodes=32,
        spec=SolverSpec(rtol=1e-12, atol=1e-12),
    )
    closed = (math.e - math.exp(0.5)) * starts
    if res.residual.max() > 1e-10:
        ok = False
        detail = f"scalar-linear residual {res.residual.max():.2e}"
    if np.abs(res.lhs - closed).max() > 1e-9:
        ok = False
        detail = "scalar-linear endpoint difference misses the closed form"

    base = ExactVelocityField(
        standard_normal(2),
        GaussianMixture([0.5, 0.5], [[1.0, 0.5], [-1.0, -0.5]], sigmas=[0.5, 0.5]),
        generic_concave(),
    )
    pert = PerturbedVelocityField(base, 0.2, [1.0, 1.0])
    starts = base.marginal(0.0).sample(20, rng)
    res_gmm = alekseev_grobner_residual(base, pert, starts)
    tol = 1e-4 * (1.0 + res_gmm.lhs_norms)
    ratio = float((res_gmm.residual / tol).max())
    if ratio > 1.0:
        ok = False
        detail = f"mixture residual at {ratio:.2f}x its tolerance"
    _finish(
        7,
        f"first-variation identity: scalar-linear residual "
        f"{res.residual.max():.1e}, mixture worst residual/tol {ratio:.1e} "
        f"over 20 starts",
        t0,
        120.0,
        ok,
        detail,
    )


def test_bound_chain_and_boundary_scale_rule(tmp_path):
    t0 = time.perf_counter()

    def data(pi1, amplitudes):
        return {
            "experiment": {"kind": "bounds", "seed": 7, "out_dir": str(tmp_path)},
            "schedule": {"kind": "generic_concave", "radius": 0.4, "delta": 0.04},
            "pi0": {"weights": [1.0], "means": [[0.0, 0.0]], "sigmas": [0.04]},
            "pi1": pi1,
            "perturbation": {"amplitudes": amplitudes, "omega": [1.0, 0.5]},
            "sampling": {"n_w2": 2000, "n_mc": 100_000, "n_probe": 128, "t_nodes": 21},
        }

    pi1_two = {
        "weights": [0.5, 0.5],
        "means": [[0.06, 0.0], [-0.06, 0.0]],
        "sigmas": [0.04, 0.04],
    }
    base2 = ExactVelocityField(
        single_gaussian([0.0, 0.0], sigma=0.04),
        GaussianMixture(**pi1_two),
        generic_concave(0.4, 0.04),
    )
    unit = l2_error(
        PerturbedVelocityField(base2, 1.0, [1.0, 0.5]),
        rng_mod.stream(808, "acc8-unit"),
        8,
    ).epsilon_closed_form

    configs = [
        from_dict(data({"weights": [1.0], "means": [[0.1, 0.0]], "sigmas": [0.04]}, [0.0, 0.05])),
        from_dict(data(pi1_two, [1e-3 / unit])),
    ]
    ok = True
    detail = ""
    ratios = []
    for k, cfg in enumerate(configs):
        report = run_bound_suite(cfg)
        if report.failures or not all(b.passed for b in report.bound_reports):
            ok = False
            bad = report.failures or [
                b.theorem for b in report.bound_reports if not b.passed
            ]
            detail = f"instance {k}: {bad}"
        by = {}
        for b in report.bound_reports:
            by.setdefault(b.theorem, []).append(b)
        for chain_lo, chain_hi in zip(by["T3_1"], by["T3_8"]):
            assert chain_lo.constituents["epsilon"] == chain_hi.constituents["epsilon"]
            if chain_lo.rhs > chain_hi.rhs * (1.0 + 1e-12) + 1e-15:
                ok = False
                detail = f"instance {k}: tighter bound {chain_lo.rhs!r} above looser {chain_hi.rhs!r}"
        assert len(by["T3_9"]) == len(by["T3_1"])
        for b in by.get("C3_10", []):
            ratios.append(b.extra["ratio_to_rule"])
            if not 0.5 <= b.extra["ratio_to_rule"] <= 2.0:
                ok = False
                detail = f"instance {k}: minimizer off the scaling rule by {b.extra['ratio_to_rule']:.2f}x"
    if not ratios:
        ok = False
        detail = "no boundary-scale reports produced"
    _finish(
        8,
        f"bound chain and boundary-scale rule on 2 instances "
        f"(minimizer/rule ratios {', '.join(f'{r:.2f}' for r in ratios)})",
        t0,
        600.0,
        ok,
        detail,
    )


def test_gaussian_reference_budgets_and_endpoint_bounds(tmp_path):
    t0 = time.perf_counter()
    ok = True
    detail = ""

    for lam, g1 in ((1.0, 0.1), (2.5, 0.03), (1.0, math.sin(0.1))):
        assert rhs_corollary_4_3(lam, g1, "vp") == lam * (1.0 + math.log(1.0 / g1))
        assert rhs_corollary_4_3(lam, g1, "ve") == lam * math.log(1.0 / g1)
        for eps in (0.05, 0.3):
            assert rhs_theorem_4_4(eps, lam, g1, "vp") == eps * (math.e / g1) ** lam
            assert rhs_theorem_4_4(eps, lam, g1, "ve") == eps * (1.0 / g1) ** lam

    def data(schedule):
        return {
            "experiment": {"kind": "pfode", "seed": 9, "out_dir": str(tmp_path)},
            "schedule": schedule,
            "pi1": {"weights": [1.0], "means": [[0.4, 0.2]], "sigmas": [0.5]},
            "perturbation": {"amplitudes": [0.02], "omega": [1.0, -0.5]},
            "sampling": {"n_w2": 2000, "n_mc": 100_000, "n_probe": 128, "t_nodes": 21},
        }

    budgets = {}
    for schedule, tag in (
        ({"kind": "vp", "radius": 1.0, "delta": 0.1}, "C4_3_VP"),
        ({"kind": "ve", "gamma_0": 1.0, "gamma_1": 0.05}, "C4_3_VE"),
    ):
        report = run_pfode_suite(from_dict(data(schedule)))
        consts = report.results["constants"]
        if report.failures or not all(b.passed for b in report.bound_reports):
            ok = False
            detail = f"{tag}: failures {report.failures}"
        if consts["lam"] != 1.0 or consts["lambda_certified"] is not True:
            ok = False
            detail = f"{tag}: single-gaussian target not certified at 1"
        if report.results["route_agreement_max"] > 1e-8:
            ok = False
            detail = f"{tag}: score and posterior routes differ"
        budget = next(b for b in report.bound_reports if b.theorem == tag)
        budgets[tag] = (budget.lhs, budget.rhs)
    _finish(
        9,
        "gaussian-reference budgets exact, measured Lipschitz integrals below "
        + ", ".join(
            f"{tag} ({lhs:.2f} <= {rhs:.2f})" for tag, (lhs, rhs) in budgets.items()
        )
        + ", endpoint transport bounds hold",
        t0,
        300.0,
        ok,
        detail,
    )


def test_objective_gap_estimates_agree():
    t0 = time.perf_counter()
    base = ExactVelocityField(
        single_gaussian([0.0, 0.0], sigma=0.5),
        GaussianMixture([0.5, 0.5], [[0.6, 0.0], [-0.6, 0.0]], sigmas=[0.4, 0.4]),
        generic_concave(0.5, 0.02),
    )
    ok = True
    detail = ""
    sigmas_off = []
    for k, amp in enumerate((0.1, 0.3, 1.0)):
        res = objective_gap_check(
            PerturbedVelocityField(base, amp, [1.0, 0.5]),
            base,
            rng_mod.stream(909, "acc10", k),
            n_per_node=1563,
            t_nodes=64,
        )
        assert res.n_total >= 100_000
        sigmas_off.append(abs(res.gap_direct - res.gap_projection) / res.se_diff)
        if not res.passed:
            ok = False
            detail = (
                f"amp={amp}: direct {res.gap_direct!r} vs projection "
                f"{res.gap_projection!r}, {sigmas_off[-1]:.1f} standard errors apart"
            )
    _finish(
        10,
        f"loss gap equals projection gap within 3 standard errors on shared "
        f"draws (offsets {', '.join(f'{s:.2f}' for s in sigmas_off)} se)",
        t0,
        60.0,
        ok,
        detail,
    )
