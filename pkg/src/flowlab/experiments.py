"""Experiment drivers: bound suites, scaling studies and diagnostic runs.

Every run turns a validated config into a RunReport: measured quantities,
one BoundReport per checked inequality, CSV-ready tables and a list of
failed checks.  All randomness flows through seeded named streams, so a
rerun with the same config and seed reproduces the report byte for byte
(wall clock aside).
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .bounds import BoundReport, big_c, kt_profile, make_bound_report, total_bound_at
from .config import ExperimentConfig
from .errors import ConfigError, DomainError
from .flow import integrate, marginal_law_check
from .metrics import coupled_w2_upper, w2_empirical
from .mixtures import effective_support_radius, standard_normal
from .regularity import (
    default_tau_grid,
    estimate_lambda,
    high_probability_cov_check,
    interpolant_marginal_regularity,
    lambda_certificate,
)
from .schedules import generic_concave, schedule_integrals
from .velocity import (
    ExactVelocityField,
    PerturbedVelocityField,
    _gl_nodes,
    l2_error,
    lipschitz_profile,
)

_EPS_NODES = (32, 4)  # Gauss-Legendre panels and order for closed-form epsilon
_ROUTE_TOL = 1e-8
_FD_TOL = 1e-5
_ENVELOPE_REL_SLACK = 1e-3


@dataclass(frozen=True)
class RunReport:
    """Everything one experiment run produced.

    ``results`` holds the measured numbers, ``tables`` the CSV payloads
    (name -> {"columns": [...], "rows": [[...]]}), and ``failures`` the
    names of checks that did not pass.  Every constituent of every bound
    report also appears somewhere in ``results``, which `audit_bound_reports`
    verifies.
    """

    kind: str
    config: dict
    results: dict
    bound_reports: tuple
    failures: tuple
    wall_clock_seconds: float
    tables: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.failures and all(r.passed for r in self.bound_reports)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "results": self.results,
            "bound_reports": [r.as_dict() for r in self.bound_reports],
            "failures": list(self.failures),
            "passed": self.passed,
            "wall_clock_seconds": self.wall_clock_seconds,
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _collect_numbers(obj, pool: list):
    if isinstance(obj, dict):
        for v in obj.values():
            _collect_numbers(v, pool)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            _collect_numbers(v, pool)
    elif isinstance(obj, (int, float)) and not isinstance(obj, bool):
        pool.append(float(obj))


def audit_bound_reports(report: RunReport) -> list:
    """Constituents missing from the report body; empty means auditable."""
    pool: list = []
    _collect_numbers(_jsonable(report.results), pool)
    _collect_numbers(_jsonable(report.config), pool)
    arr = np.asarray(pool, dtype=float)
    missing = []
    for rep in report.bound_reports:
        for name, value in rep.constituents.items():
            ok = arr.size and bool(
                np.any(np.abs(arr - value) <= 1e-12 * max(1.0, abs(value)))
            )
            if not ok:
                missing.append(f"{rep.theorem}[{rep.extra.get('instance', '')}].{name}")
    return missing


def _closed_form_epsilon(pert: PerturbedVelocityField) -> float:
    """Exact L2 size of the perturbation against the interpolant law."""
    ts, ws = _gl_nodes(*_EPS_NODES, breaks=(0.0, 0.5, 1.0))
    total = sum(w * pert.squared_l2_profile(float(t)) for t, w in zip(ts, ws))
    return math.sqrt(max(total, 0.0))


def _growth_budget(schedule, lam: float, radius: float, t_grid: np.ndarray) -> np.ndarray:
    """Certified envelope for ||grad v||: lam|g'|/g + sqrt(lam) R (|a'|+|b'|)/g."""
    ts = np.asarray(t_grid, dtype=float)
    g = np.asarray(schedule.gamma(ts), dtype=float)
    gd = np.abs(np.asarray(schedule.gamma_dot(ts), dtype=float))
    ad = np.abs(np.asarray(schedule.alpha_dot(ts), dtype=float))
    bd = np.abs(np.asarray(schedule.beta_dot(ts), dtype=float))
    return lam * gd / g + math.sqrt(lam) * radius * (ad + bd) / g


def _radius_dict(sr) -> dict:
    return {
        "radius": sr.radius,
        "quantile": sr.quantile,
        "ci": list(sr.ci),
        "tail_mass": sr.tail_mass,
        "n_samples": sr.n_samples,
    }


def _grid_minimizer(epsilon, dim, lam, c_const, gamma_max, n_grid: int = 512) -> float:
    """Argmin of the total bound over a log grid of boundary scales."""
    grid = np.geomspace(gamma_max * 1e-6, gamma_max, n_grid)
    vals = [total_bound_at(float(g), epsilon, dim, lam, c_const, gamma_max) for g in grid]
    return float(grid[int(np.argmin(vals))])


def _lambda_for_bounds(profile) -> tuple[float, bool]:
    cert = profile.cert_max
    if cert is not None and cert > 0.0:
        return float(cert), True
    return float(profile.lambda_max), False


def _fit_loglog(xs, ys) -> dict:
    pts = [(x, y) for x, y in zip(xs, ys) if x > 0.0 and y > 0.0]
    if len(pts) < 2:
        return {"error": "need at least two positive points for a slope", "n_points": len(pts)}
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    return {
        "slope": float(slope),
        "intercept": float(intercept),
        "rms_residual": float(np.sqrt(np.mean(resid**2))),
        "n_points": len(pts),
    }


def _profile_table(rows: list) -> dict:
    return {
        "columns": ["t", "tau_star", "x_star_norm", "lambda_hat", "lambda_cert"],
        "rows": [[r["t"], r["tau_star"], r["x_star_norm"], r["lambda_hat"], r["lambda_cert"]]
                 for r in rows],
    }


def _lipschitz_table(entries: list) -> dict:
    # long format: one block per amplitude, amplitude "exact" for the base field
    rows = []
    for label, prof in entries:
        for r in prof.rows():
            rows.append([label, r["t"], r["l_hat"], r["argmax_norm"]])
    return {"columns": ["field", "t", "l_hat", "argmax_norm"], "rows": rows}


def run_bound_suite(cfg: ExperimentConfig) -> RunReport:
    """Measure one instance end to end and check the error-growth chain.

    Pipeline: regularity profile of the clean interpolant, effective
    support radius, Lipschitz profiles of the exact and perturbed fields,
    measured perturbation size per amplitude, coupled and empirical
    transport distances from shared starts, then one BoundReport per
    inequality per amplitude.
    """
    t_start = time.perf_counter()
    if cfg.pi0 is None:
        raise ConfigError("bound suite needs [pi0]", field="pi0")
    if cfg.omega is None:
        raise ConfigError("bound suite needs [perturbation]", field="perturbation")
    sched = cfg.schedule
    dim = cfg.dim
    ints = schedule_integrals(sched)
    g_lo, g_hi = sched.gamma_range()

    r0 = effective_support_radius(
        cfg.pi0, rng_mod.stream(cfg.seed, "radius", 0), cfg.quantile, cfg.n_mc
    )
    r1 = effective_support_radius(
        cfg.pi1, rng_mod.stream(cfg.seed, "radius", 1), cfg.quantile, cfg.n_mc
    )
    radius = max(r0.radius, r1.radius)

    t_grid = np.linspace(0.0, 1.0, cfg.t_nodes)
    profile = interpolant_marginal_regularity(
        cfg.pi0, cfg.pi1, sched, t_grid,
        rng=rng_mod.stream(cfg.seed, "lambda"), n_probe=cfg.n_probe,
    )
    lam, certified = _lambda_for_bounds(profile)

    exact = ExactVelocityField(cfg.pi0, cfg.pi1, sched)
    lip_exact = lipschitz_profile(exact, t_grid, rng_mod.stream(cfg.seed, "lip", 0),
                                  n_probe=cfg.n_probe)

    budget = _growth_budget(sched, lam, radius, t_grid)
    envelope_rows = []
    failures = []
    for t, l_hat, k in zip(t_grid, lip_exact.values, budget):
        ok = l_hat <= k * (1.0 + _ENVELOPE_REL_SLACK)
        envelope_rows.append({"t": float(t), "l_hat": float(l_hat), "budget": float(k),
                              "passed": bool(ok)})
        if not ok:
            failures.append(f"envelope@t={t:.3f}")

    # literal class budget on interior nodes; endpoints divide by vanishing weights
    try:
        interior = t_grid[1:-1]
        kt = kt_profile(sched, lam, radius, interior, setting="general")
        kt_rows = [{"t": float(t), "budget": float(k)} for t, k in zip(interior, kt)]
    except DomainError as exc:
        kt_rows = [{"note": str(exc)}]

    c_const = big_c(radius, ints.i_alpha, ints.i_beta)
    reports = [
        make_bound_report(
            "T3_2",
            lip_exact.integral(),
            {"lam": lam, "radius": radius, "i_alpha": ints.i_alpha,
             "i_beta": ints.i_beta, "i_gamma": ints.i_gamma},
            notes="measured Lipschitz integral of the exact field against the class budget",
            extra={"instance": "exact"},
        )
    ]

    starts = exact.marginal(0.0).sample(cfg.n_w2, rng_mod.stream(cfg.seed, "starts"))
    ends_exact = integrate(exact, starts, 0.0, 1.0, cfg.solver).endpoints
    tilde1 = exact.marginal(1.0).sample(cfg.n_w2, rng_mod.stream(cfg.seed, "direct", 1))
    target1 = cfg.pi1.sample(cfg.n_w2, rng_mod.stream(cfg.seed, "direct", 2))
    cal_draw = exact.marginal(1.0).sample(cfg.n_w2, rng_mod.stream(cfg.seed, "direct", 3))
    w2_cal = w2_empirical(cal_draw, tilde1)

    lip_entries = [("exact", lip_exact)]
    amp_rows = []
    for k, amp in enumerate(cfg.amplitudes):
        pert = PerturbedVelocityField(exact, amp, cfg.omega, cfg.phase,
                                      cfg.direction, cfg.time_profile)
        eps = l2_error(pert, rng_mod.stream(cfg.seed, "eps", k), n_per_node=512)
        lip_pert = lipschitz_profile(pert, t_grid, rng_mod.stream(cfg.seed, "lip", k + 1),
                                     n_probe=cfg.n_probe)
        lip_entries.append((f"amp={amp:g}", lip_pert))
        l_int = lip_pert.integral()
        ends_pert = integrate(pert, starts, 0.0, 1.0, cfg.solver).endpoints
        coupled = coupled_w2_upper(ends_exact, ends_pert)
        w2_relaxed = w2_empirical(ends_pert, tilde1)
        w2_target = w2_empirical(ends_pert, target1)
        row = {
            "amplitude": float(amp),
            "epsilon": eps.epsilon,
            "epsilon_raw": eps.epsilon_raw,
            "epsilon_closed_form": eps.epsilon_closed_form,
            "epsilon_ci": list(eps.ci),
            "lipschitz_integral": l_int,
            "coupled_w2": coupled,
            "w2_to_relaxed_target": w2_relaxed.value,
            "w2_to_target": w2_target.value,
            "w2_method": w2_relaxed.method,
        }
        amp_rows.append(row)
        instance = f"amp={amp:g}"
        reports.append(make_bound_report(
            "T3_1", coupled,
            {"epsilon": eps.epsilon, "lipschitz_integral": l_int},
            notes="coupled endpoint distance against the Gronwall envelope",
            extra={"instance": instance},
        ))
        reports.append(make_bound_report(
            "T3_8", coupled,
            {"epsilon": eps.epsilon, "lam": lam, "radius": radius,
             "i_alpha": ints.i_alpha, "i_beta": ints.i_beta,
             "gamma_min": g_lo, "gamma_max": g_hi},
            notes="coupled endpoint distance against the closed-form growth budget",
            extra={"instance": instance, "w2_to_relaxed_target": w2_relaxed.value},
        ))
        reports.append(make_bound_report(
            "T3_9", w2_target.value,
            {"epsilon": eps.epsilon, "lam": lam, "radius": radius,
             "i_alpha": ints.i_alpha, "i_beta": ints.i_beta,
             "gamma_min": g_lo, "gamma_max": g_hi, "dim": dim},
            notes="empirical distance to the unrelaxed target against the total budget",
            extra={"instance": instance, "w2_calibration": w2_cal.value},
        ))
        if eps.epsilon > 0.0:
            grid_min = _grid_minimizer(eps.epsilon, dim, lam, c_const, g_hi)
            rule = dim ** (-1.0 / (4.0 * lam + 2.0)) * eps.epsilon ** (1.0 / (2.0 * lam + 1.0))
            reports.append(make_bound_report(
                "C3_10", grid_min,
                {"epsilon": eps.epsilon, "dim": dim, "lam": lam,
                 "c_const": c_const, "gamma_max": g_hi},
                notes="grid minimizer of the total budget against the closed-form scale",
                extra={"instance": instance, "scaling_rule": rule,
                       "ratio_to_rule": grid_min / rule},
            ))
            row["gamma_min_grid"] = grid_min
            row["gamma_min_rule"] = rule

    fit = _fit_loglog([r["epsilon"] for r in amp_rows], [r["coupled_w2"] for r in amp_rows])

    results = {
        "constants": {
            "dim": dim,
            "lam": lam,
            "lambda_certified": certified,
            "radius": radius,
            "i_alpha": ints.i_alpha,
            "i_beta": ints.i_beta,
            "i_gamma": ints.i_gamma,
            "gamma_min": g_lo,
            "gamma_max": g_hi,
            "c_const": c_const,
        },
        "support_radius": {"pi0": _radius_dict(r0), "pi1": _radius_dict(r1)},
        "lambda_profile": profile.rows(),
        "envelope": envelope_rows,
        "class_budget_interior": kt_rows,
        "amplitudes": amp_rows,
        "w2_calibration": {"value": w2_cal.value, "method": w2_cal.method},
        "w2_vs_eps_fit": fit,
    }
    tables = {
        "lambda_profile": _profile_table(profile.rows()),
        "lipschitz_profile": _lipschitz_table(lip_entries),
    }
    return RunReport(
        kind="bounds",
        config=cfg.echo,
        results=_jsonable(results),
        bound_reports=tuple(reports),
        failures=tuple(failures),
        wall_clock_seconds=time.perf_counter() - t_start,
        tables=tables,
    )


def run_scaling_study(cfg: ExperimentConfig) -> RunReport:
    """Re-run the flow across amplitudes with the boundary scale retuned per run.

    For each amplitude the perturbation size is computed in closed form,
    the relaxation scale is set to d^(-1/(4 lam + 2)) eps^(1/(2 lam + 1)),
    the schedule is rebuilt to hit it, and the total empirical distance to
    the unrelaxed target is measured; the study reports the fitted log-log
    slope next to the theoretical 1/(2 lam + 1).
    """
    t_start = time.perf_counter()
    if cfg.pi0 is None:
        raise ConfigError("scaling study needs [pi0]", field="pi0")
    if cfg.omega is None:
        raise ConfigError("scaling study needs [perturbation]", field="perturbation")
    if cfg.schedule.kind.value != "generic_concave":
        raise ConfigError(
            "scaling study retunes delta, which needs the generic_concave schedule",
            field="schedule.kind",
        )
    amps = [a for a in cfg.amplitudes if a > 0.0]
    if len(amps) > 1:
        if len(amps) < 5:
            raise ConfigError("scaling study needs at least 5 positive amplitudes",
                              field="perturbation.amplitudes")
        span = max(amps) / min(amps)
        if span < 99.0:
            raise ConfigError("amplitudes must span at least two decades",
                              field="perturbation.amplitudes")

    dim = cfg.dim
    r_sched = float(cfg.schedule.params["radius"])
    r0 = effective_support_radius(
        cfg.pi0, rng_mod.stream(cfg.seed, "radius", 0), cfg.quantile, cfg.n_mc
    )
    r1 = effective_support_radius(
        cfg.pi1, rng_mod.stream(cfg.seed, "radius", 1), cfg.quantile, cfg.n_mc
    )
    radius = max(r0.radius, r1.radius)

    # alpha and beta do not depend on delta, so one regularity profile serves all runs
    t_grid = np.linspace(0.0, 1.0, cfg.t_nodes)
    profile = interpolant_marginal_regularity(
        cfg.pi0, cfg.pi1, cfg.schedule, t_grid,
        rng=rng_mod.stream(cfg.seed, "lambda"), n_probe=cfg.n_probe,
    )
    lam, certified = _lambda_for_bounds(profile)

    reports = []
    failures = []
    rows = []
    for k, amp in enumerate(amps):
        base_pert = PerturbedVelocityField(
            ExactVelocityField(cfg.pi0, cfg.pi1, cfg.schedule), amp,
            cfg.omega, cfg.phase, cfg.direction, cfg.time_profile,
        )
        eps_target = _closed_form_epsilon(base_pert)
        g_rule = dim ** (-1.0 / (4.0 * lam + 2.0)) * eps_target ** (1.0 / (2.0 * lam + 1.0))
        # gamma_min = 2 R sqrt(delta (1 + delta)) inverted for delta
        delta = 0.5 * (math.sqrt(1.0 + (g_rule / r_sched) ** 2) - 1.0)
        sched = generic_concave(radius=r_sched, delta=delta)
        ints = schedule_integrals(sched)
        g_lo, g_hi = sched.gamma_range()
        exact = ExactVelocityField(cfg.pi0, cfg.pi1, sched)
        pert = PerturbedVelocityField(exact, amp, cfg.omega, cfg.phase,
                                      cfg.direction, cfg.time_profile)
        eps = l2_error(pert, rng_mod.stream(cfg.seed, "eps", k), n_per_node=256)
        starts = exact.marginal(0.0).sample(cfg.n_w2, rng_mod.stream(cfg.seed, "starts", k))
        ends = integrate(pert, starts, 0.0, 1.0, cfg.solver).endpoints
        target = cfg.pi1.sample(cfg.n_w2, rng_mod.stream(cfg.seed, "direct", k))
        w2_total = w2_empirical(ends, target)
        rows.append({
            "amplitude": float(amp),
            "epsilon_target": eps_target,
            "epsilon": eps.epsilon,
            "gamma_min_rule": g_rule,
            "delta": delta,
            "gamma_min": g_lo,
            "gamma_max": g_hi,
            "i_alpha": ints.i_alpha,
            "i_beta": ints.i_beta,
            "i_gamma": ints.i_gamma,
            "w2_total": w2_total.value,
            "w2_method": w2_total.method,
        })
        reports.append(make_bound_report(
            "T3_9", w2_total.value,
            {"epsilon": eps.epsilon, "lam": lam, "radius": radius,
             "i_alpha": ints.i_alpha, "i_beta": ints.i_beta,
             "gamma_min": g_lo, "gamma_max": g_hi, "dim": dim},
            notes="total empirical distance with the boundary scale set by the optimal rule",
            extra={"instance": f"eps={eps_target:.3e}"},
        ))

    fit = _fit_loglog([r["epsilon"] for r in rows], [r["w2_total"] for r in rows])
    theory = 1.0 / (2.0 * lam + 1.0)
    if "slope" in fit:
        fit["theory_slope"] = theory
        if fit["slope"] > 1.1:
            failures.append("slope_superlinear")

    results = {
        "constants": {"dim": dim, "lam": lam, "lambda_certified": certified,
                      "radius": radius, "schedule_radius": r_sched},
        "support_radius": {"pi0": _radius_dict(r0), "pi1": _radius_dict(r1)},
        "lambda_profile": profile.rows(),
        "runs": rows,
        "fit": fit,
    }
    tables = {
        "lambda_profile": _profile_table(profile.rows()),
        "scaling_runs": {
            "columns": ["amplitude", "epsilon", "gamma_min", "w2_total"],
            "rows": [[r["amplitude"], r["epsilon"], r["gamma_min"], r["w2_total"]]
                     for r in rows],
        },
    }
    return RunReport(
        kind="scaling",
        config=cfg.echo,
        results=_jsonable(results),
        bound_reports=tuple(reports),
        failures=tuple(failures),
        wall_clock_seconds=time.perf_counter() - t_start,
        tables=tables,
    )


def run_pfode_suite(cfg: ExperimentConfig) -> RunReport:
    """Noise-to-data setting: the reference is the Gaussian itself.

    Checks the two Jacobian routes against each other, the measured
    Lipschitz integral against the closed-form budget for the preset, and
    the endpoint distance against the corresponding transport bound.
    """
    t_start = time.perf_counter()
    sched = cfg.schedule
    variant = sched.kind.value
    if variant not in ("vp", "ve"):
        raise ConfigError("pfode suite needs a vp or ve schedule", field="schedule.kind")
    if abs(float(sched.gamma(0.0)) - 1.0) > 1e-12:
        raise ConfigError("the closed-form budgets assume gamma(0) = 1",
                          field="schedule")
    if cfg.omega is None:
        raise ConfigError("pfode suite needs [perturbation]", field="perturbation")
    gamma_1 = float(sched.gamma(1.0))
    dim = cfg.dim

    exact = ExactVelocityField(standard_normal(dim), cfg.pi1, sched)
    if not exact.is_gaussian_reference:
        raise ConfigError("schedule must keep alpha identically zero", field="schedule")

    est = estimate_lambda(cfg.pi1, rng=rng_mod.stream(cfg.seed, "lambda"),
                          n_probe=cfg.n_probe)
    cert = lambda_certificate(cfg.pi1)
    lam = float(cert) if cert is not None else est.lambda_hat

    # the two Jacobian assemblies must agree wherever both are defined
    route_max = 0.0
    for j, t in enumerate(np.linspace(0.1, 0.9, 5)):
        pts = exact.marginal(float(t)).sample(10, rng_mod.stream(cfg.seed, "route", j))
        j_full = exact.jacobian(pts, float(t))
        j_pf = exact.jacobian_pfode(pts, float(t))
        scale = 1.0 + float(np.max(np.abs(j_full)))
        route_max = max(route_max, float(np.max(np.abs(j_full - j_pf))) / scale)
    failures = [] if route_max <= _ROUTE_TOL else ["route_agreement"]

    t_grid = np.linspace(0.0, 1.0, cfg.t_nodes)
    lip_exact = lipschitz_profile(exact, t_grid, rng_mod.stream(cfg.seed, "lip", 0),
                                  n_probe=cfg.n_probe)
    reports = [make_bound_report(
        f"C4_3_{variant.upper()}", lip_exact.integral(),
        {"lam": lam, "gamma_1": gamma_1},
        notes="measured Lipschitz integral against the preset budget",
        extra={"instance": "exact"},
    )]

    starts = exact.marginal(0.0).sample(cfg.n_w2, rng_mod.stream(cfg.seed, "starts"))
    ends_exact = integrate(exact, starts, 0.0, 1.0, cfg.solver).endpoints
    lip_entries = [("exact", lip_exact)]
    amp_rows = []
    for k, amp in enumerate(cfg.amplitudes):
        pert = PerturbedVelocityField(exact, amp, cfg.omega, cfg.phase,
                                      cfg.direction, cfg.time_profile)
        eps = l2_error(pert, rng_mod.stream(cfg.seed, "eps", k), n_per_node=512)
        lip_pert = lipschitz_profile(pert, t_grid, rng_mod.stream(cfg.seed, "lip", k + 1),
                                     n_probe=cfg.n_probe)
        lip_entries.append((f"amp={amp:g}", lip_pert))
        ends_pert = integrate(pert, starts, 0.0, 1.0, cfg.solver).endpoints
        coupled = coupled_w2_upper(ends_exact, ends_pert)
        amp_rows.append({
            "amplitude": float(amp),
            "epsilon": eps.epsilon,
            "epsilon_closed_form": eps.epsilon_closed_form,
            "lipschitz_integral": lip_pert.integral(),
            "coupled_w2": coupled,
        })
        instance = f"amp={amp:g}"
        reports.append(make_bound_report(
            "T3_1", coupled,
            {"epsilon": eps.epsilon, "lipschitz_integral": lip_pert.integral()},
            notes="coupled endpoint distance against the Gronwall envelope",
            extra={"instance": instance},
        ))
        reports.append(make_bound_report(
            f"T4_4_{variant.upper()}", coupled,
            {"epsilon": eps.epsilon, "lam": lam, "gamma_1": gamma_1},
            notes="coupled endpoint distance against the preset transport bound",
            extra={"instance": instance},
        ))

    results = {
        "constants": {"dim": dim, "lam": lam, "gamma_1": gamma_1, "variant": variant,
                      "lambda_certified": cert is not None},
        "lambda_estimate": {
            "lambda_hat": est.lambda_hat,
            "lambda_cert": cert,
            "tau_star": est.tau_star,
            "x_star_norm": float(np.linalg.norm(est.x_star)),
        },
        "route_agreement_max": route_max,
        "amplitudes": amp_rows,
    }
    tables = {"lipschitz_profile": _lipschitz_table(lip_entries)}
    return RunReport(
        kind="pfode",
        config=cfg.echo,
        results=_jsonable(results),
        bound_reports=tuple(reports),
        failures=tuple(failures),
        wall_clock_seconds=time.perf_counter() - t_start,
        tables=tables,
    )


def run_regularity(cfg: ExperimentConfig) -> RunReport:
    """Regularity profile of the clean interpolant plus endpoint diagnostics."""
    t_start = time.perf_counter()
    if cfg.pi0 is None:
        raise ConfigError("regularity run needs [pi0]", field="pi0")
    t_grid = np.linspace(0.0, 1.0, cfg.t_nodes)
    profile = interpolant_marginal_regularity(
        cfg.pi0, cfg.pi1, cfg.schedule, t_grid,
        rng=rng_mod.stream(cfg.seed, "lambda"), n_probe=cfg.n_probe,
    )
    endpoints = {}
    for name, gm, tag in (("pi0", cfg.pi0, 0), ("pi1", cfg.pi1, 1)):
        est = estimate_lambda(gm, rng=rng_mod.stream(cfg.seed, "endpoint", tag),
                              n_probe=cfg.n_probe)
        endpoints[name] = {
            "lambda_hat": est.lambda_hat,
            "lambda_cert": lambda_certificate(gm),
            "tau_star": est.tau_star,
        }

    taus = default_tau_grid(cfg.pi1)
    tau_mid = float(np.exp(np.mean(np.log(taus))))
    n_tail = min(cfg.n_mc, 100_000)
    failures = []
    tail_rows = []
    for j, c in enumerate((1.0, 1.5, 2.0, 3.0)):
        chk = high_probability_cov_check(
            cfg.pi1, tau_mid, c, n_tail, rng_mod.stream(cfg.seed, "tail", j)
        )
        tail_rows.append({
            "c": c, "tau": tau_mid, "violation_rate": chk.violation_rate,
            "rate_bound": chk.rate_bound, "ci_half_width": chk.ci_half_width,
            "threshold": chk.threshold, "passed": chk.passed, "n": chk.n,
        })
        if not chk.passed:
            failures.append(f"tail_rate@c={c:g}")

    results = {
        "constants": {"dim": cfg.dim, "lambda_max": profile.lambda_max,
                      "lambda_cert_max": profile.cert_max},
        "lambda_profile": profile.rows(),
        "endpoints": endpoints,
        "tail_checks": tail_rows,
    }
    tables = {"lambda_profile": _profile_table(profile.rows())}
    return RunReport(
        kind="regularity",
        config=cfg.echo,
        results=_jsonable(results),
        bound_reports=(),
        failures=tuple(failures),
        wall_clock_seconds=time.perf_counter() - t_start,
        tables=tables,
    )


def _fd_jacobian(fn, x: np.ndarray, t: float, h: float = 1e-6) -> np.ndarray:
    d = x.size
    out = np.empty((d, d))
    for j in range(d):
        step = h * max(1.0, abs(float(x[j])))
        e = np.zeros(d)
        e[j] = step
        out[:, j] = (fn(x + e, t) - fn(x - e, t)) / (2.0 * step)
    return out


def run_gradcheck(cfg: ExperimentConfig) -> RunReport:
    """Finite-difference audit of every analytic Jacobian route."""
    t_start = time.perf_counter()
    if cfg.pi0 is None:
        raise ConfigError("gradcheck needs [pi0]", field="pi0")
    exact = ExactVelocityField(cfg.pi0, cfg.pi1, cfg.schedule)
    worst = {"velocity": 0.0, "conditional_mean": 0.0}
    route_max = None
    n_probe = 0
    for j, t in enumerate(np.linspace(0.1, 0.9, 5)):
        t = float(t)
        pts = exact.marginal(t).sample(10, rng_mod.stream(cfg.seed, "gradcheck", j))
        jac = exact.jacobian(pts, t)
        cm_jac = exact.conditional_mean_jacobian(pts, t, "x0")
        for i, x in enumerate(pts):
            n_probe += 1
            fd_v = _fd_jacobian(exact.velocity, x, t)
            scale = 1.0 + float(np.max(np.abs(jac[i])))
            worst["velocity"] = max(worst["velocity"],
                                    float(np.max(np.abs(jac[i] - fd_v))) / scale)
            fd_cm = _fd_jacobian(lambda y, s: exact.conditional_mean(y, s, "x0"), x, t)
            scale = 1.0 + float(np.max(np.abs(cm_jac[i])))
            worst["conditional_mean"] = max(worst["conditional_mean"],
                                            float(np.max(np.abs(cm_jac[i] - fd_cm))) / scale)
        if exact.is_gaussian_reference:
            j_pf = exact.jacobian_pfode(pts, t)
            diff = float(np.max(np.abs(jac - j_pf))) / (1.0 + float(np.max(np.abs(jac))))
            route_max = diff if route_max is None else max(route_max, diff)

    failures = [name for name, err in worst.items() if err > _FD_TOL]
    if route_max is not None and route_max > _ROUTE_TOL:
        failures.append("route_agreement")
    results = {
        "constants": {"dim": cfg.dim, "n_probe": n_probe},
        "max_rel_error": worst,
        "fd_tolerance": _FD_TOL,
        "route_agreement_max": route_max,
        "route_tolerance": _ROUTE_TOL,
    }
    return RunReport(
        kind="gradcheck",
        config=cfg.echo,
        results=_jsonable(results),
        bound_reports=(),
        failures=tuple(failures),
        wall_clock_seconds=time.perf_counter() - t_start,
    )


def run_w2(cfg: ExperimentConfig) -> RunReport:
    """Push starts through the exact flow and compare against direct draws."""
    t_start = time.perf_counter()
    if cfg.pi0 is None:
        raise ConfigError("w2 run needs [pi0]", field="pi0")
    exact = ExactVelocityField(cfg.pi0, cfg.pi1, cfg.schedule)
    checks = marginal_law_check(exact, rng_mod.stream(cfg.seed, "w2"),
                                n=cfg.n_w2, spec=cfg.solver)
    rows = [{"t": c.t, "w2_flow": c.w2_flow, "w2_calibration": c.w2_calibration,
             "ratio": c.ratio, "passed": c.passed} for c in checks]
    failures = [f"marginal@t={c.t:g}" for c in checks if not c.passed]

    tables = {}
    if cfg.dump_trajectories:
        n_dump = min(50, cfg.n_w2)
        starts = exact.marginal(0.0).sample(n_dump, rng_mod.stream(cfg.seed, "dump"))
        res = integrate(exact, starts, 0.0, 1.0, cfg.solver)
        cols = ["particle", "t"] + [f"x_{j + 1}" for j in range(cfg.dim)]
        traj_rows = []
        for i in range(n_dump):
            for t, state in zip(res.times, res.states):
                traj_rows.append([i, float(t)] + [float(v) for v in state[i]])
        tables["trajectories"] = {"columns": cols, "rows": traj_rows}

    results = {"constants": {"dim": cfg.dim, "n_w2": cfg.n_w2}, "marginal_checks": rows}
    return RunReport(
        kind="w2",
        config=cfg.echo,
        results=_jsonable(results),
        bound_reports=(),
        failures=tuple(failures),
        wall_clock_seconds=time.perf_counter() - t_start,
        tables=tables,
    )


RUNNERS = {
    "bounds": run_bound_suite,
    "scaling": run_scaling_study,
    "pfode": run_pfode_suite,
    "regularity": run_regularity,
    "gradcheck": run_gradcheck,
    "w2": run_w2,
}

_SCHEMA_NOTES = {
    "bounds": "one row per checked inequality per instance",
    "lambda_profile": "regularity of the clean interpolant along the time grid",
    "lipschitz_profile": "probe-sup Jacobian norms per field per time node",
    "scaling_runs": "one row per retuned amplitude run",
    "trajectories": "flow states at accepted solver steps, first particles only",
}


def write_report(report: RunReport, out_dir) -> dict:
    """Write report.json, the CSV tables and their schema; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    report_path = out / "report.json"
    report_path.write_text(
        json.dumps(_jsonable(report.as_dict()), indent=2, sort_keys=True) + "\n"
    )
    paths["report"] = report_path

    schema = {"report.json": "full run report; byte-stable for fixed config and seed"}
    if report.bound_reports:
        bounds_path = out / "bounds.csv"
        with open(bounds_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["theorem", "instance", "lhs", "rhs", "slack", "passed"])
            for rep in report.bound_reports:
                writer.writerow([
                    rep.theorem, rep.extra.get("instance", ""),
                    repr(rep.lhs), repr(rep.rhs), repr(rep.slack), rep.passed,
                ])
        paths["bounds"] = bounds_path
        schema["bounds.csv"] = {
            "columns": ["theorem", "instance", "lhs", "rhs", "slack", "passed"],
            "notes": _SCHEMA_NOTES["bounds"],
        }

    for name, table in report.tables.items():
        path = out / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(table["columns"])
            for row in table["rows"]:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        paths[name] = path
        schema[f"{name}.csv"] = {
            "columns": table["columns"],
            "notes": _SCHEMA_NOTES.get(name, ""),
        }

    schema_path = out / "schema.json"
    schema_path.write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n")
    paths["schema"] = schema_path
    return paths
