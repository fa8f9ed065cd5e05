"""Run configuration: one TOML file describing endpoints, schedule and budgets."""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, DomainError
from .flow import SolverSpec
from .mixtures import GaussianMixture
from .schedules import Schedule, generic_concave, ve, vp
from .velocity import TIME_PROFILES

KINDS = ("bounds", "scaling", "pfode", "regularity", "gradcheck", "w2")

_SECTIONS = {
    "experiment",
    "schedule",
    "pi0",
    "pi1",
    "perturbation",
    "sampling",
    "solver",
    "output",
}
_KEYS = {
    "experiment": {"kind", "seed", "out_dir"},
    "schedule": {"kind", "radius", "delta", "gamma_0", "gamma_1"},
    "pi0": {"weights", "means", "sigmas", "covariances"},
    "pi1": {"weights", "means", "sigmas", "covariances"},
    "perturbation": {"amplitudes", "omega", "phase", "direction", "time_profile"},
    "sampling": {"n_w2", "n_mc", "n_probe", "t_nodes", "quantile"},
    "solver": {"method", "rtol", "atol", "h", "max_steps"},
    "output": {"dump_trajectories"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated inputs for one experiment run.

    ``pi0`` is None exactly for the pfode kind, where the reference law is
    the standard Gaussian.  ``echo`` is the normalized scalar form of the
    whole config, embedded in reports so a run is reproducible from its
    own output.
    """

    kind: str
    seed: int
    out_dir: Path
    schedule: Schedule
    pi0: GaussianMixture | None
    pi1: GaussianMixture
    amplitudes: tuple
    omega: np.ndarray | None
    phase: float
    direction: np.ndarray | None
    time_profile: str
    n_w2: int
    n_mc: int
    n_probe: int
    t_nodes: int
    quantile: float
    solver: SolverSpec
    dump_trajectories: bool
    echo: dict

    @property
    def dim(self) -> int:
        return self.pi1.dim


def _fail(field: str, message: str):
    raise ConfigError(message, field=field)


def _as_int(data: dict, section: str, key: str, default: int, minimum: int = 1) -> int:
    raw = data.get(key, default)
    if isinstance(raw, bool) or not isinstance(raw, int):
        _fail(f"{section}.{key}", f"{key} must be an integer")
    if raw < minimum:
        _fail(f"{section}.{key}", f"{key} must be at least {minimum}")
    return raw


def _as_float(data: dict, section: str, key: str, default: float) -> float:
    raw = data.get(key, default)
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        _fail(f"{section}.{key}", f"{key} must be a number")
    return float(raw)


def _check_keys(data: dict, section: str):
    unknown = sorted(set(data) - _KEYS[section])
    if unknown:
        _fail(f"{section}.{unknown[0]}", f"unknown key in [{section}]: {unknown[0]}")


def _build_schedule(data: dict) -> Schedule:
    _check_keys(data, "schedule")
    kind = data.get("kind")
    if kind not in ("generic_concave", "vp", "ve"):
        _fail("schedule.kind", f"schedule kind must be generic_concave, vp or ve, got {kind!r}")
    try:
        if kind == "generic_concave":
            sched = generic_concave(
                radius=_as_float(data, "schedule", "radius", 1.0),
                delta=_as_float(data, "schedule", "delta", 1e-2),
            )
        elif kind == "vp":
            sched = vp(
                radius=_as_float(data, "schedule", "radius", 1.0),
                delta=_as_float(data, "schedule", "delta", 1e-2),
            )
        else:
            sched = ve(
                gamma_0=_as_float(data, "schedule", "gamma_0", 1.0),
                gamma_1=_as_float(data, "schedule", "gamma_1", 1e-2),
            )
    except DomainError as exc:
        raise ConfigError(str(exc), field="schedule") from exc
    for t in (0.0, 1.0):
        if float(sched.gamma(t)) <= 0.0:
            _fail("schedule", f"gamma({t:g}) must be positive; relax the boundary")
    return sched


def _build_mixture(data: dict, section: str) -> GaussianMixture:
    _check_keys(data, section)
    for key in ("weights", "means"):
        if key not in data:
            _fail(f"{section}.{key}", f"[{section}] needs {key}")
    has_sig = "sigmas" in data
    has_cov = "covariances" in data
    if has_sig == has_cov:
        _fail(section, f"[{section}] needs exactly one of sigmas or covariances")
    means = np.asarray(data["means"], dtype=float)
    if means.ndim != 2:
        _fail(f"{section}.means", "means must be a list of coordinate lists")
    try:
        if has_sig:
            return GaussianMixture(data["weights"], means, sigmas=data["sigmas"])
        return GaussianMixture(data["weights"], means, covariances=data["covariances"])
    except (DomainError, ValueError) as exc:
        raise ConfigError(str(exc), field=section) from exc


def _build_perturbation(data: dict, dim: int) -> dict:
    _check_keys(data, "perturbation")
    if "amplitudes" not in data or "omega" not in data:
        _fail("perturbation", "[perturbation] needs amplitudes and omega")
    amps = tuple(float(a) for a in data["amplitudes"])
    if not amps or any(a < 0.0 for a in amps):
        _fail("perturbation.amplitudes", "amplitudes must be a non-empty list of floats >= 0")
    omega = np.asarray(data["omega"], dtype=float)
    if omega.shape != (dim,):
        _fail("perturbation.omega", f"omega must have {dim} entries")
    direction = None
    if "direction" in data:
        direction = np.asarray(data["direction"], dtype=float)
        if direction.shape != (dim,):
            _fail("perturbation.direction", f"direction must have {dim} entries")
        norm = float(np.linalg.norm(direction))
        if norm == 0.0:
            _fail("perturbation.direction", "direction must be non-zero")
        direction = direction / norm
    profile = data.get("time_profile", "one")
    if profile not in TIME_PROFILES:
        _fail(
            "perturbation.time_profile",
            f"time_profile must be one of {sorted(TIME_PROFILES)}, got {profile!r}",
        )
    phase = _as_float(data, "perturbation", "phase", 0.0)
    return {"amplitudes": amps, "omega": omega, "phase": phase, "direction": direction,
            "time_profile": profile}


def _build_solver(data: dict) -> SolverSpec:
    _check_keys(data, "solver")
    method = data.get("method", "rk45")
    if method not in ("rk45", "rk4"):
        _fail("solver.method", f"method must be rk45 or rk4, got {method!r}")
    rtol = _as_float(data, "solver", "rtol", 1e-8)
    atol = _as_float(data, "solver", "atol", 1e-8)
    h = _as_float(data, "solver", "h", 1e-2)
    if rtol <= 0.0 or atol <= 0.0 or h <= 0.0:
        _fail("solver", "rtol, atol and h must be positive")
    return SolverSpec(
        method=method,
        rtol=rtol,
        atol=atol,
        h=h,
        max_steps=_as_int(data, "solver", "max_steps", 100_000),
    )


def _echo(cfg: ExperimentConfig) -> dict:
    sched = {"kind": cfg.schedule.kind.value}
    sched.update({k: float(v) for k, v in cfg.schedule.params.items()})
    out = {
        "experiment": {"kind": cfg.kind, "seed": cfg.seed, "out_dir": str(cfg.out_dir)},
        "schedule": sched,
        "pi1": _mixture_echo(cfg.pi1),
        "sampling": {
            "n_w2": cfg.n_w2,
            "n_mc": cfg.n_mc,
            "n_probe": cfg.n_probe,
            "t_nodes": cfg.t_nodes,
            "quantile": cfg.quantile,
        },
        "solver": {
            "method": cfg.solver.method,
            "rtol": cfg.solver.rtol,
            "atol": cfg.solver.atol,
            "h": cfg.solver.h,
            "max_steps": cfg.solver.max_steps,
        },
        "output": {"dump_trajectories": cfg.dump_trajectories},
    }
    if cfg.pi0 is not None:
        out["pi0"] = _mixture_echo(cfg.pi0)
    if cfg.omega is not None:
        out["perturbation"] = {
            "amplitudes": list(cfg.amplitudes),
            "omega": cfg.omega.tolist(),
            "phase": cfg.phase,
            "direction": None if cfg.direction is None else cfg.direction.tolist(),
            "time_profile": cfg.time_profile,
        }
    return out


def _mixture_echo(gm: GaussianMixture) -> dict:
    out = {"weights": gm.weights.tolist(), "means": gm.means.tolist()}
    if gm.isotropic:
        out["sigmas"] = gm.sigmas.tolist()
    else:
        out["covariances"] = gm.covariances.tolist()
    return out


def from_dict(
    data: dict,
    kind: str | None = None,
    seed: int | None = None,
    out_dir: str | None = None,
) -> ExperimentConfig:
    """Validate a parsed config; CLI overrides win over file values."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")
    unknown = sorted(set(data) - _SECTIONS)
    if unknown:
        _fail(unknown[0], f"unknown section [{unknown[0]}]")
    exp = data.get("experiment", {})
    _check_keys(exp, "experiment")

    kind = kind or exp.get("kind", "bounds")
    if kind not in KINDS:
        _fail("experiment.kind", f"kind must be one of {KINDS}, got {kind!r}")
    if seed is None:
        seed = _as_int(exp, "experiment", "seed", 0, minimum=0)
    out_raw = out_dir or exp.get("out_dir")
    if not out_raw:
        _fail("experiment.out_dir", "out_dir must be set in the config or with --out")

    if "schedule" not in data:
        _fail("schedule", "config needs a [schedule] section")
    schedule = _build_schedule(data["schedule"])
    if kind == "pfode":
        if schedule.kind.value not in ("vp", "ve"):
            _fail("schedule.kind", "pfode runs need a vp or ve schedule")
        if "pi0" in data:
            _fail("pi0", "pfode runs take the Gaussian reference; drop [pi0]")
        pi0 = None
    else:
        if "pi0" not in data:
            _fail("pi0", "config needs a [pi0] section")
        pi0 = _build_mixture(data["pi0"], "pi0")
    if "pi1" not in data:
        _fail("pi1", "config needs a [pi1] section")
    pi1 = _build_mixture(data["pi1"], "pi1")
    if pi0 is not None and pi0.dim != pi1.dim:
        _fail("pi1.means", f"pi0 is {pi0.dim}-dimensional but pi1 is {pi1.dim}-dimensional")

    needs_pert = kind in ("bounds", "scaling", "pfode")
    if "perturbation" in data:
        pert = _build_perturbation(data["perturbation"], pi1.dim)
    elif needs_pert:
        _fail("perturbation", f"{kind} runs need a [perturbation] section")
    else:
        pert = {"amplitudes": (), "omega": None, "phase": 0.0, "direction": None,
                "time_profile": "one"}

    samp = data.get("sampling", {})
    _check_keys(samp, "sampling")
    quantile = _as_float(samp, "sampling", "quantile", 0.999)
    if not 0.0 < quantile < 1.0:
        _fail("sampling.quantile", "quantile must lie strictly between 0 and 1")

    cfg = ExperimentConfig(
        kind=kind,
        seed=seed,
        out_dir=Path(out_raw),
        schedule=schedule,
        pi0=pi0,
        pi1=pi1,
        amplitudes=pert["amplitudes"],
        omega=pert["omega"],
        phase=pert["phase"],
        direction=pert["direction"],
        time_profile=pert["time_profile"],
        n_w2=_as_int(samp, "sampling", "n_w2", 2000),
        n_mc=_as_int(samp, "sampling", "n_mc", 100_000),
        n_probe=_as_int(samp, "sampling", "n_probe", 128),
        t_nodes=_as_int(samp, "sampling", "t_nodes", 21, minimum=2),
        quantile=quantile,
        solver=_build_solver(data.get("solver", {})),
        dump_trajectories=bool(data.get("output", {}).get("dump_trajectories", False)),
        echo={},
    )
    object.__setattr__(cfg, "echo", _echo(cfg))
    return cfg


def load_config(
    path,
    kind: str | None = None,
    seed: int | None = None,
    out_dir: str | None = None,
) -> ExperimentConfig:
    """Parse and validate a TOML config file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}", field="config")
    try:
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}", field="config") from exc
    return from_dict(data, kind=kind, seed=seed, out_dir=out_dir)
