"""Monte Carlo experiment runner.

An :class:`ExperimentConfig` describes one link (:class:`SystemParams`), one
estimator (fixed-step FO-LMS or VSS-FO-LMS) and the Monte Carlo protocol.
:func:`run_monte_carlo` averages the steady-state EMSE over independent
replicas; :func:`sweep_step_sizes` and :func:`sweep_system_params` repeat
that over one- or two-dimensional grids and pair every point with the
closed-form prediction.

Replica ``k`` always draws from ``rng_stream(seed, k)``, so its trajectory
does not depend on which other replicas or grid points are run, and every
grid point sees the same replica worlds.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .folms import DivergenceError, StepSizes, initial_state, run_folms_on
from .sigproc import rng_stream
from .theory import EmsePrediction, InfeasibleError, SolverResult, predict_emse_complete, solve_optimal_step_sizes, to_db
from .vss import VssConfig, run_vss_on
from .world import SystemParams, simulate_world

__all__ = [
    "CSV_COLUMNS",
    "ConfigError",
    "ExperimentFailed",
    "SweepAxis",
    "ExperimentConfig",
    "MonteCarloResult",
    "SweepRow",
    "SweepResult",
    "load_config",
    "parse_config",
    "resolve_steps",
    "auto_preroll",
    "run_monte_carlo",
    "sweep_step_sizes",
    "sweep_system_params",
    "write_csv",
    "convergence_time",
]

CSV_COLUMNS = (
    "mu_w",
    "mu_eps",
    "mu_eta",
    "zeta_pred_dB",
    "zeta_sim_dB",
    "stderr_dB",
    "diverged",
    "gamma",
    "runtime_s",
)
STEP_AXES = ("mu_w", "mu_eps", "mu_eta")
# axis name -> (target, attribute)
SYSTEM_AXES = {
    "sigma2_q": ("params", "sigma2_q"),
    "sigma2_phi": ("params", "sigma2_phi"),
    "sigma2_beta": ("params", "sigma2_beta"),
    "sigma2_eps": ("params", "sigma2_eps"),
    "sigma2_eta": ("params", "sigma2_eta"),
    "kappa": ("params", "kappa"),
    "rho": ("params", "rho"),
    "channel_gain": ("params", "channel_gain"),
    "filter_taps": ("params", "filter_taps"),
    "background_power": ("params", "background_power"),
    "lambda_r": ("vss", "lambda_r"),
    "lambda_e": ("vss", "lambda_e"),
}
NOISE_MODES = ("known", "estimate", "stale")
SEED_ENV = "FOLMS_SEED"


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class ExperimentFailed(RuntimeError):
    """Every replica of a Monte Carlo run diverged."""


@dataclass(frozen=True)
class SweepAxis:
    name: str
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError(f"sweep axis {self.name!r} is empty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError(f"sweep axis {self.name!r} must be strictly increasing")
        object.__setattr__(self, "values", vals)

    @classmethod
    def logspace(cls, name: str, start: float, stop: float, num: int) -> "SweepAxis":
        if not (start > 0 and stop > start and num >= 1):
            raise ValueError("logspace axis needs 0 < start < stop and num >= 1")
        return cls(name, tuple(np.logspace(math.log10(start), math.log10(stop), int(num))))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``steps`` of ``None`` means "solver-optimal for ``params``" with the
    coordinates in ``pinned`` held fixed.  ``preroll`` of ``None`` selects
    :func:`auto_preroll`.  The EMSE is measured on the ``iterations``
    samples that follow the pre-roll; with ``metric="excess"`` it is the
    mean of ``|e - v|^2`` and with ``metric="error"`` the mean of ``|e|^2``
    minus the noise power.
    """

    params: SystemParams = field(default_factory=SystemParams)
    estimator: str = "fixed"
    steps: StepSizes | None = None
    pinned: dict[str, float] = field(default_factory=dict)
    vss: VssConfig = field(default_factory=VssConfig)
    noise_mode: str = "known"
    replicas: int = 16
    iterations: int = 200_000
    preroll: int | None = None
    discard_fraction: float = 0.0
    seed: int = 0
    warm_start: bool = True
    metric: str = "excess"
    scheme: str = "centered"
    sweep: tuple[SweepAxis, ...] = ()
    skip_unstable: bool = True
    workers: int = 1
    output: str | None = None

    def __post_init__(self):
        if self.estimator not in ("fixed", "vss"):
            raise ValueError("estimator must be 'fixed' or 'vss'")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if self.iterations < 1000:
            raise ValueError("iterations must be >= 1000")
        if self.preroll is not None and self.preroll < 0:
            raise ValueError("preroll must be non-negative")
        if not 0.0 <= self.discard_fraction < 1.0:
            raise ValueError("discard_fraction must lie in [0, 1)")
        if self.metric not in ("excess", "error"):
            raise ValueError("metric must be 'excess' or 'error'")
        if self.scheme not in ("centered", "backward"):
            raise ValueError("scheme must be 'centered' or 'backward'")
        if len(self.sweep) > 2:
            raise ValueError("at most two sweep axes are supported")
        for k in self.pinned:
            if k not in STEP_AXES:
                raise ValueError(f"unknown pinned step size {k!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def vss_config(self, params: SystemParams | None = None) -> VssConfig:
        """VSS settings with the noise handling resolved for ``params``."""
        p = self.params if params is None else params
        if self.noise_mode == "known":
            return self.vss.replace(noise_mode="known", noise_power=p.sigma2_v)
        if self.noise_mode == "stale":
            return self.vss.replace(noise_mode="known", noise_power=p.noise_floor)
        floor = self.vss.noise_floor if self.vss.noise_floor is not None else p.noise_floor
        return self.vss.replace(noise_mode="estimate", noise_floor=floor)


# -- configuration file -------------------------------------------------------

_SECTIONS = {
    "system": {f.name for f in dataclasses.fields(SystemParams)},
    "estimator": {"kind", "mu_w", "mu_eps", "mu_eta", "pin_mu_w", "pin_mu_eps", "pin_mu_eta", "scheme"},
    "vss": {f.name for f in dataclasses.fields(VssConfig)} | {"mode"},
    "experiment": {
        "replicas", "iterations", "preroll", "discard_fraction", "seed", "warm_start", "metric",
        "skip_unstable", "workers", "output", "full_scale",
    },
    "sweep": {"axis"},
}


def _line_of(text: str, section: str, key: str | None) -> int | None:
    """Best-effort line number of ``key`` inside ``[section]``."""
    lines = text.splitlines()
    current = None
    for i, raw in enumerate(lines, 1):
        s = raw.strip()
        m = re.match(r"^\[\[?\s*([A-Za-z0-9_.]+)\s*\]\]?", s)
        if m:
            current = m.group(1).split(".")[0]
            if key is None and current == section:
                return i
            continue
        if current == section and key is not None and re.match(rf"^{re.escape(key)}\s*=", s):
            return i
    return None


def _err(text: str, source: str, section: str, key: str | None, msg: str) -> ConfigError:
    line = _line_of(text, section, key)
    where = f"{source}:{line}" if line else source
    field_name = f"[{section}]" + (f" {key}" if key else "")
    return ConfigError(f"{where}: {field_name}: {msg}")


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from TOML text.

    Recognised sections are ``[system]`` (fields of :class:`SystemParams`),
    ``[estimator]``, ``[vss]``, ``[experiment]`` and ``[[sweep.axis]]``
    tables with ``name`` plus either ``values`` or ``start``/``stop``/``num``.
    Errors carry the file name, line and offending field.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: TOML syntax error: {exc}") from exc

    for section, body in doc.items():
        if section not in _SECTIONS:
            raise _err(text, source, section, None, "unknown section")
        if not isinstance(body, dict):
            raise _err(text, source, section, None, "expected a table")
        for key in body:
            if key not in _SECTIONS[section]:
                raise _err(text, source, section, key, "unknown field")

    def build(section: str, fn):
        try:
            return fn()
        except (TypeError, ValueError) as exc:
            bad = None
            for key in doc.get(section, {}):
                if re.search(rf"\b{re.escape(key)}\b", str(exc)):
                    bad = key
                    break
            raise _err(text, source, section, bad, str(exc)) from exc

    sysd = dict(doc.get("system", {}))
    if "mean_response" in sysd:
        sysd["mean_response"] = np.array([complex(*v) if isinstance(v, list) else complex(v) for v in sysd["mean_response"]])
    params = build("system", lambda: SystemParams(**sysd))

    est = doc.get("estimator", {})
    kind = est.get("kind", "fixed")
    scheme = est.get("scheme", "centered")
    given = {k: est[k] for k in STEP_AXES if k in est}
    pinned = {k[4:]: est[k] for k in ("pin_mu_w", "pin_mu_eps", "pin_mu_eta") if k in est}
    steps = None
    if given:
        if "mu_w" not in given:
            raise _err(text, source, "estimator", None, "mu_w is required when step sizes are given")
        steps = build("estimator", lambda: StepSizes(**given))

    vssd = dict(doc.get("vss", {}))
    mode = vssd.pop("mode", "known")
    for k in ("mu_w_bounds", "mu_eps_bounds", "mu_eta_bounds"):
        if k in vssd:
            vssd[k] = tuple(vssd[k])
    vss = build("vss", lambda: VssConfig(**{k: v for k, v in vssd.items() if k != "noise_mode"}))

    exp = dict(doc.get("experiment", {}))
    if exp.pop("full_scale", False):
        exp["iterations"] = 1_000_000

    axes = []
    for i, ax in enumerate(doc.get("sweep", {}).get("axis", [])):
        name = ax.get("name")
        if name not in STEP_AXES and name not in SYSTEM_AXES:
            raise _err(text, source, "sweep", "name", f"axis {i}: unknown sweep parameter {name!r}")
        try:
            if "values" in ax:
                axes.append(SweepAxis(name, tuple(ax["values"])))
            else:
                axes.append(SweepAxis.logspace(name, ax["start"], ax["stop"], ax["num"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise _err(text, source, "sweep", None, f"axis {i}: {exc}") from exc

    return build("experiment", lambda: ExperimentConfig(
        params=params,
        estimator=kind,
        steps=steps,
        pinned=pinned,
        vss=vss,
        noise_mode=mode,
        sweep=tuple(axes),
        scheme=scheme,
        **exp,
    ))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration: {exc.strerror or exc}") from exc
    return parse_config(text, str(path))


# -- Monte Carlo -------------------------------------------------------------


def resolve_steps(config: ExperimentConfig, params: SystemParams | None = None) -> tuple[StepSizes, SolverResult | None]:
    """Configured step sizes, or the solver optimum when none are given."""
    p = config.params if params is None else params
    if config.steps is not None:
        return config.steps, None
    res = solve_optimal_step_sizes(p, fixed=config.pinned)
    return res.steps, res


def auto_preroll(config: ExperimentConfig, steps: StepSizes | None = None) -> int:
    """Samples discarded before measurement.

    At least 50 000.  Fixed-step runs cover ten channel time constants
    ``10 / mu_w`` and ten periods of each offset loop, whose natural
    frequency is ``sqrt(mu G sigma_x^2)`` because the offset integrates into
    phase or time (capped at 10^6).  VSS runs add the time the error-power
    average needs to decay from its unit start to the noise floor plus five
    of its time constants.
    """
    if config.preroll is not None:
        return int(config.preroll)
    base = 50_000
    if config.estimator == "vss":
        tau = 1.0 / (1.0 - config.vss.lambda_e)
        floor = max(config.params.sigma2_v, 1e-300)
        return int(max(base, math.ceil(tau * max(math.log(1.0 / floor), 0.0) + 5 * tau)))
    if steps is None or steps.mu_w <= 0:
        return base
    need = 10.0 / steps.mu_w
    gain = config.params.channel_gain * config.params.signal_variance
    for mu in (steps.mu_eps, steps.mu_eta):
        if mu > 0 and gain > 0:
            need = max(need, 10.0 / math.sqrt(mu * gain))
    return int(min(max(base, math.ceil(need)), 1_000_000))


@dataclass(frozen=True)
class MonteCarloResult:
    """Replica statistics of one configuration.

    ``values`` holds per-replica EMSE with ``nan`` for diverged replicas.
    ``step_sizes`` is the mean step-size triple used (for VSS the average
    emitted values over the measured window).
    """

    mean: float
    stderr: float
    values: np.ndarray
    diverged: int
    steps: StepSizes
    prediction: EmsePrediction | None
    runtime: float

    @property
    def mean_db(self) -> float:
        return to_db(self.mean)

    @property
    def stderr_db(self) -> float:
        if not (self.mean > 0 and math.isfinite(self.stderr)):
            return math.nan
        return 10.0 / math.log(10.0) * self.stderr / self.mean


def _replica(config: ExperimentConfig, params: SystemParams, steps: StepSizes, k: int, preroll: int):
    """One replica: returns ``(emse, mean_steps)`` or ``(nan, None)`` on divergence."""
    n = preroll + config.iterations
    rng = rng_stream(config.seed, k)
    world = simulate_world(params, n, rng)
    state = initial_state(params, world, config.warm_start)
    try:
        if config.estimator == "fixed":
            trace = run_folms_on(world, params, steps, state, scheme=config.scheme)
        else:
            trace = run_vss_on(world, params, config.vss_config(params), state, scheme=config.scheme)
    except DivergenceError:
        return math.nan, None
    start = preroll + int(config.discard_fraction * config.iterations)
    if config.metric == "excess":
        tail = trace.excess_error[start:]
        val = float(np.mean(tail.real ** 2 + tail.imag ** 2))
    else:
        tail = trace.error[start:]
        val = float(np.mean(tail.real ** 2 + tail.imag ** 2) - params.sigma2_v)
    used = steps.as_tuple() if trace.step_sizes is None else tuple(np.mean(trace.step_sizes[start:], axis=0))
    return val, used


def _replica_job(args):
    return _replica(*args)


def _map(config: ExperimentConfig, jobs: list) -> list:
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(_replica_job, jobs))
    return [_replica_job(j) for j in jobs]


def run_monte_carlo(
    config: ExperimentConfig,
    params: SystemParams | None = None,
    steps: StepSizes | None = None,
) -> MonteCarloResult:
    """Average the steady-state EMSE over ``config.replicas`` runs.

    Diverged replicas are excluded from the mean and counted.

    Raises
    ------
    ExperimentFailed
        If every replica diverged.
    """
    p = config.params if params is None else params
    t0 = time.perf_counter()
    if steps is None:
        steps, _ = resolve_steps(config, p)
    try:
        pred = predict_emse_complete(p, steps) if steps.mu_w > 0 else None
    except ValueError:
        pred = None
    preroll = auto_preroll(config.replace(params=p), steps)
    jobs = [(config, p, steps, k, preroll) for k in range(config.replicas)]
    out = _map(config, jobs)
    values = np.array([v for v, _ in out], dtype=np.float64)
    ok = np.isfinite(values)
    diverged = int((~ok).sum())
    if diverged == len(values):
        raise ExperimentFailed(f"all {len(values)} replicas diverged")
    good = values[ok]
    mean = float(np.mean(good))
    stderr = float(np.std(good, ddof=1) / math.sqrt(good.size)) if good.size > 1 else math.nan
    used = np.mean([u for v, u in out if u is not None], axis=0)
    used_steps = steps if config.estimator == "fixed" else StepSizes(*used)
    return MonteCarloResult(mean, stderr, values, diverged, used_steps, pred, time.perf_counter() - t0)


# -- sweeps ----------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    swept: tuple[float, ...]
    steps: StepSizes
    zeta_pred: float
    zeta_sim: float
    stderr_db: float
    diverged: int
    gamma: float
    runtime: float

    def csv_values(self) -> list:
        return [
            *self.swept,
            self.steps.mu_w,
            self.steps.mu_eps,
            self.steps.mu_eta,
            to_db(self.zeta_pred),
            to_db(self.zeta_sim) if math.isfinite(self.zeta_sim) else math.nan,
            self.stderr_db,
            self.diverged,
            self.gamma,
            round(self.runtime, 3),
        ]


@dataclass(frozen=True)
class SweepResult:
    axes: tuple[str, ...]
    rows: tuple[SweepRow, ...]
    optimum: SolverResult | None = None

    def columns(self) -> tuple[str, ...]:
        return tuple(f"swept_param_{i + 1}" for i in range(len(self.axes))) + CSV_COLUMNS

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for row in self.rows:
            w.writerow([_fmt(v) for v in row.csv_values()])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _grid(axes: Sequence[SweepAxis]):
    if len(axes) == 1:
        return [(v,) for v in axes[0].values]
    return [(a, b) for a in axes[0].values for b in axes[1].values]


def _point(config: ExperimentConfig, params: SystemParams, steps: StepSizes, swept: tuple, pred_steps: StepSizes | None = None):
    t0 = time.perf_counter()
    ref = pred_steps if pred_steps is not None else steps
    pred = predict_emse_complete(params, ref)
    if config.estimator == "fixed" and config.skip_unstable and not pred.gamma > 0:
        return SweepRow(swept, steps, pred.total, math.nan, math.nan, config.replicas, pred.gamma,
                        time.perf_counter() - t0)
    try:
        mc = run_monte_carlo(config, params, steps)
    except ExperimentFailed:
        return SweepRow(swept, steps, pred.total, math.nan, math.nan, config.replicas, pred.gamma,
                        time.perf_counter() - t0)
    return SweepRow(swept, mc.steps, pred.total, mc.mean, mc.stderr_db, mc.diverged, pred.gamma,
                    time.perf_counter() - t0)


def sweep_step_sizes(config: ExperimentConfig) -> SweepResult:
    """Simulate and predict over a 1-D or 2-D grid of step sizes.

    Coordinates not swept come from ``config.steps`` or, when absent, from
    the solver optimum (which is also attached to the result).  Points with
    ``gamma <= 0`` are recorded as fully diverged without simulation when
    ``config.skip_unstable`` is set.
    """
    if not config.sweep:
        raise ValueError("configuration has no sweep axes")
    names = tuple(a.name for a in config.sweep)
    if any(n not in STEP_AXES for n in names):
        raise ValueError(f"step-size sweeps take axes from {STEP_AXES}")
    if len(set(names)) != len(names):
        raise ValueError("sweep axes must differ")
    if config.estimator != "fixed":
        raise ValueError("step-size sweeps need the fixed-step estimator")
    optimum = None
    try:
        base, optimum = resolve_steps(config)
    except InfeasibleError:
        if config.steps is None:
            raise
        base = config.steps
    if optimum is None:
        try:
            optimum = solve_optimal_step_sizes(config.params, fixed=config.pinned)
        except InfeasibleError:
            optimum = None
    rows = []
    for swept in _grid(config.sweep):
        changes = dict(zip(names, swept))
        steps = dataclasses.replace(base, **changes)
        rows.append(_point(config, config.params, steps, swept))
    return SweepResult(names, tuple(rows), optimum)


def sweep_system_params(config: ExperimentConfig) -> SweepResult:
    """Simulate over a grid of system or VSS parameters.

    Each point uses solver-optimal step sizes for its parameters (fixed
    estimator) or runs VSS-FO-LMS with the configured noise handling; the
    prediction column is always the closed form at the solver optimum.
    """
    if not config.sweep:
        raise ValueError("configuration has no sweep axes")
    names = tuple(a.name for a in config.sweep)
    if any(n not in SYSTEM_AXES for n in names):
        raise ValueError(f"system sweeps take axes from {sorted(SYSTEM_AXES)}")
    rows = []
    for swept in _grid(config.sweep):
        pch, vch = {}, {}
        for n, v in zip(names, swept):
            target, attr = SYSTEM_AXES[n]
            if attr == "filter_taps":
                v = int(round(v))
            (pch if target == "params" else vch)[attr] = v
        params = config.params.replace(**pch)
        cfg = config.replace(params=params, vss=config.vss.replace(**vch)) if vch else config.replace(params=params)
        opt = solve_optimal_step_sizes(params, fixed=config.pinned)
        steps = config.steps if (config.steps is not None and config.estimator == "fixed") else opt.steps
        rows.append(_point(cfg, params, steps, swept, pred_steps=opt.steps))
    return SweepResult(names, tuple(rows), None)


def write_csv(result: SweepResult, path) -> None:
    """Write atomically: the file appears only once fully written."""
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    try:
        tmp.write_text(result.to_csv())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def convergence_time(excess_power: np.ndarray, window: int = 5000, margin_db: float = 3.0) -> int:
    """First sample index after which the windowed EMSE stays within ``margin_db`` of its final level.

    The final level is the mean over the last quarter of the record.
    """
    x = np.asarray(excess_power, dtype=np.float64)
    nwin = x.size // window
    if nwin < 2:
        raise ValueError("record too short for the window")
    blocks = x[: nwin * window].reshape(nwin, window).mean(axis=1)
    final = float(np.mean(x[-max(x.size // 4, window):]))
    limit = final * 10.0 ** (margin_db / 10.0)
    above = np.nonzero(blocks > limit)[0]
    if above.size == 0:
        return 0
    return int((above[-1] + 1) * window)


def seed_from_env(default: int) -> int:
    """Master seed, overridden by the ``FOLMS_SEED`` environment variable."""
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw, 0)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from exc
