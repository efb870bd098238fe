"""VSS-FO-LMS: FO-LMS with self-adjusting step sizes.

Per sample the estimator tracks, with exponentially weighted averages, the
error power, the regressor power, the means of the two frequency-offset
gradients and (optionally) the regressor/error cross-correlation used to
estimate the measurement-noise power.  From these it sets

* ``mu_w = (1 - sigma_v / sigma_e) / (y^H y + delta)`` (zero when the error
  power does not exceed the noise power),
* ``mu = cbrt(c mu_w (D mu_bar)^2 / (|w|^4 sigma_v^2 sigma_y^2 (2 mu_w sigma_y^2 + 1)))``
  with ``c = 8`` for the carrier and ``c = 1`` for the sampling offset,

clamps all three and applies the usual FO-LMS updates.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .folms import (
    DivergenceError,
    FilterState,
    RunTrace,
    _buffers,
    _check_state,
    divergence_limit,
    initial_state,
    scheme_code,
)
from .sigproc import DEFAULT_INTERPOLATOR, Interpolator, KnownSignal, rng_stream
from .world import SystemParams, WorldTrace, simulate_world

__all__ = [
    "NOISE_MODES",
    "VssConfig",
    "VssState",
    "compute_mu_w",
    "compute_mu_fo",
    "estimate_noise_variance",
    "ewma",
    "vss_step",
    "run_vss",
    "run_vss_on",
]

NOISE_MODES = ("known", "estimate")


@dataclass(frozen=True)
class VssConfig:
    """Forgetting factors, clamps and noise handling of VSS-FO-LMS.

    ``noise_mode="known"`` uses ``noise_power`` as the measurement-noise
    power throughout (pass the receiver floor alone to model a stale
    calibration).  ``noise_mode="estimate"`` uses the cross-correlation
    estimator, floored at ``noise_floor`` when that is not ``None``.
    """

    lambda_e: float = 0.9999
    lambda_y: float = 0.99
    lambda_eps: float = 0.9999
    lambda_eta: float = 0.9999
    lambda_r: float = 0.99
    mu_w_bounds: tuple[float, float] = (1e-5, 1e-1)
    mu_eps_bounds: tuple[float, float] = (1e-9, 1e-3)
    mu_eta_bounds: tuple[float, float] = (1e-9, 1e-3)
    noise_mode: str = "known"
    noise_power: float = 1e-6
    noise_floor: float | None = None
    delta_factor: float = 1e-3
    regressor_power_epsilon: float = 1e-12

    def __post_init__(self):
        for name in ("lambda_e", "lambda_y", "lambda_eps", "lambda_eta", "lambda_r"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        for name in ("mu_w_bounds", "mu_eps_bounds", "mu_eta_bounds"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 0 <= min <= max")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if self.noise_power < 0 or (self.noise_floor is not None and self.noise_floor < 0):
            raise ValueError("noise powers must be non-negative")
        if not self.delta_factor > 0:
            raise ValueError("delta_factor must be positive")

    @classmethod
    def for_params(cls, params: SystemParams, mode: str = "known", **changes) -> "VssConfig":
        """Configuration for a link described by ``params``.

        ``mode`` is ``"known"`` (true total noise power), ``"stale"`` (only
        the receiver floor, ignoring any background signal) or
        ``"estimate"`` (run-time estimate lower-bounded by the floor).
        """
        if mode == "known":
            base = cls(noise_mode="known", noise_power=params.sigma2_v)
        elif mode == "stale":
            base = cls(noise_mode="known", noise_power=params.noise_floor)
        elif mode == "estimate":
            base = cls(noise_mode="estimate", noise_power=0.0, noise_floor=params.noise_floor)
        else:
            raise ValueError(f"unknown noise mode {mode!r}")
        return dataclasses.replace(base, **changes)

    def replace(self, **changes) -> "VssConfig":
        return dataclasses.replace(self, **changes)

    def _array(self) -> np.ndarray:
        c = np.zeros(kern.C_SIZE)
        c[kern.C_LE] = self.lambda_e
        c[kern.C_LY] = self.lambda_y
        c[kern.C_LEPS] = self.lambda_eps
        c[kern.C_LETA] = self.lambda_eta
        c[kern.C_LR] = self.lambda_r
        c[kern.C_WMIN], c[kern.C_WMAX] = self.mu_w_bounds
        c[kern.C_EMIN], c[kern.C_EMAX] = self.mu_eps_bounds
        c[kern.C_HMIN], c[kern.C_HMAX] = self.mu_eta_bounds
        c[kern.C_KNOWN] = 1.0 if self.noise_mode == "known" else 0.0
        c[kern.C_NOISE] = self.noise_power
        c[kern.C_FLOOR] = 0.0 if self.noise_floor is None else self.noise_floor
        c[kern.C_DELTA] = self.delta_factor
        c[kern.C_SY2EPS] = self.regressor_power_epsilon
        return c


@dataclass(frozen=True)
class VssState:
    """Running statistics of VSS-FO-LMS.

    ``history_eps``/``history_eta`` are ring buffers of the last ``M`` emitted
    carrier/sampling step sizes; ``position`` is the slot written next, so
    the chronological order starts at ``position``.
    """

    error_power: float
    regressor_power: float
    grad_mean_eps: float
    grad_mean_eta: float
    cross_correlation: np.ndarray
    noise_estimate: float
    history_eps: np.ndarray
    history_eta: np.ndarray
    position: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cross_correlation", np.array(self.cross_correlation, dtype=np.complex128))
        object.__setattr__(self, "history_eps", np.array(self.history_eps, dtype=np.float64))
        object.__setattr__(self, "history_eta", np.array(self.history_eta, dtype=np.float64))

    @classmethod
    def initial(cls, m: int, config: VssConfig) -> "VssState":
        """``sigma_e^2 = 1``, every other average zero, histories at the clamp minima."""
        return cls(
            error_power=1.0,
            regressor_power=0.0,
            grad_mean_eps=0.0,
            grad_mean_eta=0.0,
            cross_correlation=np.zeros(m, np.complex128),
            noise_estimate=config.noise_power if config.noise_mode == "known" else 0.0,
            history_eps=np.full(m, config.mu_eps_bounds[0]),
            history_eta=np.full(m, config.mu_eta_bounds[0]),
        )

    @property
    def mean_mu_eps(self) -> float:
        return float(np.mean(self.history_eps))

    @property
    def mean_mu_eta(self) -> float:
        return float(np.mean(self.history_eta))

    def _arrays(self):
        vs = np.zeros(kern.V_SIZE)
        vs[kern.V_SE2] = self.error_power
        vs[kern.V_SY2] = self.regressor_power
        vs[kern.V_DEPS] = self.grad_mean_eps
        vs[kern.V_DETA] = self.grad_mean_eta
        vs[kern.V_NOISE] = self.noise_estimate
        vs[kern.V_POS] = self.position
        return vs, self.cross_correlation.copy(), self.history_eps.copy(), self.history_eta.copy()

    @classmethod
    def _from(cls, vs, r, he, hh) -> "VssState":
        return cls(
            float(vs[kern.V_SE2]),
            float(vs[kern.V_SY2]),
            float(vs[kern.V_DEPS]),
            float(vs[kern.V_DETA]),
            r.copy(),
            float(vs[kern.V_NOISE]),
            he.copy(),
            hh.copy(),
            int(vs[kern.V_POS]),
        )


# -- scalar rules -------------------------------------------------------------


def ewma(previous: float, sample, lam: float):
    """``lam * previous + (1 - lam) * sample``, evaluated incrementally.

    The form ``previous + (1 - lam) * (sample - previous)`` leaves a value
    that equals the sample exactly unchanged.
    """
    return previous + (1.0 - lam) * (sample - previous)


def compute_mu_w(error_power: float, noise_power: float, regressor_energy: float, delta: float = 0.0) -> float:
    """Nonparametric channel step size; zero when ``error_power <= noise_power``."""
    if error_power < 0 or noise_power < 0 or regressor_energy < 0 or delta < 0:
        raise ValueError("powers must be non-negative")
    return float(kern.mu_w_rule(float(error_power), float(noise_power), float(regressor_energy), float(delta)))


def compute_mu_fo(
    kind: str,
    mu_w: float,
    grad_mean: float,
    mu_mean: float,
    channel_norm2: float,
    noise_power: float,
    regressor_power: float,
    minimum: float = 0.0,
) -> float:
    """Carrier (``c = 8``) or sampling (``c = 1``) cube-root step-size rule.

    Returns ``minimum`` when the denominator vanishes.
    """
    if kind == "carrier":
        c = 8.0
    elif kind == "sampling":
        c = 1.0
    else:
        raise ValueError(f"unknown kind {kind!r}")
    den = channel_norm2 ** 2 * noise_power * regressor_power * (2.0 * mu_w * regressor_power + 1.0)
    if not den > 0:
        return float(minimum)
    return float(kern.mu_fo_rule(c, float(mu_w), float(grad_mean), float(mu_mean), float(channel_norm2),
                                 float(noise_power), float(regressor_power)))


def estimate_noise_variance(
    error_power: float,
    regressor_power: float,
    cross_correlation: np.ndarray,
    floor: float | None = None,
    epsilon: float = 1e-12,
) -> float:
    """``sigma_e^2 - |R_ye|^2 / sigma_y^2``, floored at zero (and at ``floor``).

    While ``regressor_power <= epsilon`` the correction is skipped and the
    error power is returned.
    """
    r = np.asarray(cross_correlation)
    if regressor_power > epsilon:
        est = error_power - float(np.vdot(r, r).real) / regressor_power
    else:
        est = error_power
    est = max(est, 0.0)
    if floor is not None:
        est = max(est, floor)
    return float(est)


# -- estimator ------------------------------------------------------------------


def vss_step(
    state: FilterState,
    vss: VssState,
    known: KnownSignal,
    d: complex,
    config: VssConfig,
    scheme: str = "centered",
    interpolator: Interpolator = DEFAULT_INTERPOLATOR,
):
    """One VSS-FO-LMS iteration.

    Returns ``(new_state, new_vss, e, (mu_w, mu_eps, mu_eta))``.
    """
    K = interpolator.kernel_half_width
    _check_state(known, state, K)
    w = state.channel.copy()
    if w.shape[0] != vss.cross_correlation.shape[0]:
        raise ValueError("filter and VSS state lengths differ")
    st = state._scalars()
    vs, r, he, hh = vss._arrays()
    y, yn, yp, taps = _buffers(w.shape[0], K)
    mus = np.empty(4)
    e = kern.vss_update(known.samples, interpolator.table, K, known.oversampling_factor, complex(d), w, st,
                        vs, r, he, hh, config._array(), scheme_code(scheme), y, yn, yp, taps, mus)
    return FilterState._from(w, st), VssState._from(vs, r, he, hh), complex(e), (float(mus[0]), float(mus[1]), float(mus[2]))


def run_vss_on(
    world: WorldTrace,
    params: SystemParams,
    config: VssConfig,
    state: FilterState | None = None,
    vss: VssState | None = None,
    *,
    scheme: str = "centered",
    interpolator: Interpolator = DEFAULT_INTERPOLATOR,
) -> RunTrace:
    """Run VSS-FO-LMS against a simulated world.

    The returned trace carries ``step_sizes`` with columns
    ``(mu_w, mu_eps, mu_eta)`` and the per-sample noise-power estimate.
    """
    K = interpolator.kernel_half_width
    if state is None:
        state = initial_state(params, world)
    if vss is None:
        vss = VssState.initial(state.channel.shape[0], config)
    _check_state(world.known, state, K)
    n = len(world)
    w = state.channel.copy()
    st = state._scalars()
    vs, r, he, hh = vss._arrays()
    e = np.zeros(n, np.complex128)
    cfo = np.zeros(n)
    sfo = np.zeros(n)
    mu = np.zeros((n, 4))
    try:
        done = kern.vss_run(world.known.samples, interpolator.table, K, world.known.oversampling_factor,
                            world.received, w, st, vs, r, he, hh, config._array(), scheme_code(scheme),
                            divergence_limit(params), e, cfo, sfo, mu)
    except IndexError as exc:
        raise DivergenceError(f"estimator time left the known signal: {exc}") from exc
    trace = RunTrace(
        error=e,
        excess_error=e - world.noise,
        cfo_error=world.cfo - cfo,
        sfo_error=world.sfo - sfo,
        step_sizes=mu[:, :3].copy(),
        noise_estimate=mu[:, 3].copy(),
        final_state=FilterState._from(w, st),
        noise_power=params.sigma2_v,
    )
    if done < n:
        raise DivergenceError(f"VSS-FO-LMS diverged at sample {done}", done, trace)
    return trace


def run_vss(
    params: SystemParams,
    n_iter: int,
    seed=0,
    config: VssConfig | None = None,
    *,
    warm_start: bool = False,
    scheme: str = "centered",
    interpolator: Interpolator = DEFAULT_INTERPOLATOR,
) -> RunTrace:
    """Co-simulate the world and VSS-FO-LMS; ``config`` defaults to known noise."""
    if int(n_iter) <= 0:
        raise ValueError("n_iter must be positive")
    if config is None:
        config = VssConfig.for_params(params, "known")
    rng = seed if isinstance(seed, np.random.Generator) else rng_stream(seed)
    world = simulate_world(params, int(n_iter), rng, interpolator=interpolator)
    state = initial_state(params, world, warm_start)
    return run_vss_on(world, params, config, state, scheme=scheme, interpolator=interpolator)
