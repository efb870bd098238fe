"""Ground-truth simulation: AR(1) channel, three-state clocks, noise, d(n).

Two sets of units coexist.  :class:`SystemParams` stores the physical
parameters as they are quoted in experiment configurations (frequency
offsets in rad/s and Hz, drifts per sample, nominal sampling period
``T_s`` in seconds).  The clock state objects are sample-normalised: time
in samples, carrier frequency offset in rad/sample and the sampling
frequency offset as a dimensionless fraction.  The conversion is done in
:meth:`SystemParams.carrier_state` and :meth:`SystemParams.sampling_state`.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .sigproc import DEFAULT_INTERPOLATOR, Interpolator, KnownSignal, generate_known_signal, regressor_at, sample_at_many

__all__ = [
    "CarrierClockState",
    "SamplingClockState",
    "ChannelState",
    "NoiseModel",
    "SystemParams",
    "WorldTrace",
    "complex_gaussian",
    "draw_mean_response",
    "step_carrier",
    "step_sampling",
    "step_channel",
    "emit_received",
    "carrier_trajectory",
    "sampling_trajectory",
    "channel_trajectory",
    "simulate_world",
]


def complex_gaussian(rng: np.random.Generator, shape, power: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian draws with ``E|z|^2 = power``."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    z = rng.standard_normal(shape + (2,))
    return np.sqrt(power / 2.0) * (z[..., 0] + 1j * z[..., 1])


@dataclass(frozen=True)
class CarrierClockState:
    phase: float = 0.0
    frequency_offset: float = 0.0
    linear_drift: float = 0.0
    phase_noise_variance: float = 0.0
    freq_walk_variance: float = 0.0


@dataclass(frozen=True)
class SamplingClockState:
    time: float = 0.0
    frequency_offset: float = 0.0
    linear_drift: float = 0.0
    jitter_variance: float = 0.0
    freq_walk_variance: float = 0.0


@dataclass(frozen=True)
class ChannelState:
    mean_response: np.ndarray
    perturbation: np.ndarray
    ar_coefficient: float = 0.99999
    perturbation_variance: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise ValueError("ar_coefficient must lie in [0, 1)")
        if np.shape(self.mean_response) != np.shape(self.perturbation):
            raise ValueError("mean_response and perturbation must have the same shape")

    @property
    def response(self) -> np.ndarray:
        return self.mean_response + self.perturbation


@dataclass(frozen=True)
class NoiseModel:
    receiver_floor: float = 1e-6
    background_power: float = 0.0

    def __post_init__(self):
        if self.receiver_floor < 0 or self.background_power < 0:
            raise ValueError("noise powers must be non-negative")

    @property
    def total(self) -> float:
        return self.receiver_floor + self.background_power


@dataclass(frozen=True)
class SystemParams:
    """Statistical description of one simulated link.

    Defaults reproduce the baseline link of the steady-state experiments:
    unit-power half-band known signal, 5-tap unit-gain channel with
    ``alpha = 0.99999``, -60 dBW receiver noise, 100 Hz carrier offset and a
    1 Hz sampling offset at 1 MHz.  All time-variation parameters are zero.
    """

    channel_taps: int = 5
    filter_taps: int | None = None
    signal_variance: float = 1.0
    oversampling_factor: int = 2
    sample_period: float = 1e-6
    channel_gain: float = 1.0
    ar_coefficient: float = 0.99999
    sigma2_q: float = 0.0
    sigma2_phi: float = 0.0
    sigma2_eps: float = 0.0
    kappa: float = 0.0
    sigma2_beta: float = 0.0
    sigma2_eta: float = 0.0
    rho: float = 0.0
    noise_floor: float = 1e-6
    background_power: float = 0.0
    cfo_hz: float = 100.0
    sfo_hz: float = 1.0
    mean_response: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.sample_period <= 0:
            raise ValueError("sample_period must be positive")
        if self.channel_taps < 1 or (self.filter_taps is not None and self.filter_taps < 1):
            raise ValueError("tap counts must be >= 1")
        if self.signal_variance <= 0 or self.channel_gain < 0 or self.oversampling_factor < 1:
            raise ValueError("signal_variance, channel_gain and oversampling_factor out of range")
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise ValueError("ar_coefficient must lie in [0, 1)")
        for name in ("sigma2_q", "sigma2_phi", "sigma2_eps", "sigma2_beta", "sigma2_eta", "noise_floor", "background_power"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.mean_response is not None:
            w = np.asarray(self.mean_response, dtype=np.complex128)
            if w.shape != (self.channel_taps,):
                raise ValueError("mean_response length must equal channel_taps")
            if not np.isclose(np.vdot(w, w).real, self.channel_gain, rtol=1e-9, atol=1e-15):
                raise ValueError("channel_gain must equal the squared norm of mean_response")
            object.__setattr__(self, "mean_response", w)

    @property
    def M(self) -> int:
        """Filter length used by the estimator."""
        return self.channel_taps if self.filter_taps is None else self.filter_taps

    @property
    def sigma2_v(self) -> float:
        return self.noise_floor + self.background_power

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)

    def noise_model(self) -> NoiseModel:
        return NoiseModel(self.noise_floor, self.background_power)

    def carrier_state(self, phase: float = 0.0) -> CarrierClockState:
        ts = self.sample_period
        return CarrierClockState(
            phase=phase,
            frequency_offset=2.0 * np.pi * self.cfo_hz * ts,
            linear_drift=self.kappa * ts,
            phase_noise_variance=self.sigma2_phi,
            freq_walk_variance=self.sigma2_eps * ts * ts,
        )

    def sampling_state(self, time: float = 0.0) -> SamplingClockState:
        ts = self.sample_period
        return SamplingClockState(
            time=time,
            frequency_offset=self.sfo_hz * ts,
            linear_drift=self.rho * ts,
            jitter_variance=self.sigma2_beta / ts,
            freq_walk_variance=self.sigma2_eta * ts * ts,
        )

    def channel_state(self, rng: np.random.Generator) -> ChannelState:
        w = self.mean_response if self.mean_response is not None else draw_mean_response(self.channel_taps, self.channel_gain, rng)
        return ChannelState(w, np.zeros_like(w), self.ar_coefficient, self.sigma2_q)


def draw_mean_response(m: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    """Complex Gaussian taps rescaled to squared norm ``gain``."""
    w = complex_gaussian(rng, m)
    return w * np.sqrt(gain / np.vdot(w, w).real)


# -- single steps --------------------------------------------------------------


def step_carrier(state: CarrierClockState, rng: np.random.Generator) -> CarrierClockState:
    z = rng.standard_normal(2)
    return dataclasses.replace(
        state,
        phase=state.phase + state.frequency_offset + np.sqrt(state.phase_noise_variance) * z[0],
        frequency_offset=state.frequency_offset + np.sqrt(state.freq_walk_variance) * z[1] + state.linear_drift,
    )


def step_sampling(state: SamplingClockState, rng: np.random.Generator) -> SamplingClockState:
    z = rng.standard_normal(2)
    return dataclasses.replace(
        state,
        time=state.time + (1.0 + state.frequency_offset) + np.sqrt(state.jitter_variance) * z[0],
        frequency_offset=state.frequency_offset + np.sqrt(state.freq_walk_variance) * z[1] + state.linear_drift,
    )


def step_channel(state: ChannelState, rng: np.random.Generator) -> ChannelState:
    q = complex_gaussian(rng, np.shape(state.perturbation), state.perturbation_variance)
    return dataclasses.replace(state, perturbation=state.ar_coefficient * state.perturbation + q)


def emit_received(
    known: KnownSignal,
    channel: ChannelState,
    carrier: CarrierClockState,
    sampling: SamplingClockState,
    noise: NoiseModel,
    rng: np.random.Generator,
    interpolator: Interpolator = DEFAULT_INTERPOLATOR,
) -> complex:
    """One received sample ``d = w_n^H y(t) e^{j phi} + g + s``."""
    w = channel.response
    L = known.oversampling_factor
    y = regressor_at(known, L * sampling.time, w.shape[0], interpolator, stride=L)
    z = rng.standard_normal(4)
    g = np.sqrt(noise.receiver_floor / 2.0) * (z[0] + 1j * z[1])
    s = np.sqrt(noise.background_power / 2.0) * (z[2] + 1j * z[3])
    return complex(np.vdot(w, y) * np.exp(1j * carrier.phase) + g + s)


# -- vectorised trajectories ---------------------------------------------------


def carrier_trajectory(state: CarrierClockState, n: int, rng: np.random.Generator):
    """Phases and frequency offsets for ``n`` consecutive steps.

    Consumes the generator exactly like ``n - 1`` calls of
    :func:`step_carrier`.
    """
    z = rng.standard_normal((max(n - 1, 0), 2))
    eps = np.empty(n)
    eps[0] = state.frequency_offset
    eps[1:] = state.frequency_offset + np.cumsum(np.sqrt(state.freq_walk_variance) * z[:, 1] + state.linear_drift)
    phase = np.empty(n)
    phase[0] = state.phase
    phase[1:] = state.phase + np.cumsum(eps[:-1] + np.sqrt(state.phase_noise_variance) * z[:, 0])
    return phase, eps


def sampling_trajectory(state: SamplingClockState, n: int, rng: np.random.Generator):
    """True sampling times and fractional offsets for ``n`` steps."""
    z = rng.standard_normal((max(n - 1, 0), 2))
    eta = np.empty(n)
    eta[0] = state.frequency_offset
    eta[1:] = state.frequency_offset + np.cumsum(np.sqrt(state.freq_walk_variance) * z[:, 1] + state.linear_drift)
    t = np.empty(n)
    t[0] = state.time
    t[1:] = state.time + np.cumsum((1.0 + eta[:-1]) + np.sqrt(state.jitter_variance) * z[:, 0])
    return t, eta


def channel_trajectory(state: ChannelState, n: int, rng: np.random.Generator) -> np.ndarray:
    """Channel responses ``w^o_n`` as an ``(n, M)`` array."""
    m = np.shape(state.perturbation)[0]
    theta = np.empty((n, m), dtype=np.complex128)
    theta[0] = state.perturbation
    if n > 1:
        q = complex_gaussian(rng, (n - 1, m), state.perturbation_variance)
        a = state.ar_coefficient
        theta[1:] = sps.lfilter([1.0], [1.0, -a], q, axis=0, zi=(a * np.asarray(state.perturbation))[None, :])[0]
    return state.mean_response[None, :] + theta


@dataclass
class WorldTrace:
    """Ground truth for one run of ``n`` samples."""

    known: KnownSignal
    received: np.ndarray
    noise: np.ndarray
    time: np.ndarray
    phase: np.ndarray
    cfo: np.ndarray
    sfo: np.ndarray
    channel: np.ndarray

    def __len__(self) -> int:
        return self.received.shape[0]


def simulate_world(
    params: SystemParams,
    n: int,
    rng: np.random.Generator,
    *,
    start_time: float | None = None,
    lookahead: int = 64,
    interpolator: Interpolator = DEFAULT_INTERPOLATOR,
) -> WorldTrace:
    """Generate known signal, true trajectories and received samples.

    Independent child generators are spawned from ``rng`` for the known
    signal, channel, carrier clock, sampling clock and noise so that one
    component's draws never shift another's.

    ``time`` is in base-rate samples; the known signal is stored at ``L``
    samples per base sample, so the true regressor at time ``t`` collects the
    stored signal at indices ``L t, L (t - 1), ...``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    r_sig, r_chan, r_car, r_samp, r_noise = rng.spawn(5)
    K = interpolator.kernel_half_width
    L = params.oversampling_factor
    m_true = params.channel_taps
    margin = int(np.ceil((K + 2) / L)) + max(m_true, params.M) + 4
    t0 = float(margin) if start_time is None else float(start_time)

    time, sfo = sampling_trajectory(params.sampling_state(t0), n, r_samp)
    last = max(float(time.max()), t0 + n)
    length = L * (int(np.ceil(last)) + margin + lookahead)
    known = generate_known_signal(length, params.signal_variance, L, r_sig)

    channel = channel_trajectory(params.channel_state(r_chan), n, r_chan)
    phase, cfo = carrier_trajectory(params.carrier_state(), n, r_car)
    y = sample_at_many(known, L * time, m_true, interpolator, stride=L)
    clean = np.einsum("nm,nm->n", channel.conj(), y) * np.exp(1j * phase)
    z = r_noise.standard_normal((n, 4))
    noise = np.sqrt(params.noise_floor / 2.0) * (z[:, 0] + 1j * z[:, 1])
    noise = noise + np.sqrt(params.background_power / 2.0) * (z[:, 2] + 1j * z[:, 3])
    return WorldTrace(known, clean + noise, noise, time, phase, cfo, sfo, channel)
