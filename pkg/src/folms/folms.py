"""Fixed-step-size FO-LMS: joint tracking of channel, CFO and SFO."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from .sigproc import DEFAULT_INTERPOLATOR, Interpolator, KnownSignal, _check_range, rng_stream
from .world import SystemParams, WorldTrace, simulate_world

__all__ = [
    "DivergenceError",
    "FilterState",
    "StepSizes",
    "RunTrace",
    "scheme_code",
    "initial_state",
    "folms_error",
    "folms_step",
    "run_folms",
    "run_folms_on",
    "measure_emse",
    "divergence_limit",
]


class DivergenceError(RuntimeError):
    """Raised when ``|e(n)|^2`` leaves the stable regime."""

    def __init__(self, message: str, index: int = -1, trace: "RunTrace | None" = None):
        super().__init__(message)
        self.index = index
        self.trace = trace


@dataclass(frozen=True)
class FilterState:
    channel: np.ndarray
    cfo: float = 0.0
    sfo: float = 0.0
    phase: float = 0.0
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "channel", np.array(self.channel, dtype=np.complex128))

    @classmethod
    def zeros(cls, m: int, time: float = 0.0) -> "FilterState":
        return cls(np.zeros(m, dtype=np.complex128), time=time)

    def _scalars(self) -> np.ndarray:
        return np.array([self.cfo, self.sfo, self.phase, self.time], dtype=np.float64)

    @classmethod
    def _from(cls, w: np.ndarray, st: np.ndarray) -> "FilterState":
        return cls(w, float(st[kern.CFO]), float(st[kern.SFO]), float(st[kern.PHASE]), float(st[kern.TIME]))


@dataclass(frozen=True)
class StepSizes:
    mu_w: float
    mu_eps: float = 0.0
    mu_eta: float = 0.0

    def __post_init__(self):
        for name in ("mu_w", "mu_eps", "mu_eta"):
            v = float(getattr(self, name))
            if not v >= 0 or not np.isfinite(v):
                raise ValueError("step sizes must be finite and non-negative")
            object.__setattr__(self, name, v)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.mu_w, self.mu_eps, self.mu_eta)


@dataclass
class RunTrace:
    """Per-sample record of one estimator run.

    ``excess_error`` is ``e(n) - v(n)`` (the noise-free part of the error)
    and is only available when the measurement noise realisation is known,
    i.e. for simulated runs.
    """

    error: np.ndarray
    excess_error: np.ndarray | None = None
    cfo_error: np.ndarray | None = None
    sfo_error: np.ndarray | None = None
    step_sizes: np.ndarray | None = None
    noise_estimate: np.ndarray | None = None
    final_state: FilterState | None = None
    noise_power: float | None = None

    @property
    def iterations(self) -> int:
        return self.error.shape[0]

    def __post_init__(self):
        n = self.error.shape[0]
        for name in ("excess_error", "cfo_error", "sfo_error", "step_sizes", "noise_estimate"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != n:
                raise ValueError(f"{name} length {arr.shape[0]} != {n}")


def scheme_code(scheme: str) -> int:
    if scheme == "centered":
        return kern.CENTERED
    if scheme == "backward":
        return kern.BACKWARD
    raise ValueError(f"unknown derivative scheme {scheme!r}")


def _check_state(known: KnownSignal, state: FilterState, K: int) -> None:
    m = state.channel.shape[0]
    L = known.oversampling_factor
    reach = L * (2.0 * (1.0 + abs(state.sfo)) + m) + 1.0
    _check_range(known, K, L * state.time - reach, L * state.time + reach)


def _buffers(m: int, K: int):
    return (np.empty(m, np.complex128), np.empty(m, np.complex128), np.empty(m, np.complex128), np.empty(2 * K))


def folms_error(
    state: FilterState,
    known: KnownSignal,
    d: complex,
    scheme: str = "centered",
    interpolator: Interpolator = DEFAULT_INTERPOLATOR,
):
    """Instantaneous error, regressor and filtered derivative ``w^H y'``.

    Times are in base-rate samples; the regressor taps are one base sample
    apart, i.e. ``L`` stored samples of the known signal.
    """
    K = interpolator.kernel_half_width
    _check_state(known, state, K)
    w = state.channel.copy()
    st = state._scalars()
    y, yn, yp, taps = _buffers(w.shape[0], K)
    code = scheme_code(scheme)
    L = known.oversampling_factor
    e, rot, gc, gs = kern.folms_gradients(known.samples, interpolator.table, K, L, complex(d), w, st,
                                         code, y, yn, yp, taps)
    deriv = kern.filtered_derivative(known.samples, interpolator.table, K, L, w, state.time, state.sfo,
                                     code, y, yn, yp, taps)
    return complex(e), y.copy(), complex(deriv)


def folms_step(
    state: FilterState,
    known: KnownSignal,
    d: complex,
    steps: StepSizes,
    scheme: str = "centered",
    interpolator: Interpolator = DEFAULT_INTERPOLATOR,
):
    """Advance the estimator by one sample.

    The channel update is the complex LMS rule on the phase-rotated
    regressor.  The frequency-offset rules follow the error gradient with
    respect to phase and sampling time; the carrier gradient is taken as
    ``-Im{w^H y e^{j phi} e^*}`` so that the update descends the squared
    error.  Accumulators then advance as ``phase += cfo`` and
    ``time += 1 + sfo`` using the freshly updated offsets.

    Returns ``(new_state, e)``.
    """
    K = interpolator.kernel_half_width
    _check_state(known, state, K)
    w = state.channel.copy()
    st = state._scalars()
    y, yn, yp, taps = _buffers(w.shape[0], K)
    e, rot, gc, gs = kern.folms_gradients(known.samples, interpolator.table, K, known.oversampling_factor,
                                         complex(d), w, st, scheme_code(scheme), y, yn, yp, taps)
    kern.folms_apply(w, st, y, e, rot, gc, gs, float(steps.mu_w), float(steps.mu_eps), float(steps.mu_eta))
    return FilterState._from(w, st), complex(e)


def divergence_limit(params: SystemParams) -> float:
    return 1e6 * params.signal_variance * max(params.channel_gain, 1e-300)


def initial_state(params: SystemParams, world: WorldTrace, warm_start: bool = False) -> FilterState:
    """Cold start (zeros, aligned time origin) or truth-initialised state."""
    m = params.M
    if not warm_start:
        return FilterState.zeros(m, time=float(world.time[0]))
    w = np.zeros(m, dtype=np.complex128)
    k = min(m, world.channel.shape[1])
    w[:k] = world.channel[0, :k]
    return FilterState(w, float(world.cfo[0]), float(world.sfo[0]), float(world.phase[0]), float(world.time[0]))


def run_folms_on(
    world: WorldTrace,
    params: SystemParams,
    steps: StepSizes,
    state: FilterState | None = None,
    *,
    scheme: str = "centered",
    interpolator: Interpolator = DEFAULT_INTERPOLATOR,
) -> RunTrace:
    """Run fixed-step FO-LMS against an already simulated world."""
    K = interpolator.kernel_half_width
    if state is None:
        state = initial_state(params, world)
    _check_state(world.known, state, K)
    n = len(world)
    w = state.channel.copy()
    st = state._scalars()
    e = np.zeros(n, np.complex128)
    cfo = np.zeros(n)
    sfo = np.zeros(n)
    try:
        done = kern.folms_run(world.known.samples, interpolator.table, K, world.known.oversampling_factor,
                              world.received, w, st,
                              float(steps.mu_w), float(steps.mu_eps), float(steps.mu_eta),
                              scheme_code(scheme), divergence_limit(params), e, cfo, sfo)
    except IndexError as exc:  # interpolation ran off the signal in the fallback path
        raise DivergenceError(f"estimator time left the known signal: {exc}") from exc
    trace = RunTrace(
        error=e,
        excess_error=e - world.noise,
        cfo_error=world.cfo - cfo,
        sfo_error=world.sfo - sfo,
        final_state=FilterState._from(w, st),
        noise_power=params.sigma2_v,
    )
    if done < n:
        raise DivergenceError(f"FO-LMS diverged at sample {done}", done, trace)
    return trace


def run_folms(
    params: SystemParams,
    steps: StepSizes,
    n_iter: int,
    seed=0,
    *,
    warm_start: bool = False,
    scheme: str = "centered",
    interpolator: Interpolator = DEFAULT_INTERPOLATOR,
) -> RunTrace:
    """Co-simulate the world and a fixed-step FO-LMS estimator.

    ``seed`` may be an int or a :class:`numpy.random.Generator`; the same
    seed always yields the same trace.
    """
    if int(n_iter) <= 0:
        raise ValueError("n_iter must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else rng_stream(seed)
    world = simulate_world(params, int(n_iter), rng, interpolator=interpolator)
    state = initial_state(params, world, warm_start)
    return run_folms_on(world, params, steps, state, scheme=scheme, interpolator=interpolator)


def measure_emse(
    trace: RunTrace,
    sigma2_v: float | None = None,
    discard_fraction: float = 0.5,
    *,
    use_excess: bool = False,
) -> float:
    """Steady-state EMSE estimate over the retained tail of ``trace``.

    By default ``mean |e|^2 - sigma2_v`` (can be slightly negative).  With
    ``use_excess=True`` the mean of ``|e - v|^2`` is returned instead, which
    removes the noise-power estimation variance when ``v`` is known.
    """
    if not 0.0 <= discard_fraction < 1.0:
        raise ValueError("discard_fraction must lie in [0, 1)")
    n = trace.iterations
    start = int(np.floor(discard_fraction * n))
    if start >= n:
        raise ValueError("empty steady-state tail")
    if use_excess:
        if trace.excess_error is None:
            raise ValueError("trace carries no excess-error record")
        tail = trace.excess_error[start:]
        return float(np.mean(tail.real ** 2 + tail.imag ** 2))
    if sigma2_v is None:
        if trace.noise_power is None:
            raise ValueError("sigma2_v is required")
        sigma2_v = trace.noise_power
    tail = trace.error[start:]
    return float(np.mean(tail.real ** 2 + tail.imag ** 2) - sigma2_v)


def with_steps(steps: StepSizes, **changes) -> StepSizes:
    return dataclasses.replace(steps, **changes)
