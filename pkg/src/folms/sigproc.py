"""Known reference signal, fractional-time interpolation and divided differences.

The known signal is a circularly-symmetric complex Gaussian sequence,
optionally oversampled by an integer factor ``L`` so that its spectrum is
confined to ``|omega| < pi / L``.  Off-grid values are obtained with a
Kaiser-windowed sinc kernel that is tabulated on a fine phase grid and
linearly interpolated between phases; each table row is normalised to unit
DC gain and the zero-phase row is an exact unit impulse, so integer
positions reproduce the stored samples bit-for-bit.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from ._accel import jit

__all__ = [
    "InterpolationRangeError",
    "KnownSignal",
    "Interpolator",
    "DEFAULT_INTERPOLATOR",
    "rng_stream",
    "generate_known_signal",
    "sample_at",
    "sample_at_many",
    "regressor_at",
    "filtered_derivative",
    "write_iq",
    "read_iq",
]

# Upsampling filter: 255-tap Kaiser lowpass.  The -6 dB edge sits slightly
# inside pi/L so that the transition band ends before pi/L.
_UPSAMPLE_TAPS = 255
_UPSAMPLE_BETA = 8.0
_UPSAMPLE_GUARD = 0.045


class InterpolationRangeError(IndexError):
    """Requested time lies outside the interpolable span of a signal."""


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent generator for substream ``keys`` of ``seed``.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys,
    so ``rng_stream(s, k)`` does not depend on whether any other ``k`` was
    ever created.
    """
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class KnownSignal:
    samples: np.ndarray
    variance: float
    oversampling_factor: int = 1

    def __post_init__(self):
        arr = np.ascontiguousarray(self.samples, dtype=np.complex128)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.length

    @property
    def f_max(self) -> float:
        """Highest normalised frequency present, in cycles/sample."""
        return 0.5 / self.oversampling_factor


@dataclass(frozen=True)
class Interpolator:
    """Kaiser-windowed sinc interpolator with ``2 K`` taps."""

    kernel_half_width: int = 16
    window_shape_parameter: float = 8.0
    phases: int = 4096
    table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kernel_half_width < 1 or self.phases < 2:
            raise ValueError("kernel_half_width must be >= 1 and phases >= 2")
        object.__setattr__(
            self, "table", _kernel_table(self.kernel_half_width, float(self.window_shape_parameter), self.phases)
        )

    def taps(self, frac: float) -> np.ndarray:
        """Kernel weights for samples ``floor(t) - K + 1 ... floor(t) + K``."""
        out = np.empty(2 * self.kernel_half_width)
        _kernel_row(self.table, float(frac), out)
        return out


@functools.lru_cache(maxsize=8)
def _kernel_table(K: int, beta: float, phases: int) -> np.ndarray:
    m = np.arange(-K + 1, K + 1, dtype=np.float64)
    frac = np.arange(phases + 1, dtype=np.float64) / phases
    x = m[None, :] - frac[:, None]
    h = np.sinc(x) * np.i0(beta * np.sqrt(np.clip(1.0 - (x / K) ** 2, 0.0, None))) / np.i0(beta)
    h /= h.sum(axis=1, keepdims=True)
    h[0] = 0.0
    h[0, K - 1] = 1.0
    h[-1] = 0.0
    h[-1, K] = 1.0
    h.setflags(write=False)
    return h


DEFAULT_INTERPOLATOR = Interpolator()


# -- compiled primitives ------------------------------------------------------


@jit
def _kernel_row(table, frac, out):
    phases = table.shape[0] - 1
    pos = frac * phases
    p = int(pos)
    if p >= phases:
        p = phases - 1
    r = pos - p
    for k in range(out.shape[0]):
        out[k] = (1.0 - r) * table[p, k] + r * table[p + 1, k]


@jit
def _fill_regressor(x, table, K, t, out, taps, stride):
    """out[i] = x(t - i * stride) for i = 0 .. len(out) - 1."""
    fl = np.floor(t)
    _kernel_row(table, t - fl, taps)
    base = int(fl) - K + 1
    n2 = 2 * K
    for i in range(out.shape[0]):
        acc = 0j
        start = base - i * stride
        for k in range(n2):
            acc += taps[k] * x[start + k]
        out[i] = acc


def _check_range(signal: KnownSignal, K: int, t_lo: float, t_hi: float) -> None:
    n = signal.length
    if not (np.isfinite(t_lo) and np.isfinite(t_hi)) or t_lo < K or t_hi > n - 1 - K:
        raise InterpolationRangeError(
            f"time span [{t_lo:.6g}, {t_hi:.6g}] outside interpolable range [{K}, {n - 1 - K}]"
        )


# -- public operations --------------------------------------------------------


def generate_known_signal(
    n_samples: int, variance: float = 1.0, oversampling_factor: int = 1, seed=0
) -> KnownSignal:
    """Draw a band-limited circularly-symmetric complex Gaussian sequence.

    White Gaussian samples are drawn at the base rate and upsampled by
    ``oversampling_factor`` with a 255-tap Kaiser-windowed sinc lowpass
    normalised so that the expected mean power equals ``variance``.

    Parameters
    ----------
    n_samples : int
        Output length at the oversampled rate.
    variance : float
        Target mean power in watts.
    oversampling_factor : int
        Integer ``L >= 1``; the spectrum is confined to ``|omega| < pi / L``.
    seed : int or numpy.random.Generator
        Seed (or generator) controlling the draw.
    """
    n_samples = int(n_samples)
    L = int(oversampling_factor)
    if n_samples <= 0 or not variance > 0 or L < 1:
        raise ValueError("n_samples, variance and oversampling_factor must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    scale = np.sqrt(variance / 2.0)
    if L == 1:
        z = rng.standard_normal((n_samples, 2)) @ np.array([1.0, 1j])
        return KnownSignal(scale * z, float(variance), 1)

    h = _upsample_filter(L)
    delay = (h.size - 1) // 2
    n_base = (n_samples + 2 * delay) // L + 2
    base = rng.standard_normal((n_base, 2)) @ np.array([1.0, 1j])
    up = sps.upfirdn(h, base, up=L)
    out = scale * up[2 * delay: 2 * delay + n_samples]
    return KnownSignal(out, float(variance), L)


@functools.lru_cache(maxsize=8)
def _upsample_filter(L: int) -> np.ndarray:
    cutoff = (1.0 - _UPSAMPLE_GUARD) / L
    h = sps.firwin(_UPSAMPLE_TAPS, cutoff, window=("kaiser", _UPSAMPLE_BETA))
    return h * np.sqrt(L / np.sum(h * h))


def sample_at(signal: KnownSignal, t: float, interpolator: Interpolator = DEFAULT_INTERPOLATOR) -> complex:
    """Interpolated value of ``signal`` at fractional sample index ``t``."""
    K = interpolator.kernel_half_width
    _check_range(signal, K, t, t)
    out = np.empty(1, dtype=np.complex128)
    _fill_regressor(signal.samples, interpolator.table, K, float(t), out, np.empty(2 * K), 1)
    return complex(out[0])


def regressor_at(
    signal: KnownSignal,
    t: float,
    m: int,
    interpolator: Interpolator = DEFAULT_INTERPOLATOR,
    stride: int = 1,
) -> np.ndarray:
    """Vector ``[y(t), y(t - s), ..., y(t - (m - 1) s)]`` with ``s = stride``.

    ``t`` is a fractional index into ``signal.samples``.  The estimator uses
    ``stride = L`` so that its taps sit one base-rate sample apart.
    """
    if m < 1 or stride < 1:
        raise ValueError("m and stride must be >= 1")
    K = interpolator.kernel_half_width
    _check_range(signal, K, t - (m - 1) * stride, t)
    out = np.empty(m, dtype=np.complex128)
    _fill_regressor(signal.samples, interpolator.table, K, float(t), out, np.empty(2 * K), int(stride))
    return out


def sample_at_many(
    signal: KnownSignal,
    times: np.ndarray,
    lags: int = 1,
    interpolator: Interpolator = DEFAULT_INTERPOLATOR,
    stride: int = 1,
    chunk: int = 8192,
) -> np.ndarray:
    """Vectorised :func:`regressor_at` over many times.

    Returns an array of shape ``(len(times), lags)`` whose row ``n`` is the
    regressor at ``times[n]``.
    """
    times = np.asarray(times, dtype=np.float64)
    K = interpolator.kernel_half_width
    if times.size:
        _check_range(signal, K, float(times.min()) - (lags - 1) * stride, float(times.max()))
    table = interpolator.table
    phases = table.shape[0] - 1
    x = signal.samples
    out = np.empty((times.size, lags), dtype=np.complex128)
    offs = np.arange(2 * K)[None, None, :] - stride * np.arange(lags)[None, :, None]
    for s in range(0, times.size, chunk):
        tt = times[s: s + chunk]
        fl = np.floor(tt)
        pos = (tt - fl) * phases
        p = np.minimum(pos.astype(np.int64), phases - 1)
        r = (pos - p)[:, None]
        taps = (1.0 - r) * table[p] + r * table[p + 1]
        idx = (fl.astype(np.int64) - K + 1)[:, None, None] + offs
        out[s: s + chunk] = np.einsum("nk,nlk->nl", taps, x[idx])
    return out


def filtered_derivative(
    w: np.ndarray,
    regressor_next: np.ndarray,
    regressor_prev: np.ndarray,
    eta: float,
    scheme: str = "centered",
    spacing: float = 1.0,
) -> complex:
    """Divided-difference estimate of ``w^H y'`` at the current time.

    For ``scheme="centered"`` the regressors are taken ``spacing * (1 + eta)``
    ahead of and behind the current time; for ``scheme="backward"``
    ``regressor_next`` is the current regressor and ``regressor_prev`` the one
    ``spacing * (1 + eta)`` earlier.
    """
    w = np.asarray(w)
    a = np.asarray(regressor_next)
    b = np.asarray(regressor_prev)
    if w.shape != a.shape or w.shape != b.shape:
        raise ValueError("w and regressors must have the same length")
    if not 1.0 + eta > 0:
        raise ValueError("1 + eta must be positive")
    diff = np.vdot(w, a) - np.vdot(w, b)
    h = spacing * (1.0 + eta)
    if scheme == "centered":
        return complex(diff / (2.0 * h))
    if scheme == "backward":
        return complex(diff / h)
    raise ValueError(f"unknown scheme {scheme!r}")


def write_iq(signal: KnownSignal, path) -> None:
    """Dump samples as little-endian interleaved float64 I/Q pairs."""
    np.asarray(signal.samples, dtype="<c16").tofile(Path(path))


def read_iq(path, variance: float | None = None, oversampling_factor: int = 1) -> KnownSignal:
    z = np.fromfile(Path(path), dtype="<c16")
    var = float(np.mean(np.abs(z) ** 2)) if variance is None else variance
    return KnownSignal(z, var, oversampling_factor)
