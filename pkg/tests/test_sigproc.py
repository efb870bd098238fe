import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from folms.sigproc import (
    DEFAULT_INTERPOLATOR,
    InterpolationRangeError,
    Interpolator,
    KnownSignal,
    filtered_derivative,
    generate_known_signal,
    read_iq,
    regressor_at,
    rng_stream,
    sample_at,
    sample_at_many,
    write_iq,
)


def periodic_bandlimited(n, band, rng):
    """Random periodic signal whose DFT vanishes outside ``|f| < band``."""
    f = np.fft.fftfreq(n)
    spec = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * (np.abs(f) < band)
    return np.fft.ifft(spec), spec / n, f


def trig_eval(coef, f, t):
    """Exact value of the trigonometric interpolant at fractional ``t``."""
    return np.exp(2j * np.pi * np.outer(t, f)) @ coef


def test_rng_stream_is_isolated():
    a = rng_stream(7, 3).standard_normal(5)
    for k in range(5):
        rng_stream(7, k).standard_normal(100)
    b = rng_stream(7, 3).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, rng_stream(7, 4).standard_normal(5))


def test_integer_times_reproduce_samples_exactly():
    sig = generate_known_signal(400, 1.0, 2, seed=1)
    for t in (20, 21, 100, 377):
        assert sample_at(sig, float(t)) == sig.samples[t]
    y = regressor_at(sig, 100.0, 5, stride=2)
    np.testing.assert_array_equal(y, sig.samples[[100, 98, 96, 94, 92]])


def test_interpolation_against_fft_oracle():
    # band edge of a twice-oversampled signal
    rng = np.random.default_rng(3)
    x, coef, f = periodic_bandlimited(4096, 0.5 / 2 * 0.955, rng)
    sig = KnownSignal(x, 1.0, 2)
    t = rng.uniform(100, 3900, 500)
    got = sample_at_many(sig, t)[:, 0]
    ref = trig_eval(coef, f, t)
    err = np.mean(np.abs(got - ref) ** 2) / np.mean(np.abs(ref) ** 2)
    assert 10 * np.log10(err) < -60


def test_sample_at_many_matches_scalar_path():
    sig = generate_known_signal(1000, 1.0, 2, seed=2)
    t = np.array([50.25, 123.5, 400.125, 777.9])
    many = sample_at_many(sig, t, lags=4, stride=2)
    for i, ti in enumerate(t):
        np.testing.assert_allclose(many[i], regressor_at(sig, ti, 4, stride=2), rtol=0, atol=1e-13)


def test_range_errors():
    sig = generate_known_signal(200, 1.0, 1, seed=0)
    with pytest.raises(InterpolationRangeError):
        sample_at(sig, 3.0)
    with pytest.raises(InterpolationRangeError):
        regressor_at(sig, 190.0, 2)
    with pytest.raises(InterpolationRangeError):
        sample_at(sig, float("nan"))


def test_known_signal_power_and_band():
    L = 2
    sig = generate_known_signal(1 << 17, 2.0, L, seed=5)
    x = sig.samples
    assert abs(np.mean(np.abs(x) ** 2) / 2.0 - 1.0) < 0.02
    # Hann-windowed averaged periodogram
    seg = 1024
    win = np.hanning(seg)
    frames = x[: (x.size // seg) * seg].reshape(-1, seg) * win
    psd = np.mean(np.abs(np.fft.fft(frames, axis=1)) ** 2, axis=0)
    f = np.abs(np.fft.fftfreq(seg))
    inband = psd[f < 0.2].mean()
    stop = psd[(f > 0.27)].mean()
    assert 10 * np.log10(stop / inband) < -50


def test_known_signal_rejects_bad_arguments():
    with pytest.raises(ValueError):
        generate_known_signal(0)
    with pytest.raises(ValueError):
        generate_known_signal(10, variance=0.0)
    with pytest.raises(ValueError):
        generate_known_signal(10, oversampling_factor=0)


def test_tone_derivative():
    n = 2048
    f0 = 0.03
    tt = np.arange(n)
    sig = KnownSignal(np.exp(2j * np.pi * f0 * tt), 1.0, 1)
    w = np.zeros(3, complex)
    w[0] = 1.0
    t, eta = 1000.3, 1e-4
    h = 0.5 * (1 + eta)
    yn = regressor_at(sig, t + h, 3)
    yp = regressor_at(sig, t - h, 3)
    got = filtered_derivative(w, yn, yp, eta, "centered", spacing=0.5)
    om = 2 * np.pi * f0
    exact = 1j * om * np.exp(1j * om * t)
    # centred difference of a tone: derivative times sin(om h) / (om h)
    np.testing.assert_allclose(got, exact * np.sin(om * h) / (om * h), rtol=5e-4)
    np.testing.assert_allclose(got, exact, rtol=2e-3)
    yc = regressor_at(sig, t, 3)
    yb = regressor_at(sig, t - h, 3)
    back = filtered_derivative(w, yc, yb, eta, "backward", spacing=0.5)
    np.testing.assert_allclose(abs(back), abs(exact) * np.sin(om * h / 2) / (om * h / 2), rtol=5e-4)


def test_filtered_derivative_validation():
    w = np.ones(2, complex)
    with pytest.raises(ValueError):
        filtered_derivative(w, np.ones(3), np.ones(2), 0.0)
    with pytest.raises(ValueError):
        filtered_derivative(w, w, w, -1.5)
    with pytest.raises(ValueError):
        filtered_derivative(w, w, w, 0.0, scheme="forward")


def test_iq_roundtrip(tmp_path):
    sig = generate_known_signal(333, 1.0, 2, seed=9)
    p = tmp_path / "sig.iq"
    write_iq(sig, p)
    back = read_iq(p, variance=1.0, oversampling_factor=2)
    np.testing.assert_array_equal(back.samples, sig.samples)
    assert read_iq(p).variance == pytest.approx(np.mean(np.abs(sig.samples) ** 2))


def test_interpolator_table_rows():
    ip = Interpolator(kernel_half_width=8, phases=256)
    taps = ip.taps(0.0)
    assert taps[7] == 1.0 and np.count_nonzero(taps) == 1
    assert ip.taps(0.37).sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        Interpolator(kernel_half_width=0)


@given(
    a=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
    t=st.floats(40.0, 400.0),
)
def test_interpolation_is_linear(a, t):
    s1 = generate_known_signal(512, 1.0, 2, seed=1)
    s2 = generate_known_signal(512, 1.0, 2, seed=2)
    mix = KnownSignal(a * s1.samples + s2.samples, 1.0, 2)
    lhs = sample_at(mix, t)
    rhs = a * sample_at(s1, t) + sample_at(s2, t)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(a)) * 10


@given(t=st.floats(40.0, 400.0), k=st.integers(1, 50))
def test_interpolation_commutes_with_integer_shift(t, k):
    sig = generate_known_signal(600, 1.0, 2, seed=4)
    shifted = KnownSignal(sig.samples[k:], 1.0, 2)
    frac = t - np.floor(t)
    base = np.floor(t)
    assert abs(sample_at(sig, base + k + frac) - sample_at(shifted, base + frac)) < 1e-12


def test_regressor_examples():
    sig = generate_known_signal(400, 1.0, 1, seed=3)
    assert regressor_at(sig, 100.25, 1)[0] == sample_at(sig, 100.25)
    y = regressor_at(sig, 100.25, 5)
    np.testing.assert_array_equal(y, [sample_at(sig, 100.25 - i) for i in range(5)])


def test_derivative_of_constant_is_zero():
    w = np.array([0.3 - 1j, 2.0, 0.5j])
    y = np.full(3, 1.5 + 0.5j)
    assert filtered_derivative(w, y, y, 0.01) == 0
    assert filtered_derivative(w, y, y, 0.01, "backward") == 0


def _tone_errors(f0, h=1.0):
    n = 4096
    sig = KnownSignal(np.exp(2j * np.pi * f0 * np.arange(n)), 1.0, 1)
    w = np.array([1.0 + 0j])
    t = 2000.4
    exact = 2j * np.pi * f0 * np.exp(2j * np.pi * f0 * t)
    c = filtered_derivative(w, regressor_at(sig, t + h, 1), regressor_at(sig, t - h, 1), 0.0, spacing=h)
    b = filtered_derivative(w, regressor_at(sig, t, 1), regressor_at(sig, t - h, 1), 0.0, "backward", spacing=h)
    return abs(c - exact) / abs(exact), abs(b - exact) / abs(exact)


def test_derivative_error_order():
    c1, b1 = _tone_errors(0.05)
    c2, b2 = _tone_errors(0.025)
    assert c1 / c2 == pytest.approx(4.0, rel=0.2)
    assert b1 / b2 == pytest.approx(2.0, rel=0.2)
    assert c1 < b1


def test_tone_derivative_centered_accuracy():
    # f = 0.05, eta = 0: within 0.1 % of the analytic derivative scaled by sin(om h) / (om h)
    n, f0, t = 4096, 0.05, 2000.4
    sig = KnownSignal(np.exp(2j * np.pi * f0 * np.arange(n)), 1.0, 1)
    w = np.array([1.0 + 0j])
    c = filtered_derivative(w, regressor_at(sig, t + 1, 1), regressor_at(sig, t - 1, 1), 0.0)
    om = 2 * np.pi * f0
    ref = 1j * om * np.exp(1j * om * t) * np.sin(om) / om
    assert abs(c - ref) / abs(ref) < 1e-3
