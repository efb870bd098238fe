"""Per-sample FO-LMS / VSS-FO-LMS recursions.

Every function here is decorated with :func:`folms._accel.jit`; the public
modules wrap them.  Estimator scalars travel in a small float64 array
``st = [cfo, sfo, phase, time]`` and are updated in place.

Time is counted in base-rate samples.  The known signal is stored at ``L``
times that rate, so base time ``t`` maps to sample index ``L t``; regressor
taps are ``L`` stored samples apart and the centred difference uses the
neighbours ``t +- (1 + eta) / L``.
"""
import numpy as np

from ._accel import jit
from .sigproc import _fill_regressor

CENTERED = 0
BACKWARD = 1

# st layout
CFO, SFO, PHASE, TIME = 0, 1, 2, 3

# vs layout (VSS scalar state)
V_SE2, V_SY2, V_DEPS, V_DETA, V_NOISE, V_POS = 0, 1, 2, 3, 4, 5
V_SIZE = 6

# vcfg layout (VSS configuration)
(C_LE, C_LY, C_LEPS, C_LETA, C_LR, C_WMIN, C_WMAX, C_EMIN, C_EMAX, C_HMIN, C_HMAX,
 C_KNOWN, C_NOISE, C_FLOOR, C_DELTA, C_SY2EPS) = range(16)
C_SIZE = 16


@jit
def _dot_h(w, y):
    acc = 0j
    for i in range(w.shape[0]):
        acc += np.conj(w[i]) * y[i]
    return acc


@jit
def _ewma(prev, sample, lam):
    # incremental form: exactly stationary when sample == prev
    return prev + (1.0 - lam) * (sample - prev)


@jit
def filtered_derivative(x, table, K, L, w, t, eta, scheme, y, yn, yp, taps):
    """``w^H y'`` (per base sample) by divided difference; ``y`` must hold y(t)."""
    ti = L * t
    if scheme == CENTERED:
        h = (1.0 + eta) / L
        _fill_regressor(x, table, K, ti + L * h, yn, taps, L)
        _fill_regressor(x, table, K, ti - L * h, yp, taps, L)
        return (_dot_h(w, yn) - _dot_h(w, yp)) / (2.0 * h)
    h = 1.0 + eta
    _fill_regressor(x, table, K, ti - L * h, yp, taps, L)
    return (_dot_h(w, y) - _dot_h(w, yp)) / h


@jit
def folms_gradients(x, table, K, L, d, w, st, scheme, y, yn, yp, taps):
    """Error and the two frequency-offset gradients at the current state.

    Fills ``y`` with the regressor at ``st[TIME]`` and returns
    ``(e, rot, grad_cfo, grad_sfo)`` where ``rot = exp(j phase)``.
    """
    t = st[TIME]
    _fill_regressor(x, table, K, L * t, y, taps, L)
    rot = np.exp(1j * st[PHASE])
    out = _dot_h(w, y) * rot
    e = d - out
    ec = np.conj(e)
    deriv = filtered_derivative(x, table, K, L, w, t, st[SFO], scheme, y, yn, yp, taps)
    # Descent direction for the phase; see folms.folms_step docstring.
    grad_cfo = -(out * ec).imag
    grad_sfo = (deriv * rot * ec).real
    return e, rot, grad_cfo, grad_sfo


@jit
def folms_apply(w, st, y, e, rot, grad_cfo, grad_sfo, mu_w, mu_eps, mu_eta):
    g = mu_w * rot * np.conj(e)
    for i in range(w.shape[0]):
        w[i] += g * y[i]
    st[CFO] += mu_eps * grad_cfo
    st[SFO] += mu_eta * grad_sfo
    st[PHASE] += st[CFO]
    st[TIME] += 1.0 + st[SFO]


@jit
def folms_run(x, table, K, L, d, w, st, mu_w, mu_eps, mu_eta, scheme, limit, e_out, cfo_out, sfo_out):
    """Run fixed-step FO-LMS over ``d``; returns samples processed.

    Stops early (returning the failing index) when ``|e|^2`` exceeds
    ``limit`` or becomes non-finite.
    """
    m = w.shape[0]
    y = np.empty(m, dtype=np.complex128)
    yn = np.empty(m, dtype=np.complex128)
    yp = np.empty(m, dtype=np.complex128)
    taps = np.empty(2 * K)
    for n in range(d.shape[0]):
        if not _time_ok(x.shape[0], K, L, m, st):
            return n
        cfo_out[n] = st[CFO]
        sfo_out[n] = st[SFO]
        e, rot, gc, gs = folms_gradients(x, table, K, L, d[n], w, st, scheme, y, yn, yp, taps)
        e_out[n] = e
        p = e.real * e.real + e.imag * e.imag
        if not p <= limit:
            return n
        folms_apply(w, st, y, e, rot, gc, gs, mu_w, mu_eps, mu_eta)
    return d.shape[0]


@jit
def _time_ok(length, K, L, m, st):
    reach = L * (2.0 * (1.0 + abs(st[SFO])) + m) + 1.0
    ti = L * st[TIME]
    return ti - reach >= K and ti + reach <= length - 1 - K


@jit
def mu_w_rule(se2, noise, yy, delta):
    if not se2 > noise:
        return 0.0
    den = yy + delta
    if not den > 0.0:
        return 0.0
    return (1.0 - np.sqrt(noise / se2)) / den


@jit
def mu_fo_rule(c, mu_w, grad_mean, mu_mean, w2, noise, sy2):
    den = w2 * w2 * noise * sy2 * (2.0 * mu_w * sy2 + 1.0)
    if not den > 0.0:
        return 0.0
    gm = grad_mean * mu_mean
    return np.cbrt(c * mu_w * gm * gm / den)


@jit
def _clamp(v, lo, hi):
    return max(min(v, hi), lo)


@jit
def vss_update(x, table, K, L, d, w, st, vs, r, hist_eps, hist_eta, cfg, scheme, y, yn, yp, taps, mus):
    """One VSS-FO-LMS iteration; step sizes and noise estimate go to ``mus``."""
    m = w.shape[0]
    e, rot, gc, gs = folms_gradients(x, table, K, L, d, w, st, scheme, y, yn, yp, taps)
    ec = np.conj(e)

    le = cfg[C_LE]
    vs[V_SE2] = _ewma(vs[V_SE2], e.real * e.real + e.imag * e.imag, le)
    ly = cfg[C_LY]
    y0 = y[0]
    vs[V_SY2] = _ewma(vs[V_SY2], y0.real * y0.real + y0.imag * y0.imag, ly)

    if cfg[C_KNOWN] != 0.0:
        noise = cfg[C_NOISE]
    else:
        lr = cfg[C_LR]
        g = rot * ec
        rr = 0.0
        for i in range(m):
            r[i] = r[i] + (1.0 - lr) * (y[i] * g - r[i])
            rr += r[i].real * r[i].real + r[i].imag * r[i].imag
        if vs[V_SY2] > cfg[C_SY2EPS]:
            noise = vs[V_SE2] - rr / vs[V_SY2]
        else:
            noise = vs[V_SE2]
        if noise < 0.0:
            noise = 0.0
        if noise < cfg[C_FLOOR]:
            noise = cfg[C_FLOOR]
    vs[V_NOISE] = noise

    leps = cfg[C_LEPS]
    leta = cfg[C_LETA]
    vs[V_DEPS] = _ewma(vs[V_DEPS], gc, leps)
    vs[V_DETA] = _ewma(vs[V_DETA], gs, leta)

    pos = int(vs[V_POS])
    h = hist_eps.shape[0]
    sum_eps = 0.0
    sum_eta = 0.0
    for k in range(h):
        j = (pos + k) % h
        sum_eps += hist_eps[j]
        sum_eta += hist_eta[j]
    mean_eps = sum_eps / h
    mean_eta = sum_eta / h

    yy = 0.0
    w2 = 0.0
    for i in range(m):
        yy += y[i].real * y[i].real + y[i].imag * y[i].imag
        w2 += w[i].real * w[i].real + w[i].imag * w[i].imag
    sy2 = vs[V_SY2]
    mu_w = mu_w_rule(vs[V_SE2], noise, yy, cfg[C_DELTA] * m * sy2)
    mu_eps = mu_fo_rule(8.0, mu_w, vs[V_DEPS], mean_eps, w2, noise, sy2)
    mu_eta = mu_fo_rule(1.0, mu_w, vs[V_DETA], mean_eta, w2, noise, sy2)

    mu_w = _clamp(mu_w, cfg[C_WMIN], cfg[C_WMAX])
    mu_eps = _clamp(mu_eps, cfg[C_EMIN], cfg[C_EMAX])
    mu_eta = _clamp(mu_eta, cfg[C_HMIN], cfg[C_HMAX])

    hist_eps[pos] = mu_eps
    hist_eta[pos] = mu_eta
    vs[V_POS] = (pos + 1) % h

    folms_apply(w, st, y, e, rot, gc, gs, mu_w, mu_eps, mu_eta)
    mus[0] = mu_w
    mus[1] = mu_eps
    mus[2] = mu_eta
    mus[3] = noise
    return e


@jit
def vss_run(x, table, K, L, d, w, st, vs, r, hist_eps, hist_eta, cfg, scheme, limit,
            e_out, cfo_out, sfo_out, mu_out):
    m = w.shape[0]
    y = np.empty(m, dtype=np.complex128)
    yn = np.empty(m, dtype=np.complex128)
    yp = np.empty(m, dtype=np.complex128)
    taps = np.empty(2 * K)
    mus = np.empty(4)
    for n in range(d.shape[0]):
        if not _time_ok(x.shape[0], K, L, m, st):
            return n
        cfo_out[n] = st[CFO]
        sfo_out[n] = st[SFO]
        e = vss_update(x, table, K, L, d[n], w, st, vs, r, hist_eps, hist_eta, cfg, scheme, y, yn, yp, taps, mus)
        e_out[n] = e
        for k in range(4):
            mu_out[n, k] = mus[k]
        p = e.real * e.real + e.imag * e.imag
        if not p <= limit:
            return n
    return d.shape[0]
