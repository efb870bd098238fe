"""Closed-form steady-state EMSE of FO-LMS and the optimal step-size solver.

All expressions assume a white Gaussian regressor (``R = sigma_x^2 I``) and
take the drift parameters in the physical units stored on
:class:`~folms.world.SystemParams`; the nominal sampling period ``T_s``
enters explicitly.

Terms whose denominator contains a step size that is zero follow one
convention: the term is ``0`` when its numerator vanishes and ``+inf``
otherwise.  This keeps disabled branches (``mu_eta = 0`` with no sampling
drift, say) well defined.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .folms import StepSizes
from .world import SystemParams

__all__ = [
    "EmsePrediction",
    "InfeasibleError",
    "SolverResult",
    "SearchBox",
    "predict_emse_complete",
    "predict_emse_simple",
    "approx_mu_w_opt",
    "approx_mu_fo_opt",
    "solve_optimal_step_sizes",
    "stationarity_residuals",
    "to_db",
]

_COORDS = ("mu_w", "mu_eps", "mu_eta")


def to_db(power: float) -> float:
    """Power in dB relative to 1 W; ``-inf`` for zero, ``nan`` for negatives."""
    power = float(power)
    if power > 0:
        return 10.0 * math.log10(power)
    return -math.inf if power == 0 else math.nan


class InfeasibleError(ValueError):
    """No step-size triple with a positive stability denominator exists."""


@dataclass(frozen=True)
class EmsePrediction:
    zeta_w: float
    zeta_eps: float
    zeta_eta: float
    gamma: float
    noise_power: float
    total: float = field(init=False)
    mse: float = field(init=False)
    valid: bool = field(init=False)

    def __post_init__(self):
        total = self.zeta_w + self.zeta_eps + self.zeta_eta
        object.__setattr__(self, "total", total)
        object.__setattr__(self, "mse", total + self.noise_power)
        object.__setattr__(self, "valid", bool(self.gamma > 0 and math.isfinite(total)))

    @property
    def total_db(self) -> float:
        return to_db(self.total)


def _ratio(num: float, den: float) -> float:
    if num == 0.0:
        return 0.0
    if den == 0.0:
        return math.inf
    return num / den


def _unpack(params: SystemParams):
    return (
        params.M,
        params.signal_variance,
        params.sigma2_v,
        params.channel_gain,
        params.sample_period,
    )


def _gamma(params: SystemParams, mu_w: float, mu_eps: float, mu_eta: float) -> float:
    M, sx, _, G, _ = _unpack(params)
    return 2.0 - mu_w * (1 + M) * sx - _ratio(mu_eps * G, mu_w) - 2.0 * _ratio(mu_eta * G, mu_w) * (2.0 + 2.0 / M)


def _check_steps(steps: StepSizes) -> None:
    if not steps.mu_w > 0:
        raise ValueError("mu_w must be positive")


def predict_emse_complete(params: SystemParams, steps: StepSizes) -> EmsePrediction:
    """Steady-state EMSE from the complete closed-form expressions.

    Each component is divided by the stability denominator ``gamma``; the
    result is flagged invalid when ``gamma <= 0``.
    """
    _check_steps(steps)
    M, sx, sv, G, Ts = _unpack(params)
    mw, me, mh = steps.as_tuple()
    p = params
    g = _gamma(params, mw, me, mh)
    c = 2.0 + 2.0 / M

    zw = (
        mw * M * sv * sx
        + M * p.sigma2_q / mw
        + me * G * sv / (2.0 * mw)
        + mh * G * sv / mw
        + G * p.sigma2_phi / mw
        + G * p.sigma2_beta / (mw * Ts)
    )
    ze = (
        me * sx * G * sv
        + _ratio(p.sigma2_eps * Ts ** 2, mw * me * sx)
        + _ratio(2.0 * p.kappa ** 2 * Ts ** 2, me ** 2 * sx * G)
    )
    zh = (
        2.0 * mh * sx * G * sv
        + _ratio(p.sigma2_eta * Ts ** 2, mw * mh * sx)
        + _ratio(p.rho ** 2 * Ts ** 2, c * mh ** 2 * sx * G)
        + _ratio(mw * G * p.sigma2_beta, mh * Ts)
        + _ratio(mw * p.sigma2_eta * Ts ** 2, mh ** 2 * G)
    )
    if g > 0:
        zw, ze, zh = zw / g, ze / g, zh / g
    else:
        zw = ze = zh = math.inf
    return EmsePrediction(zw, ze, zh, g, sv)


def predict_emse_simple(params: SystemParams, steps: StepSizes) -> EmsePrediction:
    """Small-step-size approximation of the steady-state EMSE.

    ``gamma`` is still reported (and gates ``valid``) but is not applied.
    """
    _check_steps(steps)
    M, sx, sv, G, Ts = _unpack(params)
    mw, me, mh = steps.as_tuple()
    p = params
    c = 2.0 + 2.0 / M
    zw = (
        mw * M * sx * sv / 2.0
        + M * p.sigma2_q / (2.0 * mw)
        + me * G * sv / (4.0 * mw)
        + mh * G * sv / (2.0 * mw)
        + G * p.sigma2_phi / (2.0 * mw)
        + G * p.sigma2_beta / (2.0 * mw * Ts)
    )
    ze = (
        me * sx * G * sv / 2.0
        + _ratio(p.sigma2_eps * Ts ** 2, 2.0 * mw * me * sx)
        + _ratio(p.kappa ** 2 * Ts ** 2, me ** 2 * sx * G)
    )
    zh = (
        mh * sx * G * sv
        + _ratio(p.sigma2_eta * Ts ** 2, 2.0 * mw * mh * sx)
        + _ratio(p.rho ** 2 * Ts ** 2, 2.0 * c * mh ** 2 * sx * G)
        + _ratio(mw * G * p.sigma2_beta, 2.0 * mh * Ts)
    )
    return EmsePrediction(zw, ze, zh, _gamma(params, mw, me, mh), sv)


def approx_mu_w_opt(params: SystemParams) -> float:
    """Channel step size that balances misadjustment and tracking, no coupling."""
    M, sx, sv, G, Ts = _unpack(params)
    if not (sv > 0 and sx > 0):
        raise ValueError("noise and signal powers must be positive")
    num = M * params.sigma2_q + G * params.sigma2_beta / Ts + G * params.sigma2_phi
    return math.sqrt(num / (M * sv * sx))


def approx_mu_fo_opt(kind: str, params: SystemParams, mu_w: float) -> float:
    """Approximate optimal carrier (``"carrier"``) or sampling (``"sampling"``) step.

    Sum of a square-root term driven by the random-walk drift and a
    cube-root term driven by the linear drift.
    """
    if not mu_w > 0:
        raise ValueError("mu_w must be positive")
    M, sx, sv, G, Ts = _unpack(params)
    den = G * sv * sx * (2.0 * mu_w * sx + 1.0)
    den4 = G * G * sv * sx * (2.0 * mu_w * sx + 1.0)
    if den <= 0:
        return 0.0
    if kind == "carrier":
        walk = math.sqrt(2.0 * params.sigma2_eps * Ts ** 2 / den)
        drift = np.cbrt(8.0 * mu_w * params.kappa ** 2 * Ts ** 2 / den4)
    elif kind == "sampling":
        walk = math.sqrt((G * params.sigma2_beta * mu_w ** 2 * sx / Ts + params.sigma2_eta * Ts ** 2) / den)
        drift = np.cbrt(mu_w * params.rho ** 2 * Ts ** 2 / den4)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return float(walk + drift)


# -- solver ------------------------------------------------------------------


@dataclass(frozen=True)
class SearchBox:
    """Log-space bounds for the solver."""

    mu_w: tuple[float, float] = (1e-6, 1e-1)
    mu_eps: tuple[float, float] = (1e-10, 1e-2)
    mu_eta: tuple[float, float] = (1e-10, 1e-2)

    def log_bounds(self, name: str) -> tuple[float, float]:
        lo, hi = getattr(self, name)
        if not 0 < lo < hi:
            raise ValueError(f"invalid bounds for {name}: {lo}, {hi}")
        return math.log10(lo), math.log10(hi)


@dataclass(frozen=True)
class SolverResult:
    steps: StepSizes
    prediction: EmsePrediction
    converged: bool
    cycles: int
    bound_active: tuple[str, ...] = ()

    def __iter__(self):
        # allows ``steps, pred = solve_optimal_step_sizes(...)``
        return iter((self.steps, self.prediction))


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden(f, a: float, b: float, tol: float) -> float:
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return c if fc <= fd else d


def _line_min(f, lo: float, hi: float, current: float, tol: float, scan: int) -> float:
    """Minimise ``f`` over ``[lo, hi]``: coarse scan, then golden section around the best cell."""
    grid = np.linspace(lo, hi, scan)
    vals = np.array([f(x) for x in grid])
    fcur = f(current)
    if not np.isfinite(vals).any():
        return current
    k = int(np.argmin(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, scan - 1)]
    x = _golden(f, a, b, tol)
    best = min((f(x), x), (vals[k], grid[k]))
    return best[1] if best[0] <= fcur else current


def solve_optimal_step_sizes(
    params: SystemParams,
    *,
    fixed: dict[str, float] | None = None,
    box: SearchBox = SearchBox(),
    tol: float = 1e-3,
    max_cycles: int = 200,
    scan_points: int = 25,
) -> SolverResult:
    """Minimise the complete-expression EMSE over the three step sizes.

    Coordinate search in ``log10`` space: each free coordinate is minimised
    in turn with a coarse scan followed by golden-section refinement, and
    the cycle repeats until no coordinate moves by more than ``tol``.  The
    starting point comes from :func:`approx_mu_w_opt` and
    :func:`approx_mu_fo_opt`.

    Parameters
    ----------
    fixed : dict, optional
        Coordinates held constant, e.g. ``{"mu_eta": 0.0}``.
    box : SearchBox
        Search bounds for the free coordinates.

    Raises
    ------
    InfeasibleError
        If no point with ``gamma > 0`` and finite EMSE is found.
    """
    fixed = dict(fixed or {})
    for k in fixed:
        if k not in _COORDS:
            raise ValueError(f"unknown step size {k!r}")
    free = [c for c in _COORDS if c not in fixed]
    bounds = {c: box.log_bounds(c) for c in free}

    def objective(vals: dict[str, float]) -> float:
        st = {**fixed, **{c: 10.0 ** vals[c] for c in free}}
        try:
            pred = predict_emse_complete(params, StepSizes(**st))
        except ValueError:
            return math.inf
        return pred.total if pred.valid else math.inf

    # seeds
    seed: dict[str, float] = {}
    mw0 = fixed.get("mu_w")
    if mw0 is None:
        try:
            mw0 = approx_mu_w_opt(params)
        except ValueError:
            mw0 = 0.0
        if not mw0 > 0:
            mw0 = 1e-3
    for c in free:
        if c == "mu_w":
            v = mw0
        else:
            v = approx_mu_fo_opt("carrier" if c == "mu_eps" else "sampling", params, mw0)
        lo, hi = bounds[c]
        seed[c] = min(max(math.log10(v), lo), hi) if v > 0 else lo
    x = dict(seed)

    if not math.isfinite(objective(x)):
        # scan the box for any feasible start
        grids = [np.linspace(*bounds[c], 9) for c in free]
        best = (math.inf, None)
        for pt in np.array(np.meshgrid(*grids, indexing="ij")).reshape(len(free), -1).T:
            cand = dict(zip(free, pt))
            val = objective(cand)
            if val < best[0]:
                best = (val, cand)
        if best[1] is None:
            raise InfeasibleError("no step sizes with gamma > 0 in the search box")
        x = best[1]

    converged = False
    cycles = 0
    while cycles < max_cycles:
        cycles += 1
        moved = 0.0
        for c in free:
            lo, hi = bounds[c]
            if cycles > 1:
                # after the first sweep only a neighbourhood is searched
                lo, hi = max(lo, x[c] - 0.5), min(hi, x[c] + 0.5)

            def f1(v, c=c):
                return objective({**x, c: v})

            new = _line_min(f1, lo, hi, x[c], tol, scan_points if cycles == 1 else 7)
            moved = max(moved, abs(new - x[c]))
            x[c] = new
        if moved <= tol:
            converged = True
            break

    final = {**fixed, **{c: 10.0 ** x[c] for c in free}}
    steps = StepSizes(**final)
    pred = predict_emse_complete(params, steps)
    if not pred.valid:
        raise InfeasibleError("no step sizes with gamma > 0 in the search box")
    if not converged:
        warnings.warn(f"step-size search did not converge in {max_cycles} cycles", RuntimeWarning, stacklevel=2)
    active = tuple(c for c in free if min(abs(x[c] - bounds[c][0]), abs(x[c] - bounds[c][1])) <= 2 * tol)
    return SolverResult(steps, pred, converged, cycles, active)


def stationarity_residuals(params: SystemParams, steps: StepSizes, rel: float = 1e-3) -> dict[str, float]:
    """Central differences of the total EMSE in ``log`` step size, divided by the total.

    Coordinates equal to zero are skipped.
    """
    base = predict_emse_complete(params, steps).total
    out = {}
    h = math.log1p(rel)
    for c in _COORDS:
        v = getattr(steps, c)
        if v <= 0:
            continue
        up = StepSizes(**{**_as_dict(steps), c: v * math.exp(h)})
        dn = StepSizes(**{**_as_dict(steps), c: v * math.exp(-h)})
        d = (predict_emse_complete(params, up).total - predict_emse_complete(params, dn).total) / (2 * h)
        out[c] = d / base
    return out


def _as_dict(steps: StepSizes) -> dict[str, float]:
    return {"mu_w": steps.mu_w, "mu_eps": steps.mu_eps, "mu_eta": steps.mu_eta}
