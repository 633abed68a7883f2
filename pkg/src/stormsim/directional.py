"""Direction evolution during excursions.

Wave direction moves as an autoregression of probit-transformed direction
changes whose innovation spread shrinks with wave height (severe sea states
turn more slowly).  Wind direction equals wave direction plus a stationary
autoregressive offset.  Pre-peak and post-peak sides are fitted separately
and simulated outward from the excursion maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .condext import ConditionalFamily, ResidualSample, fit_conditional, kde_draw
from .errors import DataError, FitError, InsufficientDataError

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def circular_difference(a, b):
    """Signed circular difference a - b in degrees, in [-180, 180)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = (a - b + 180.0) % 360.0 - 180.0
    return out if out.ndim else float(out)


def zeta(h, lam):
    """Wave-height-dependent innovation s.d.: sqrt(l1 + l2*exp(-l3*h))."""
    h = np.asarray(h, dtype=float)
    l1, l2, l3 = lam
    out = np.sqrt(l1 + l2 * np.exp(-l3 * h))
    return out if out.ndim else float(out)


def _hazen(sorted_values):
    n = len(sorted_values)
    values, last = np.unique(sorted_values, return_index=True)
    counts = np.diff(np.append(last, n))
    probs = (np.cumsum(counts) - 0.5) / n
    return values, probs


@dataclass
class WaveDirModel:
    """Heteroscedastic AR model of probit-scale wave-direction changes."""

    side: str
    ar: np.ndarray              # AR coefficients, order p1
    lam: tuple                  # (l1, l2, l3), all > 0
    grid_x: np.ndarray          # sorted observed changes (degrees)
    grid_p: np.ndarray          # Hazen CDF positions of grid_x

    def __post_init__(self):
        self.ar = np.atleast_1d(np.asarray(self.ar, dtype=float))
        self.grid_x = np.asarray(self.grid_x, dtype=float)
        self.grid_p = np.asarray(self.grid_p, dtype=float)
        if any(l <= 0 for l in self.lam):
            raise DataError("all variance parameters must be positive")
        if np.any(np.diff(self.grid_x) <= 0):
            raise DataError("change grid must be strictly increasing")

    @property
    def order(self) -> int:
        return len(self.ar)

    def to_gauss(self, change):
        p = np.clip(np.interp(change, self.grid_x, self.grid_p),
                    self.grid_p[0], self.grid_p[-1])
        return stats.norm.ppf(p)

    def from_gauss(self, delta):
        p = stats.norm.cdf(delta)
        return np.interp(p, self.grid_p, self.grid_x)


@dataclass
class WindOffsetModel:
    """Zero-mean stationary AR model of the wind-wave direction offset."""

    side: str
    ar: np.ndarray
    residuals: ResidualSample
    init_sample: np.ndarray     # observed offsets at excursion maxima

    def __post_init__(self):
        self.ar = np.atleast_1d(np.asarray(self.ar, dtype=float))
        self.init_sample = np.asarray(self.init_sample, dtype=float)
        if self.residuals.dim != 1:
            raise DataError("offset residuals must be one-dimensional")
        if not ar_is_stationary(self.ar):
            raise DataError("offset AR coefficients are not stationary")

    @property
    def order(self) -> int:
        return len(self.ar)


def ar_is_stationary(coeffs) -> bool:
    """True iff 1 - sum_j phi_j z^j has all roots outside the unit circle."""
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
    poly = np.concatenate([[1.0], -coeffs])       # 1 - phi_1 z - ... - phi_p z^p
    roots = np.roots(poly[::-1])                  # np.roots wants highest power first
    return bool(np.all(np.abs(roots) > 1.0 + 1e-12))


def _side_change_runs(excursions, side: str):
    """Per-excursion contiguous sequences of (change, hs_at_origin) moving
    outward from the peak on the requested side."""
    runs = []
    for e in excursions:
        if e.censored or e.theta_h is None or e.hs is None:
            continue
        rel_star = e.i_star - e.a
        th = e.theta_h
        hs = e.hs
        if side == "post":
            idx = range(rel_star, e.length - 1)
            pairs = [(circular_difference(th[t + 1], th[t]), hs[t]) for t in idx]
        elif side == "pre":
            idx = range(rel_star, 0, -1)
            pairs = [(circular_difference(th[t - 1], th[t]), hs[t]) for t in idx]
        else:
            raise DataError("side must be 'pre' or 'post'")
        if pairs:
            runs.append(pairs)
    return runs


def fit_wave_direction(excursions, side: str = "post", p1: int = 1) -> WaveDirModel:
    """Fit the wave-direction change model on one side of the peak.

    Changes are probit-transformed through their empirical distribution,
    then an exact Gaussian likelihood is maximized for the AR(p1) with
    innovation s.d. zeta(hs); normality of the innovations is retained here.
    """
    runs = _side_change_runs(excursions, side)
    all_changes = np.array([c for run in runs for c, _ in run])
    if len(all_changes) < 100:
        raise InsufficientDataError(
            f"only {len(all_changes)} direction changes on side '{side}'; need >= 100")
    if np.ptp(all_changes) == 0:
        raise FitError("degenerate sample: all direction changes identical")
    grid_x, grid_p = _hazen(np.sort(all_changes))
    if len(grid_x) < 10:
        raise FitError("degenerate sample: too few distinct direction changes")

    # Assemble AR design per run on the probit scale.
    deltas, lagged, hs_at = [], [], []
    for run in runs:
        ch = np.array([c for c, _ in run])
        h = np.array([hh for _, hh in run])
        d = stats.norm.ppf(np.clip(np.interp(ch, grid_x, grid_p),
                                   grid_p[0], grid_p[-1]))
        for t in range(p1, len(run)):
            deltas.append(d[t])
            lagged.append(d[t - p1:t][::-1])
            hs_at.append(h[t])
    deltas = np.asarray(deltas)
    lagged = np.asarray(lagged).reshape(len(deltas), p1)
    hs_at = np.asarray(hs_at)
    if len(deltas) < 50:
        raise InsufficientDataError("too few AR observations after lagging")

    def nll(params):
        phi = params[:p1]
        lam = np.exp(params[p1:])
        sd = zeta(hs_at, lam)
        resid = deltas - lagged @ phi
        return float(np.sum(np.log(sd) + 0.5 * (resid / sd) ** 2 + _HALF_LOG_2PI))

    phi0, *_ = np.linalg.lstsq(lagged, deltas, rcond=None)
    x0 = np.concatenate([phi0, np.log([0.3, 1.0, 0.2])])
    best = None
    for start in (x0, x0 + 0.5, x0 - 0.5):
        res = optimize.minimize(nll, start, method="Nelder-Mead",
                                options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 8000})
        if best is None or res.fun < best.fun:
            best = res
    res = optimize.minimize(nll, best.x, method="BFGS", options={"gtol": 1e-8})
    if np.isfinite(res.fun) and res.fun <= best.fun:
        best = res
    if not np.isfinite(best.fun):
        raise FitError("wave-direction fit did not converge",
                       diagnostics={"x": best.x.tolist()})
    phi = best.x[:p1]
    lam = tuple(np.exp(best.x[p1:]))
    return WaveDirModel(side=side, ar=phi, lam=lam, grid_x=grid_x, grid_p=grid_p)


def _ar_family(p: int) -> ConditionalFamily:
    def mean(theta, pred):
        return pred @ theta[:, None]

    def scale(theta, pred):
        return np.ones((len(pred), 1))

    identity = lambda v: np.asarray(v, dtype=float)
    return ConditionalFamily(
        name="ar", n_resp=1, n_params=p, mean=mean, scale=scale,
        to_natural=identity, to_unconstrained=identity,
        param_names=tuple(f"phi_{j}" for j in range(1, p + 1)),
    )


def fit_wind_offset(excursions, side: str = "post", p2: int = 1) -> WindOffsetModel:
    """Fit the AR(p2) wind-wave offset model on one side of the peak.

    Inference follows the shared conditional engine: Gaussian
    pseudo-likelihood for the coefficients, then the empirical residual
    sample with a kernel density replaces the normality assumption.
    """
    rows = []
    inits = []
    for e in excursions:
        if e.censored or e.theta_h is None or e.theta_w is None:
            continue
        gamma = circular_difference(e.theta_w, e.theta_h)
        rel_star = e.i_star - e.a
        inits.append(gamma[rel_star])
        if side == "post":
            seg = gamma[rel_star:]
        else:
            seg = gamma[:rel_star + 1][::-1]
        for t in range(p2, len(seg)):
            rows.append(np.concatenate([seg[t - p2:t][::-1], [seg[t]]]))
    if len(rows) < 30:
        raise InsufficientDataError(
            f"only {len(rows)} offset transitions on side '{side}'; need >= 30")
    data = np.asarray(rows)
    phi0, *_ = np.linalg.lstsq(data[:, :p2], data[:, p2], rcond=None)
    fit = fit_conditional(data, _ar_family(p2), phi0, restarts=3)
    return WindOffsetModel(side=side, ar=fit.theta, residuals=fit.residuals,
                           init_sample=np.asarray(inits))


@dataclass
class DirectionalModels:
    """Pre/post wave-direction and wind-offset models bundled for simulation."""

    wave_pre: WaveDirModel
    wave_post: WaveDirModel
    offset_pre: WindOffsetModel
    offset_post: WindOffsetModel


def simulate_directions(models: DirectionalModels, hs_path, i_peak: int,
                        anchor_theta: float, rng, gamma0: float | None = None):
    """Simulate wave and wind direction paths along a simulated excursion.

    Wave direction is anchored at the peak and accumulated outward on both
    sides; the wind direction adds the simulated AR offset.  Directions are
    returned in [0, 360).
    """
    hs_path = np.asarray(hs_path, dtype=float)
    L = len(hs_path)
    if not 0 <= i_peak < L:
        raise DataError("peak index outside the path")
    theta = np.empty(L)
    theta[i_peak] = anchor_theta % 360.0

    # Forward side.
    m = models.wave_post
    hist = np.zeros(m.order)
    for t in range(i_peak, L - 1):
        sd = zeta(hs_path[t], m.lam)
        delta = float(hist @ m.ar) + sd * rng.standard_normal()
        change = float(m.from_gauss(delta))
        theta[t + 1] = (theta[t] + change) % 360.0
        hist = np.concatenate([[delta], hist[:-1]])
    # Backward side.
    m = models.wave_pre
    hist = np.zeros(m.order)
    for t in range(i_peak, 0, -1):
        sd = zeta(hs_path[t], m.lam)
        delta = float(hist @ m.ar) + sd * rng.standard_normal()
        change = float(m.from_gauss(delta))
        theta[t - 1] = (theta[t] + change) % 360.0
        hist = np.concatenate([[delta], hist[:-1]])

    gamma = np.empty(L)
    if gamma0 is None:
        gamma0 = float(rng.choice(models.offset_post.init_sample))
    gamma[i_peak] = gamma0
    mo = models.offset_post
    hist = np.full(mo.order, gamma0)
    for t in range(i_peak, L - 1):
        gamma[t + 1] = float(hist @ mo.ar) + float(kde_draw(mo.residuals, rng)[0])
        hist = np.concatenate([[gamma[t + 1]], hist[:-1]])
    mo = models.offset_pre
    hist = np.full(mo.order, gamma0)
    for t in range(i_peak, 0, -1):
        gamma[t - 1] = float(hist @ mo.ar) + float(kde_draw(mo.residuals, rng)[0])
        hist = np.concatenate([[gamma[t - 1]], hist[:-1]])

    theta_w = (theta + gamma) % 360.0
    return theta, theta_w
