"""Historical-matching baseline simulator.

Draw storm-maximum conditions (direction, then wave height from the
per-sector tail model), pick one of the 20 most similar historical storms at
random, and rescale its trajectory so the maxima coincide: wave heights
multiplicatively, directions by a rigid rotation, wind speeds linearly
through a regression of storm-maximum wind speed on storm-maximum wave
height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .directional import circular_difference
from .errors import ConfigError, DataError, FitError, InsufficientDataError
from .excursions import Excursion
from .margins import SemiParametricMarginal, gpd_ppf

DIRECTION_WEIGHT = 0.1  # per degree, so 5 degrees matches 0.5 m of wave height
N_MATCH = 20


@dataclass
class StormTrajectory:
    hs: np.ndarray
    ws: np.ndarray
    theta_h: np.ndarray
    theta_w: np.ndarray
    i_peak: int                # position of the hs maximum within the arrays


@dataclass
class StormCatalog:
    """Storm-maximum summaries plus full trajectories of historical storms."""

    peak_hs: np.ndarray
    peak_dir: np.ndarray
    peak_ws: np.ndarray
    trajectories: list

    def __post_init__(self):
        self.peak_hs = np.asarray(self.peak_hs, dtype=float)
        self.peak_dir = np.asarray(self.peak_dir, dtype=float)
        self.peak_ws = np.asarray(self.peak_ws, dtype=float)
        n = len(self.peak_hs)
        if not (len(self.peak_dir) == len(self.peak_ws) == len(self.trajectories) == n):
            raise DataError("catalog columns must have equal length")
        for hs_max, traj in zip(self.peak_hs, self.trajectories):
            if abs(float(np.max(traj.hs)) - hs_max) > 1e-9:
                raise DataError("storm-max hs must equal the trajectory maximum")

    def __len__(self):
        return len(self.peak_hs)


def build_catalog(excursions) -> StormCatalog:
    """Catalog the non-censored excursions carrying physical trajectories."""
    peak_hs, peak_dir, peak_ws, trajs = [], [], [], []
    for e in excursions:
        if e.censored or e.hs is None or e.theta_h is None:
            continue
        rel = e.i_star - e.a
        if e.ws[rel] <= 0:
            continue          # wind-speed rescaling needs a positive peak value
        peak_hs.append(float(e.hs[rel]))
        peak_dir.append(float(e.theta_h[rel]))
        peak_ws.append(float(e.ws[rel]))
        trajs.append(StormTrajectory(hs=e.hs.copy(), ws=e.ws.copy(),
                                     theta_h=e.theta_h.copy(), theta_w=e.theta_w.copy(),
                                     i_peak=rel))
    return StormCatalog(peak_hs=np.array(peak_hs), peak_dir=np.array(peak_dir),
                        peak_ws=np.array(peak_ws), trajectories=trajs)


def hm_dissimilarity(hs1, dir1, hs2, dir2):
    """|hs1 - hs2| + 0.1 * |circular difference of directions| (degrees)."""
    d = np.abs(circular_difference(dir1, dir2))
    out = np.abs(np.asarray(hs1, dtype=float) - np.asarray(hs2, dtype=float)) \
        + DIRECTION_WEIGHT * d
    return out if np.ndim(out) else float(out)


@dataclass
class WindSpeedRegression:
    """Storm-max wind speed on storm-max wave height: ws = b0 + b1*hs + sigma*N."""

    beta0: float
    beta1: float
    sigma: float
    degenerate: bool = False

    def __post_init__(self):
        if self.sigma < 0:
            raise DataError("residual s.d. cannot be negative")


def fit_windspeed_regression(catalog: StormCatalog) -> WindSpeedRegression:
    """Ordinary least squares of storm-max ws on storm-max hs."""
    if len(catalog) < 10:
        raise InsufficientDataError(f"need >= 10 storm maxima, got {len(catalog)}")
    x = catalog.peak_hs
    yv = catalog.peak_ws
    if np.ptp(x) == 0:
        raise FitError("degenerate design: all storm-max wave heights identical")
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, yv, rcond=None)
    resid = yv - X @ coef
    n = len(x)
    if n > 2:
        sigma = math.sqrt(float(np.sum(resid**2)) / (n - 2))
    else:
        sigma = 0.0
    return WindSpeedRegression(beta0=float(coef[0]), beta1=float(coef[1]),
                               sigma=sigma, degenerate=(sigma == 0.0))


@dataclass
class HMModel:
    """Everything needed to simulate excursions by historical matching."""

    catalog: StormCatalog
    hs_marginal: SemiParametricMarginal
    regression: WindSpeedRegression
    n_match: int = N_MATCH

    def __post_init__(self):
        if len(self.catalog) < self.n_match:
            raise ConfigError(
                f"catalog holds {len(self.catalog)} storms; historical matching "
                f"needs at least {self.n_match}")

    def simulate_ensemble(self, n: int, rng) -> list:
        return [hm_simulate(self, rng) for _ in range(n)]


def hm_simulate(model: HMModel, rng) -> Excursion:
    """Simulate one physical-scale excursion by historical matching."""
    cat = model.catalog
    # (i) storm-max direction resampled from the observed maxima
    theta_star = float(cat.peak_dir[rng.integers(0, len(cat))])
    # (ii) storm-max hs from the sector's tail model above its threshold
    b = int(model.hs_marginal.bin_of(theta_star))
    gpd = model.hs_marginal.bins[b].gpd
    hs_star = gpd.u_x + float(gpd_ppf(rng.uniform(), gpd))
    # (iii) uniform choice among the n_match least dissimilar storms
    diss = hm_dissimilarity(hs_star, theta_star, cat.peak_hs, cat.peak_dir)
    nearest = np.argpartition(diss, model.n_match - 1)[:model.n_match]
    pick = int(nearest[rng.integers(0, model.n_match)])
    traj = cat.trajectories[pick]
    # (iv)(a) wave heights scaled so the maxima coincide
    scale = hs_star / cat.peak_hs[pick]
    hs = traj.hs * scale
    # (b)+(c) rigid rotation aligning storm-max wave directions
    rot = theta_star - cat.peak_dir[pick]
    theta_h = (traj.theta_h + rot) % 360.0
    theta_w = (traj.theta_w + rot) % 360.0
    # (d) storm-max wind speed from the regression (kept non-negative)
    reg = model.regression
    ws_star = -1.0
    for _ in range(100):
        ws_star = reg.beta0 + reg.beta1 * hs_star + reg.sigma * rng.standard_normal()
        if ws_star >= 0:
            break
    ws_star = max(ws_star, 0.0)
    # (e) wind speeds scaled linearly to match at the storm maximum
    ws = traj.ws * (ws_star / cat.peak_ws[pick])
    L = len(hs)
    return Excursion(a=0, b=L - 1, i_star=traj.i_peak, y=None,
                     hs=hs, ws=ws, theta_h=theta_h, theta_w=theta_w)
