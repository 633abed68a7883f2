"""Met-ocean series ingestion and synthetic ground-truth generation.

The synthetic generator produces a stationary bivariate Gaussian-copula AR(1)
process (wave height, wind speed) with configurable generalized Pareto upper
tails, plus wrapped random-walk directions whose step spread shrinks as the
sea state grows.  It stands in for proprietary hindcast data so that every
downstream fit can be checked against a known truth.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError, DataError, ParseError

CSV_COLUMNS = ("t", "hs", "ws", "theta_h", "theta_w")


@dataclass
class MetOceanSeries:
    """Aligned 3-hourly series of wave height, wind speed and directions.

    Attributes
    ----------
    t : integer time index, strictly increasing by 1
    hs : significant wave height (m), finite and >= 0
    ws : wind speed (m/s), finite and >= 0
    theta_h, theta_w : wave / wind directions (degrees) in [0, 360)
    """

    t: np.ndarray
    hs: np.ndarray
    ws: np.ndarray
    theta_h: np.ndarray
    theta_w: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=int)
        for name in ("hs", "ws", "theta_h", "theta_w"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.t)
        for name in ("hs", "ws", "theta_h", "theta_w"):
            if len(getattr(self, name)) != n:
                raise DataError(f"column '{name}' has length {len(getattr(self, name))}, expected {n}")
        if n and np.any(np.diff(self.t) != 1):
            raise DataError("non-contiguous time index")
        for name in ("hs", "ws"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)) or np.any(v < 0):
                raise DataError(f"column '{name}' must be finite and non-negative")
        for name in ("theta_h", "theta_w"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)) or np.any(v < 0) or np.any(v >= 360):
                raise DataError(f"column '{name}' must lie in [0, 360)")

    def __len__(self):
        return len(self.t)


@dataclass
class SyntheticSpec:
    """Configuration of the synthetic generator.

    ``lag1_rho`` gives the lag-1 autocorrelation of the latent Gaussian for
    (hs, ws); a scalar is broadcast to both.  ``cross_rho`` is the stationary
    cross-correlation between the two latent components.  ``gpd_tail`` maps
    variable name to an upper-tail (sigma, xi) pair stitched on at the body
    quantile ``tail_q``.
    """

    n: int
    lag1_rho: tuple[float, float] = (0.95, 0.90)
    cross_rho: float = 0.75
    gpd_tail: dict = field(default_factory=lambda: {"hs": (1.8, 0.08), "ws": (3.2, 0.05)})
    dir_drift_sd: float = 12.0
    seed: int = 0
    tail_q: float = 0.95

    def __post_init__(self):
        if isinstance(self.lag1_rho, (int, float)):
            self.lag1_rho = (float(self.lag1_rho), float(self.lag1_rho))
        self.lag1_rho = (float(self.lag1_rho[0]), float(self.lag1_rho[1]))
        if self.n < 100:
            raise ConfigError("synthetic series length must be at least 100")
        for r in self.lag1_rho:
            if not -1 < r < 1:
                raise ConfigError("lag1_rho must lie in (-1, 1)")
        if not -1 < self.cross_rho < 1:
            raise ConfigError("cross_rho must lie in (-1, 1)")
        for var in ("hs", "ws"):
            sigma, xi = self.gpd_tail[var]
            if sigma <= 0:
                raise ConfigError(f"gpd_tail[{var!r}] scale must be positive")
        if self.dir_drift_sd <= 0:
            raise ConfigError("dir_drift_sd must be positive")
        if not 0.5 < self.tail_q < 1:
            raise ConfigError("tail_q must lie in (0.5, 1)")


def read_csv(path) -> MetOceanSeries:
    """Read a met-ocean series from a CSV file with header t,hs,ws,theta_h,theta_w.

    Raises :class:`ParseError` naming the offending row and column on any
    malformed cell, and :class:`DataError` on series-level violations.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file: missing header row") from None
        header = [h.strip() for h in header]
        for col in CSV_COLUMNS:
            if col not in header:
                raise ParseError(f"missing column '{col}' in header")
        idx = {col: header.index(col) for col in CSV_COLUMNS}
        columns = {col: [] for col in CSV_COLUMNS}
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise ParseError(f"row {row_no}: expected {len(header)} cells, got {len(row)}")
            for col in CSV_COLUMNS:
                cell = row[idx[col]].strip()
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(f"row {row_no}, column '{col}': non-numeric value {cell!r}") from None
                if col in ("theta_h", "theta_w") and not (0 <= value < 360):
                    raise ParseError(f"row {row_no}, column '{col}': direction {value} outside [0, 360)")
                if col in ("hs", "ws") and (not math.isfinite(value) or value < 0):
                    raise ParseError(f"row {row_no}, column '{col}': value {value} must be finite and >= 0")
                columns[col].append(value)
    t = np.asarray(columns["t"])
    if np.any(t != np.round(t)):
        raise ParseError("column 't' must contain integers")
    return MetOceanSeries(
        t=t.astype(int),
        hs=np.asarray(columns["hs"]),
        ws=np.asarray(columns["ws"]),
        theta_h=np.asarray(columns["theta_h"]),
        theta_w=np.asarray(columns["theta_w"]),
    )


def write_csv(series: MetOceanSeries, path) -> None:
    """Write a series in the same CSV layout accepted by :func:`read_csv`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for i in range(len(series)):
            writer.writerow([
                int(series.t[i]),
                repr(float(series.hs[i])),
                repr(float(series.ws[i])),
                repr(float(series.theta_h[i])),
                repr(float(series.theta_w[i])),
            ])


# Body distributions of the synthetic physical margins (below the stitch
# quantile).  Weibull bodies give storm-plausible magnitudes.
_BODY = {
    "hs": stats.weibull_min(c=1.5, scale=2.2),
    "ws": stats.weibull_min(c=1.9, scale=7.5),
}

# Direction increment spread multipliers: sd(h) = dir_drift_sd *
# sqrt(a + b*exp(-c*h)), normalized so sd(0) = dir_drift_sd.
_DIR_LAM = (0.25, 0.75, 0.30)


def synthetic_marginal_ppf(p, var: str, spec: SyntheticSpec):
    """Quantile function of the generator's physical margin for ``var``.

    Body quantiles come from a Weibull; above ``tail_q`` a generalized
    Pareto tail is stitched on continuously.
    """
    p = np.asarray(p, dtype=float)
    body = _BODY[var]
    sigma, xi = spec.gpd_tail[var]
    u = body.ppf(spec.tail_q)
    out = np.where(p <= spec.tail_q, body.ppf(np.minimum(p, spec.tail_q)), 0.0)
    tail_mask = p > spec.tail_q
    if np.any(tail_mask):
        q = (p[tail_mask] - spec.tail_q) / (1.0 - spec.tail_q)
        if abs(xi) < 1e-12:
            excess = -sigma * np.log1p(-q)
        else:
            excess = sigma / xi * ((1.0 - q) ** (-xi) - 1.0)
        out = np.asarray(out)
        out[tail_mask] = u + excess
    return out if out.ndim else float(out)


def generate_synthetic(spec: SyntheticSpec, return_latent: bool = False):
    """Generate a synthetic met-ocean series; deterministic given the seed.

    The latent process is a bivariate Gaussian AR(1),

        Z_t = rho * Z_{t-1} + sqrt(1 - rho^2) * eta_t,

    with per-variable ``rho`` and innovation correlation chosen so the
    stationary cross-correlation equals ``spec.cross_rho``.  Physical values
    are ``synthetic_marginal_ppf(Phi(Z))``.  Wave direction is a wrapped
    random walk with hs-dependent step spread; wind direction adds an AR(1)
    offset to wave direction.

    With ``return_latent=True`` also returns the (n, 2) latent Gaussian
    matrix so tests can check the generator against its own internals.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    rho = np.array(spec.lag1_rho)
    denom = math.sqrt((1 - rho[0] ** 2) * (1 - rho[1] ** 2))
    innov_corr = spec.cross_rho * (1 - rho[0] * rho[1]) / denom
    if not -1 < innov_corr < 1:
        raise ConfigError(
            f"cross_rho={spec.cross_rho} unattainable with lag1_rho={spec.lag1_rho} "
            f"(implied innovation correlation {innov_corr:.3f})"
        )
    chol = np.linalg.cholesky(np.array([[1.0, innov_corr], [innov_corr, 1.0]]))
    eta = rng.standard_normal((n, 2)) @ chol.T
    z = np.empty((n, 2))
    # Stationary start: Z_0 already has the stationary law.
    z0 = rng.standard_normal(2) @ chol.T
    z[0] = z0
    scale = np.sqrt(1 - rho**2)
    for i in range(1, n):
        z[i] = rho * z[i - 1] + scale * eta[i]
    u01 = stats.norm.cdf(z)
    hs = synthetic_marginal_ppf(u01[:, 0], "hs", spec)
    ws = synthetic_marginal_ppf(u01[:, 1], "ws", spec)

    a, b, c = _DIR_LAM
    step_sd = spec.dir_drift_sd * np.sqrt(a + b * np.exp(-c * hs))
    theta_h = np.empty(n)
    theta_h[0] = rng.uniform(0.0, 360.0)
    steps = step_sd[:-1] * rng.standard_normal(n - 1)
    theta_h[1:] = theta_h[0] + np.cumsum(steps)
    theta_h %= 360.0

    # Wind-wave offset: zero-mean AR(1), modest spread.
    gamma = np.empty(n)
    phi_g, sd_g = 0.7, 8.0
    gamma[0] = rng.normal(0.0, sd_g / math.sqrt(1 - phi_g**2))
    g_noise = rng.normal(0.0, sd_g, n - 1)
    for i in range(1, n):
        gamma[i] = phi_g * gamma[i - 1] + g_noise[i - 1]
    theta_w = (theta_h + gamma) % 360.0

    series = MetOceanSeries(t=np.arange(n), hs=hs, ws=ws, theta_h=theta_h, theta_w=theta_w)
    if return_latent:
        return series, z
    return series
