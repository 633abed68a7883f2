"""Semi-parametric marginal models and the standard-Laplace transform.

Each variable gets, per directional sector, an empirical body (Hazen plotting
positions) glued continuously to a generalized Pareto tail above a high
threshold.  The fitted marginal maps physical values to standard Laplace
scale and back; dependence modelling happens entirely on the Laplace scale.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .errors import (
    ClampedProbabilityWarning,
    DataError,
    DomainError,
    FitError,
    InsufficientDataError,
)

MIN_GPD_EXCESSES = 30
XI_BOUNDS = (-0.5, 1.0)


# ---------------------------------------------------------------------------
# Standard Laplace distribution
# ---------------------------------------------------------------------------

def laplace_cdf(y):
    y = np.asarray(y, dtype=float)
    out = np.where(y < 0, 0.5 * np.exp(y), 1.0 - 0.5 * np.exp(-y))
    return out if out.ndim else float(out)


def laplace_ppf(p):
    """Inverse standard Laplace CDF: log(2p) for p < 1/2, -log(2(1-p)) otherwise."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError("laplace_ppf requires probabilities strictly inside (0, 1)")
    out = np.where(p < 0.5, np.log(2.0 * p), -np.log(2.0 * (1.0 - p)))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Generalized Pareto distribution
# ---------------------------------------------------------------------------

@dataclass
class GPDParams:
    """Generalized Pareto tail: scale ``sigma``, shape ``xi``, with the
    physical threshold ``u_x`` and its exceedance probability ``zeta_u``."""

    sigma: float
    xi: float
    u_x: float = 0.0
    zeta_u: float = 0.05

    def __post_init__(self):
        if self.sigma <= 0:
            raise DataError("GPD scale must be positive")
        if not 0 < self.zeta_u < 1:
            raise DataError("zeta_u must lie in (0, 1)")

    @property
    def upper_endpoint(self):
        """Finite upper end of the excess support for xi < 0, else inf."""
        if self.xi < 0:
            return -self.sigma / self.xi
        return math.inf


def gpd_cdf(x, p: GPDParams):
    """CDF of the excess distribution: 1 - (1 + xi*x/sigma)^(-1/xi)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("gpd_cdf requires non-negative excesses")
    if abs(p.xi) < 1e-8:
        out = 1.0 - np.exp(-x / p.sigma)
    else:
        arg = 1.0 + p.xi * x / p.sigma
        if p.xi < 0 and np.any(arg < -1e-12):
            raise DomainError("excess beyond the upper endpoint of a xi<0 GPD")
        out = 1.0 - np.maximum(arg, 0.0) ** (-1.0 / p.xi)
    return out if out.ndim else float(out)


def gpd_ppf(q, p: GPDParams):
    """Quantile function of the excess distribution; inverse of :func:`gpd_cdf`."""
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q >= 1)):
        raise DomainError("gpd_ppf requires probabilities in [0, 1)")
    if abs(p.xi) < 1e-8:
        out = -p.sigma * np.log1p(-q)
    else:
        out = p.sigma / p.xi * ((1.0 - q) ** (-p.xi) - 1.0)
    return out if out.ndim else float(out)


_NLL_PENALTY = 1e12


def _gpd_nll(excesses, sigma, xi):
    n = len(excesses)
    if abs(xi) < 1e-8:
        return n * math.log(sigma) + float(np.sum(excesses)) / sigma
    arg = 1.0 + xi * excesses / sigma
    if np.any(arg <= 0):
        # Out of support; finite penalty keeps simplex steps well-defined.
        return _NLL_PENALTY
    return n * math.log(sigma) + (1.0 + 1.0 / xi) * float(np.sum(np.log(arg)))


def fit_gpd(excesses, u_x: float = 0.0, zeta_u: float = 0.05) -> GPDParams:
    """Maximum-likelihood GPD fit to positive excesses.

    The shape is constrained to (-0.5, 1) for regular MLE behaviour via a
    smooth logistic reparameterization.  Raises
    :class:`InsufficientDataError` below 30 excesses and :class:`FitError`
    for degenerate samples or optimizer failure.
    """
    excesses = np.asarray(excesses, dtype=float)
    if excesses.ndim != 1:
        raise DataError("excesses must be a 1-d array")
    if len(excesses) < MIN_GPD_EXCESSES:
        raise InsufficientDataError(
            f"need at least {MIN_GPD_EXCESSES} excesses to fit a GPD, got {len(excesses)}"
        )
    if np.any(excesses <= 0):
        raise DataError("all excesses must be strictly positive")
    if np.ptp(excesses) == 0:
        raise FitError("degenerate sample: all excesses identical")

    lo, hi = XI_BOUNDS

    def unpack(z):
        sigma = math.exp(z[0])
        xi = lo + (hi - lo) * special.expit(z[1])
        return sigma, xi

    def nll(z):
        sigma, xi = unpack(z)
        return _gpd_nll(excesses, sigma, xi)

    m = float(np.mean(excesses))
    v = float(np.var(excesses))
    xi0 = 0.5 * (1.0 - m * m / v) if v > 0 else 0.0
    xi0 = min(max(xi0, lo + 0.05), hi - 0.05)
    sigma0 = max(0.5 * m * (m * m / v + 1.0), 1e-8) if v > 0 else m
    z0 = np.array([math.log(sigma0), special.logit((xi0 - lo) / (hi - lo))])

    best = None
    for start in (z0, z0 + np.array([0.3, 0.8]), z0 - np.array([0.3, 0.8])):
        res = optimize.minimize(nll, start, method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000})
        if best is None or res.fun < best.fun:
            best = res
    res = optimize.minimize(nll, best.x, method="BFGS", options={"gtol": 1e-9})
    if res.fun > best.fun:
        res = best
    if not math.isfinite(res.fun):
        raise FitError("GPD fit failed to reach a finite likelihood",
                       diagnostics={"x": res.x.tolist()})
    sigma, xi = unpack(res.x)
    return GPDParams(sigma=sigma, xi=xi, u_x=u_x, zeta_u=zeta_u)


# ---------------------------------------------------------------------------
# Directional bins
# ---------------------------------------------------------------------------

def directional_bins(n_bins: int = 8) -> np.ndarray:
    """Edges of ``n_bins`` equal sectors partitioning [0, 360)."""
    if n_bins < 1:
        raise DataError("need at least one directional bin")
    return np.linspace(0.0, 360.0, n_bins + 1)


def bin_index(theta, edges) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if np.any((theta < 0) | (theta >= 360)):
        raise DomainError("directions must lie in [0, 360)")
    idx = np.searchsorted(edges, theta, side="right") - 1
    return np.minimum(idx, len(edges) - 2)


# ---------------------------------------------------------------------------
# Per-bin semi-parametric marginal
# ---------------------------------------------------------------------------

def _hazen_knots(sorted_sample):
    """Unique sample values with Hazen-style CDF positions (ties collapsed
    to the top rank so the knot CDF stays strictly increasing)."""
    n = len(sorted_sample)
    values, last_index = np.unique(sorted_sample, return_index=True)
    counts = np.diff(np.append(last_index, n))
    top_rank = np.cumsum(counts)
    probs = (top_rank - 0.5) / n
    return values, probs


@dataclass
class _BinMarginal:
    """Empirical body plus GPD tail for one directional sector."""

    sample: np.ndarray          # sorted, full bin sample
    gpd: GPDParams

    def __post_init__(self):
        self.sample = np.sort(np.asarray(self.sample, dtype=float))
        self._knots_x, self._knots_p = _hazen_knots(self.sample)
        # Continuity at the threshold requires u_x to be the (1 - zeta_u)
        # quantile under the same interpolation rule used by cdf().
        self._n = len(self.sample)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        out = np.empty_like(x)
        tail = x > self.gpd.u_x
        if np.any(~tail):
            body_p = np.interp(x[~tail], self._knots_x, self._knots_p,
                               left=self._knots_p[0], right=self._knots_p[-1])
            out[~tail] = body_p
        if np.any(tail):
            out[tail] = (1.0 - self.gpd.zeta_u) + self.gpd.zeta_u * gpd_cdf(
                x[tail] - self.gpd.u_x, self.gpd)
        return float(out[0]) if scalar else out

    def ppf(self, p):
        p = np.asarray(p, dtype=float)
        scalar = p.ndim == 0
        p = np.atleast_1d(p)
        out = np.empty_like(p)
        split = 1.0 - self.gpd.zeta_u
        tail = p > split
        if np.any(~tail):
            out[~tail] = np.interp(p[~tail], self._knots_p, self._knots_x,
                                   left=self._knots_x[0], right=self._knots_x[-1])
        if np.any(tail):
            q = (p[tail] - split) / self.gpd.zeta_u
            out[tail] = self.gpd.u_x + gpd_ppf(np.minimum(q, 1.0 - 1e-15), self.gpd)
        return float(out[0]) if scalar else out


@dataclass
class SemiParametricMarginal:
    """Directional semi-parametric marginal for one variable (hs or ws)."""

    variable: str
    edges: np.ndarray
    bins: list = field(default_factory=list)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        if self.edges[0] != 0.0 or self.edges[-1] != 360.0 or np.any(np.diff(self.edges) <= 0):
            raise DataError("bin edges must partition [0, 360) exactly")
        if len(self.bins) != len(self.edges) - 1:
            raise DataError("one bin marginal required per sector")

    @property
    def n_bins(self):
        return len(self.bins)

    def bin_of(self, theta):
        return bin_index(theta, self.edges)

    def to_laplace(self, x, theta):
        """Map physical values to standard Laplace scale (vectorized).

        Probability estimates of exactly 0 or 1 are clamped to
        [1/(2n), 1 - 1/(2n)] of the relevant bin with a warning, never an
        exception.
        """
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x).astype(float)
        theta = np.broadcast_to(np.atleast_1d(np.asarray(theta, dtype=float)), x.shape)
        idx = self.bin_of(theta)
        p = np.empty_like(x)
        for b in np.unique(idx):
            mask = idx == b
            p[mask] = self.bins[b].cdf(x[mask])
        clamped = False
        for b in np.unique(idx):
            mask = idx == b
            n = self.bins[b]._n
            lo, hi = 0.5 / n, 1.0 - 0.5 / n
            bad = mask & ((p <= 0.0) | (p >= 1.0))
            if np.any(bad):
                clamped = True
                p[bad] = np.clip(p[bad], lo, hi)
        if clamped:
            warnings.warn("probability estimate clamped to the sample range",
                          ClampedProbabilityWarning, stacklevel=2)
        y = laplace_ppf(p)
        return float(y[0]) if scalar else y

    def from_laplace(self, y, theta):
        """Inverse of :func:`to_laplace`; tails extrapolate via the GPD."""
        y = np.asarray(y, dtype=float)
        scalar = y.ndim == 0
        y = np.atleast_1d(y).astype(float)
        theta = np.broadcast_to(np.atleast_1d(np.asarray(theta, dtype=float)), y.shape)
        idx = self.bin_of(theta)
        p = laplace_cdf(y)
        x = np.empty_like(y)
        for b in np.unique(idx):
            mask = idx == b
            x[mask] = self.bins[b].ppf(p[mask])
        return float(x[0]) if scalar else x

    def threshold_physical(self, theta):
        """Per-direction physical threshold u_x of the tail model."""
        idx = self.bin_of(theta)
        ux = np.array([self.bins[b].gpd.u_x for b in np.atleast_1d(idx)])
        return float(ux[0]) if np.ndim(theta) == 0 else ux


def fit_semiparametric(values, theta, variable: str, n_bins: int = 8,
                       zeta_u: float = 0.05) -> SemiParametricMarginal:
    """Fit the per-sector semi-parametric marginal for one variable.

    The tail threshold of each sector is its (1 - zeta_u) Hazen quantile;
    the GPD is fitted to the excesses above it.
    """
    values = np.asarray(values, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if values.shape != theta.shape:
        raise DataError("values and directions must have equal length")
    edges = directional_bins(n_bins)
    idx = bin_index(theta, edges)
    bins = []
    for b in range(n_bins):
        sample = np.sort(values[idx == b])
        if len(sample) < MIN_GPD_EXCESSES / zeta_u:
            raise InsufficientDataError(
                f"sector {b} of variable '{variable}' has {len(sample)} observations; "
                f"too few for a {zeta_u:.0%} tail fit"
            )
        knots_x, knots_p = _hazen_knots(sample)
        u_x = float(np.interp(1.0 - zeta_u, knots_p, knots_x))
        excesses = sample[sample > u_x] - u_x
        gpd = fit_gpd(excesses, u_x=u_x, zeta_u=zeta_u)
        bins.append(_BinMarginal(sample=sample, gpd=gpd))
    return SemiParametricMarginal(variable=variable, edges=edges, bins=bins)
