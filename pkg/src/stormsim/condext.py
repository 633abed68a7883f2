"""Shared inference engine for conditional tail models.

All dependence models in this package share one working form: given a
conditioning exceedance, each modelled quantity equals a parametric location
term plus a parametric scale term times a residual,

    W_{2:d} | (W_1 > u) = g1(W_1; theta) + g2(W_1; theta) * eps.

Fitting temporarily assumes eps ~ N(mu, sigma^2 I), maximizes the resulting
pseudo-likelihood jointly over (theta, mu, sigma^2) -- here mu and sigma^2
are profiled out in closed form -- and then discards normality, keeping the
empirical residuals

    eps_ij = (w_ij - g1_j(w_i1)) / g2_j(w_i1)

as a sample smoothed by a product-Gaussian kernel density.  Chain models
additionally sample residual blocks conditionally on earlier blocks via the
ratio of kernel density estimates, which for product kernels reduces to
reweighting kernel components.

This module also hosts the peak-period model: a conditional-extremes fit of
every entry of the irregular observation matrix (the 2k-1 rows around an
excursion maximum, minus the maximum itself) on the maximum.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import (
    BoundaryWarning,
    DataError,
    DegenerateFitWarning,
    DomainError,
    FitError,
    InsufficientDataError,
    KernelUnderflowWarning,
)
from .excursions import CensoredPeakError, PeakPeriod, partition

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_VAR_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# Residual samples and product-Gaussian kernel densities
# ---------------------------------------------------------------------------

def normal_reference_bandwidths(values) -> np.ndarray:
    """Per-coordinate normal-reference bandwidths for a product kernel:
    h_j = sd_j * (4 / ((m + 2) n))^(1 / (m + 4))."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n, m = values.shape
    if n < 2:
        return np.ones(m)
    sd = np.std(values, axis=0, ddof=1)
    factor = (4.0 / ((m + 2.0) * n)) ** (1.0 / (m + 4.0))
    return np.maximum(sd * factor, 1e-12)


@dataclass
class ResidualSample:
    """Empirical residual matrix with per-coordinate kernel bandwidths.

    A bandwidth of exactly 0 denotes a point-mass kernel in that coordinate
    (used by noise-free simulation contracts); densities cannot be evaluated
    in that case but sampling still works.
    """

    values: np.ndarray
    bandwidths: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.bandwidths is None:
            self.bandwidths = normal_reference_bandwidths(self.values)
        self.bandwidths = np.broadcast_to(
            np.asarray(self.bandwidths, dtype=float), (self.values.shape[1],)
        ).copy()
        if np.any(~np.isfinite(self.bandwidths)) or np.any(self.bandwidths < 0):
            raise DataError("bandwidths must be finite and non-negative")
        if not np.all(np.isfinite(self.values)):
            raise DataError("residuals must be finite")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def kde_density(r: ResidualSample, point) -> float:
    """Product-Gaussian kernel density estimate at ``point``."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if point.shape != (r.dim,):
        raise DataError(f"point must have dimension {r.dim}")
    if np.any(r.bandwidths == 0):
        raise DomainError("cannot evaluate a density with a zero bandwidth")
    z = (point[None, :] - r.values) / r.bandwidths[None, :]
    log_k = -0.5 * np.sum(z * z, axis=1) - r.dim * _HALF_LOG_2PI - np.sum(np.log(r.bandwidths))
    m = np.max(log_k)
    if not np.isfinite(m):
        return 0.0
    return float(np.exp(m) * np.mean(np.exp(log_k - m)))


def kde_draw(r: ResidualSample, rng) -> np.ndarray:
    """One unconditional draw from the kernel density estimate."""
    i = rng.integers(0, r.n)
    return r.values[i] + r.bandwidths * rng.standard_normal(r.dim)


def kde_conditional_sample(r: ResidualSample, given, rng) -> np.ndarray:
    """Draw the trailing coordinates conditional on a leading block.

    Selects a kernel component with probability proportional to its kernel
    weight at the conditioning values, then draws the remaining coordinates
    from that component.  If every weight underflows, falls back to the
    nearest component with a warning.
    """
    given = np.atleast_1d(np.asarray(given, dtype=float)) if np.size(given) else np.empty(0)
    l = len(given)
    if l >= r.dim:
        raise DataError("conditioning block must leave at least one coordinate free")
    if l == 0:
        return kde_draw(r, rng)
    h = r.bandwidths[:l]
    if np.any(h == 0):
        # Point-mass kernels: condition by exact match distance.
        d2 = np.sum((r.values[:, :l] - given[None, :]) ** 2, axis=1)
        i = int(np.argmin(d2))
    else:
        z = (given[None, :] - r.values[:, :l]) / h[None, :]
        log_w = -0.5 * np.sum(z * z, axis=1)
        m = np.max(log_w)
        if not np.isfinite(m):
            warnings.warn("all kernel weights underflowed; using nearest residual",
                          KernelUnderflowWarning, stacklevel=2)
            z = np.nan_to_num(z, nan=np.inf, posinf=np.inf, neginf=np.inf)
            i = int(np.argmin(np.sum(np.abs(z), axis=1)))
        else:
            w = np.exp(log_w - m)
            w /= w.sum()
            i = int(rng.choice(r.n, p=w))
    rest = r.values[i, l:]
    return rest + r.bandwidths[l:] * rng.standard_normal(r.dim - l)


# ---------------------------------------------------------------------------
# Irregular matrices
# ---------------------------------------------------------------------------

class IrregularMatrix:
    """A (rows x d) array of per-cell quantities with one structurally
    absent cell (the conditioning entry).

    Rows carry integer labels (time offsets); the absent cell is stored as
    NaN and guarded: reading or writing it is a contract violation.  Cells
    iterate row-major, skipping the absent one, which fixes the flattening
    order used for parameter vectors and joint residual matrices.
    """

    def __init__(self, values, row_labels, missing_cell):
        self.values = np.asarray(values, dtype=float).copy()
        self.row_labels = tuple(int(r) for r in row_labels)
        self.missing_cell = (int(missing_cell[0]), int(missing_cell[1]))
        if self.values.shape != (len(self.row_labels), self.d):
            raise DataError("values shape does not match row labels")
        if self.missing_cell[0] not in self.row_labels:
            raise DataError("missing cell row label not present")
        self.values[self._row_pos(self.missing_cell[0]), self.missing_cell[1]] = np.nan

    @classmethod
    def peak_layout(cls, k: int, d: int = 2, fill=np.nan):
        """Rows -(k-1)..(k-1) with the centre driver cell (0, 0) absent."""
        labels = range(-(k - 1), k)
        return cls(np.full((2 * k - 1, d), fill, dtype=float), labels, (0, 0))

    @classmethod
    def chain_layout(cls, k: int, d: int = 2, fill=np.nan):
        """Rows 0..k with the window-start driver cell (0, 0) absent."""
        return cls(np.full((k + 1, d), fill, dtype=float), range(0, k + 1), (0, 0))

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n_entries(self) -> int:
        return self.values.size - 1

    def _row_pos(self, label: int) -> int:
        try:
            return self.row_labels.index(label)
        except ValueError:
            raise DataError(f"row label {label} not in {self.row_labels}") from None

    def _guard(self, i, j):
        if (i, j) == self.missing_cell:
            raise DataError(f"cell {self.missing_cell} is structurally absent")

    def get(self, i: int, j: int) -> float:
        self._guard(i, j)
        return float(self.values[self._row_pos(i), j])

    def set(self, i: int, j: int, value: float):
        self._guard(i, j)
        self.values[self._row_pos(i), j] = value

    def cells(self):
        """Yield (row_label, col) over present cells in flattening order."""
        for i in self.row_labels:
            for j in range(self.d):
                if (i, j) != self.missing_cell:
                    yield (i, j)

    def flatten(self) -> np.ndarray:
        return np.array([self.get(i, j) for i, j in self.cells()])

    @classmethod
    def from_flat(cls, flat, row_labels, missing_cell, d: int = 2):
        out = cls(np.full((len(tuple(row_labels)), d), np.nan), row_labels, missing_cell)
        flat = np.asarray(flat, dtype=float)
        if len(flat) != out.n_entries:
            raise DataError(f"expected {out.n_entries} entries, got {len(flat)}")
        for value, (i, j) in zip(flat, out.cells()):
            out.set(i, j, value)
        return out


@dataclass
class HTParams:
    """Conditional-extremes parameter pair over an irregular layout:
    slopes in [-1, 1], scale exponents in (-inf, 1)."""

    alpha: IrregularMatrix
    beta: IrregularMatrix

    def __post_init__(self):
        a = self.alpha.flatten()
        b = self.beta.flatten()
        if np.any(np.abs(a) > 1 + 1e-12):
            raise DataError("alpha entries must lie in [-1, 1]")
        if np.any(b >= 1 + 1e-12):
            raise DataError("beta entries must be < 1")


# ---------------------------------------------------------------------------
# Parameter transforms
# ---------------------------------------------------------------------------

def _softplus(z):
    return np.logaddexp(0.0, z)


def _inv_softplus(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        return np.where(x > 30, x, np.log(np.expm1(np.clip(x, 1e-300, None))))


def alpha_to_z(alpha):
    return np.arctanh(np.clip(alpha, -1 + 1e-12, 1 - 1e-12))


def z_to_alpha(z):
    return np.tanh(z)


def beta_to_z(beta):
    return _inv_softplus(1.0 - np.asarray(beta, dtype=float))


def z_to_beta(z):
    return 1.0 - _softplus(z)


# ---------------------------------------------------------------------------
# The pseudo-likelihood engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionalFamily:
    """A (g1, g2) pair plus parameter bookkeeping for :func:`fit_conditional`.

    ``mean`` and ``scale`` map (theta, predictors) to (n, p) arrays; the
    last ``n_resp`` data columns are the responses, everything before them
    the predictors.  ``to_natural`` / ``to_unconstrained`` move between the
    optimizer's unconstrained coordinates and natural parameters.
    """

    name: str
    n_resp: int
    n_params: int
    mean: Callable
    scale: Callable
    to_natural: Callable
    to_unconstrained: Callable
    param_names: tuple = ()
    boundary: Callable = lambda theta: []


@dataclass
class ConditionalFit:
    """Result of a conditional pseudo-likelihood fit."""

    family: str
    theta: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    residuals: ResidualSample
    u: float | None
    nll: float
    grad_norm: float
    boundary: list
    n_obs: int
    param_names: tuple = ()


def _split(data, n_resp):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[1] <= n_resp:
        raise DataError("data must include predictor columns before the responses")
    return data[:, :-n_resp], data[:, -n_resp:]


def profile_nll(data, family: ConditionalFamily, theta) -> float:
    """Negative log pseudo-likelihood with (mu, sigma^2) profiled out."""
    pred, resp = _split(data, family.n_resp)
    m = family.mean(theta, pred)
    s = family.scale(theta, pred)
    if np.any(s <= 0) or not np.all(np.isfinite(m)) or not np.all(np.isfinite(s)):
        return 1e12
    r = (resp - m) / s
    mu = r.mean(axis=0)
    v = np.maximum(((r - mu) ** 2).mean(axis=0), _VAR_FLOOR)
    n = len(r)
    return float(n * family.n_resp * (_HALF_LOG_2PI + 0.5)
                 + 0.5 * n * np.sum(np.log(v)) + np.sum(np.log(s)))


def conditional_nll(data, family: ConditionalFamily, theta, mu, sigma2) -> float:
    """Full negative log pseudo-likelihood at given nuisance parameters."""
    pred, resp = _split(data, family.n_resp)
    m = family.mean(theta, pred)
    s = family.scale(theta, pred)
    r = (resp - m) / s
    mu = np.asarray(mu, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    term = _HALF_LOG_2PI + 0.5 * np.log(sigma2)[None, :] + np.log(s) \
        + 0.5 * (r - mu[None, :]) ** 2 / sigma2[None, :]
    return float(np.sum(term))


def _central_gradient(fn, x, rel_step: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        h = rel_step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return g


def fit_conditional(data, family: ConditionalFamily, theta0, u: float | None = None,
                    restarts: int = 5, rng=None, min_obs: int = 30,
                    polish: bool = True) -> ConditionalFit:
    """Fit a conditional model by Gaussian pseudo-likelihood.

    Runs a derivative-free simplex search from ``restarts`` starting points
    (the supplied initial value plus random perturbations), polishes the
    best with a quasi-Newton step, then recovers the profile-optimal
    nuisance parameters and the empirical residual sample.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = len(data)
    if n < min_obs:
        raise InsufficientDataError(f"need at least {min_obs} observations, got {n}")
    rng = np.random.default_rng(0) if rng is None else rng
    z0 = np.atleast_1d(family.to_unconstrained(np.asarray(theta0, dtype=float)))

    def objective(z):
        return profile_nll(data, family, family.to_natural(z))

    starts = [z0]
    for _ in range(max(restarts - 1, 0)):
        starts.append(z0 + rng.normal(0.0, 0.5, size=z0.shape))
    best = None
    for start in starts:
        res = optimize.minimize(objective, start, method="Nelder-Mead",
                                options={"xatol": 1e-8, "fatol": 1e-10,
                                         "maxiter": 4000 * len(z0)})
        if best is None or res.fun < best.fun:
            best = res
    if polish:
        res = optimize.minimize(objective, best.x, method="BFGS",
                                options={"gtol": 1e-8, "maxiter": 500})
        if np.isfinite(res.fun) and res.fun <= best.fun:
            best = res
    if not math.isfinite(best.fun):
        raise FitError("conditional fit did not reach a finite pseudo-likelihood",
                       diagnostics={"z": best.x.tolist(), "nll": best.fun})
    grad = _central_gradient(objective, best.x)
    grad_norm = float(np.max(np.abs(grad))) if np.all(np.isfinite(grad)) else math.inf

    theta = family.to_natural(best.x)
    pred, resp = _split(data, family.n_resp)
    m = family.mean(theta, pred)
    s = family.scale(theta, pred)
    r = (resp - m) / s
    mu = r.mean(axis=0)
    sigma2 = ((r - mu) ** 2).mean(axis=0)
    boundary = list(family.boundary(theta))
    if boundary:
        warnings.warn(f"parameters at constraint boundary: {boundary}",
                      BoundaryWarning, stacklevel=2)
    if np.any(sigma2 <= _VAR_FLOOR * 10):
        warnings.warn("residual spread is numerically zero", DegenerateFitWarning,
                      stacklevel=2)
    return ConditionalFit(
        family=family.name, theta=np.asarray(theta, dtype=float), mu=mu, sigma2=sigma2,
        residuals=ResidualSample(r), u=u, nll=float(best.fun), grad_norm=grad_norm,
        boundary=boundary, n_obs=n, param_names=family.param_names,
    )


# ---------------------------------------------------------------------------
# The two-parameter conditional-extremes pair fit
# ---------------------------------------------------------------------------

def ht_pair_family() -> ConditionalFamily:
    """Family for one response given one conditioning exceedance:
    mean alpha*y, scale y^beta."""

    def mean(theta, pred):
        return theta[0] * pred[:, :1]

    def scale(theta, pred):
        return np.exp(theta[1] * np.log(pred[:, :1]))

    def to_natural(z):
        return np.array([z_to_alpha(z[0]), z_to_beta(z[1])])

    def to_unconstrained(theta):
        return np.array([alpha_to_z(theta[0]), beta_to_z(theta[1])])

    def boundary(theta):
        flags = []
        if abs(theta[0]) > 1 - 1e-4:
            flags.append("alpha")
        if theta[1] > 1 - 1e-4:
            flags.append("beta")
        return flags

    return ConditionalFamily(
        name="ht_pair", n_resp=1, n_params=2, mean=mean, scale=scale,
        to_natural=to_natural, to_unconstrained=to_unconstrained,
        param_names=("alpha", "beta"), boundary=boundary,
    )


_HT_FAMILY = ht_pair_family()


def fit_ht_pair(y, w, u: float | None = None, restarts: int = 5, rng=None,
                init=None, min_obs: int = 30) -> ConditionalFit:
    """Fit one (alpha, beta) pair of the conditional-extremes working model
    ``w = alpha*y + y^beta * eps`` for conditioning exceedances ``y``."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if y.shape != w.shape:
        raise DataError("y and w must have equal length")
    if np.any(y <= 1.0):
        raise DataError("conditioning values must exceed 1 on Laplace scale")
    if init is None:
        denom = float(np.sum(y * y))
        a0 = float(np.clip(np.sum(w * y) / denom, -0.95, 0.95))
        init = (a0, 0.1)
    data = np.column_stack([y, w])
    return fit_conditional(data, _HT_FAMILY, init, u=u, restarts=restarts,
                           rng=rng, min_obs=min_obs)


# ---------------------------------------------------------------------------
# Peak-period model
# ---------------------------------------------------------------------------

@dataclass
class PeakModel:
    """Conditional-extremes model of the peak period over the irregular
    layout, with a joint residual sample of dimension (2k-1)*d - 1."""

    k: int
    u: float
    params: HTParams
    mu: np.ndarray
    sigma2: np.ndarray
    residuals: ResidualSample
    n_obs: int
    n_skipped: int = 0

    def __post_init__(self):
        expected = (2 * self.k - 1) * self.params.alpha.d - 1
        if self.residuals.dim != expected:
            raise DataError(f"joint residual dimension must be {expected}")


def peak_windows(excursions, k: int):
    """Stack usable (2k-1, 2) peak windows; returns (windows, n_skipped)."""
    rows = []
    skipped = 0
    for e in excursions:
        if e.censored:
            skipped += 1
            continue
        try:
            _, pp, _ = partition(e, k)
        except CensoredPeakError:
            skipped += 1
            continue
        rows.append(pp.rows)
    if not rows:
        return np.empty((0, 2 * k - 1, 2)), skipped
    return np.asarray(rows), skipped


def fit_peak_model(excursions, k: int, u: float, restarts: int = 5, rng=None,
                   min_excursions: int = 50) -> PeakModel:
    """Fit every irregular entry of the peak period on the excursion maximum.

    Each entry gets its own (alpha, beta) pseudo-likelihood fit sharing the
    conditioning variable (the maximum); the joint residual sample across
    entries preserves their dependence for simulation.
    """
    wins, skipped = peak_windows(excursions, k)
    if len(wins) < min_excursions:
        raise InsufficientDataError(
            f"need at least {min_excursions} non-censored excursions, got {len(wins)}")
    rng = np.random.default_rng(0) if rng is None else rng
    y0 = wins[:, k - 1, 0]
    alpha = IrregularMatrix.peak_layout(k)
    beta = IrregularMatrix.peak_layout(k)
    mus, sig2s, res_cols = [], [], []
    for i, j in alpha.cells():
        w = wins[:, (k - 1) + i, j]
        fit = fit_ht_pair(y0, w, u=u, restarts=restarts, rng=rng)
        alpha.set(i, j, fit.theta[0])
        beta.set(i, j, fit.theta[1])
        mus.append(float(fit.mu[0]))
        sig2s.append(float(fit.sigma2[0]))
        res_cols.append(fit.residuals.values[:, 0])
    residuals = ResidualSample(np.column_stack(res_cols))
    return PeakModel(k=k, u=u, params=HTParams(alpha=alpha, beta=beta),
                     mu=np.array(mus), sigma2=np.array(sig2s),
                     residuals=residuals, n_obs=len(wins), n_skipped=skipped)


def simulate_peak(pm: PeakModel, y0: float, rng) -> PeakPeriod:
    """Simulate one peak period conditional on the maximum ``y0 > u``."""
    if y0 <= pm.u:
        raise DomainError("peak value must exceed the threshold")
    eps = kde_draw(pm.residuals, rng)
    k = pm.k
    rows = np.empty((2 * k - 1, 2))
    rows[k - 1, 0] = y0
    log_y0 = math.log(y0)
    for idx, (i, j) in enumerate(pm.params.alpha.cells()):
        a = pm.params.alpha.get(i, j)
        b = pm.params.beta.get(i, j)
        rows[(k - 1) + i, j] = a * y0 + math.exp(b * log_y0) * eps[idx]
    return PeakPeriod(k=k, rows=rows, u=pm.u)
