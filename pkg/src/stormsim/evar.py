"""Extremal vector autoregression of order k.

The transition for the next d-vector given the last k vectors is

    Y_next = sum_i Phi[i] @ Y_{lag i} + y^B * eps,

with y the window-start driver exceedance and eps a d-dimensional residual
independent of the history.  The special case B = 0 behaves like a plain
vector autoregression estimated on extreme windows only (no stationarity
constraint is imposed).  Because the lagged regressors are themselves
collinear along the conditional-extremes direction, the likelihood is
optimized in reparameterized coordinates in which one coordinate measures
the deviation from that collinearity and the others incremental departures;
the map is an exact triangular bijection given per-lag conditional-extremes
slopes, so the optimum is unchanged.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .condext import (
    ConditionalFamily,
    ResidualSample,
    beta_to_z,
    fit_conditional,
    fit_ht_pair,
    kde_draw,
    z_to_beta,
)
from .errors import DataError, DomainError, InsufficientDataError, ReparamUndefinedError, StormsimWarning
from .excursions import chain_windows

_ZERO_TOL = 1e-10


@dataclass
class ReparamMap:
    """Per-lag conditional-extremes slopes used by the reparameterization.

    ``alpha_hat[i, j]`` is the slope of variable j at lead (k - i) given the
    driver, for i = 0..k; the driver's own cell alpha_hat[k, 0] equals 1.
    """

    alpha_hat: np.ndarray

    def __post_init__(self):
        self.alpha_hat = np.asarray(self.alpha_hat, dtype=float)
        if self.alpha_hat.ndim != 2:
            raise DataError("alpha_hat must be a (k+1, d) matrix")
        if abs(self.alpha_hat[-1, 0] - 1.0) > 1e-12:
            raise DataError("the driver's own slope alpha_hat[k, 0] must be 1")
        if np.any(np.abs(self.alpha_hat) > 1 + 1e-9):
            raise DataError("alpha_hat entries must lie in [-1, 1]")

    @property
    def k(self) -> int:
        return self.alpha_hat.shape[0] - 1

    @property
    def d(self) -> int:
        return self.alpha_hat.shape[1]

    def check_divisors(self):
        if np.any(np.abs(self.alpha_hat[1:, :]) < _ZERO_TOL):
            raise ReparamUndefinedError(
                "a dividing alpha_hat entry is zero; reparameterization undefined")


def _chain_cells(k: int, d: int):
    """Entry order (block m = k..1, source j = 0..d-1) used by the
    triangular reparameterization; the first entry is the base cell."""
    return [(m, j) for m in range(k, 0, -1) for j in range(d)]


def reparameterize(phi, m: ReparamMap) -> list[np.ndarray]:
    """Map raw coefficient matrices to decorrelated coordinates.

    For each target row the entries are combined through the per-lag slopes
    so that the base coordinate equals the full slope-weighted sum minus the
    driver's own k-step slope; it vanishes exactly when the collinearity
    identity holds.
    """
    m.check_divisors()
    phi = [np.asarray(p, dtype=float) for p in phi]
    k, d = m.k, m.d
    if len(phi) != k or any(p.shape != (d, d) for p in phi):
        raise DataError(f"phi must be {k} matrices of shape ({d}, {d})")
    cells = _chain_cells(k, d)
    out = [np.empty((d, d)) for _ in range(k)]
    for l in range(d):
        suffix = 0.0
        tilde = {}
        for t in range(len(cells) - 1, -1, -1):
            blk, j = cells[t]
            q = m.alpha_hat[blk, j]
            suffix += phi[blk - 1][l, j] * q
            tilde[(blk, j)] = suffix / q
        base_blk, base_j = cells[0]
        q0 = m.alpha_hat[base_blk, base_j]
        tilde[(base_blk, base_j)] = (suffix - m.alpha_hat[0, l]) / q0
        for blk, j in cells:
            out[blk - 1][l, j] = tilde[(blk, j)]
    return out


def unreparameterize(phi_tilde, m: ReparamMap) -> list[np.ndarray]:
    """Exact inverse of :func:`reparameterize`."""
    m.check_divisors()
    phi_tilde = [np.asarray(p, dtype=float) for p in phi_tilde]
    k, d = m.k, m.d
    if len(phi_tilde) != k or any(p.shape != (d, d) for p in phi_tilde):
        raise DataError(f"phi_tilde must be {k} matrices of shape ({d}, {d})")
    cells = _chain_cells(k, d)
    out = [np.empty((d, d)) for _ in range(k)]
    for l in range(d):
        suffixes = np.empty(len(cells) + 1)
        suffixes[-1] = 0.0
        for t, (blk, j) in enumerate(cells):
            q = m.alpha_hat[blk, j]
            s = phi_tilde[blk - 1][l, j] * q
            if t == 0:
                s += m.alpha_hat[0, l]
            suffixes[t] = s
        for t, (blk, j) in enumerate(cells):
            q = m.alpha_hat[blk, j]
            out[blk - 1][l, j] = (suffixes[t] - suffixes[t + 1]) / q
    return out


@dataclass
class EVARParams:
    """Fitted extremal vector autoregression."""

    k: int
    u: float
    phi: list
    b: np.ndarray
    residuals: ResidualSample
    direction: str
    mu: np.ndarray = None
    sigma2: np.ndarray = None
    reparam: ReparamMap | None = None
    n_obs: int = 0

    def __post_init__(self):
        self.phi = [np.asarray(p, dtype=float) for p in self.phi]
        self.b = np.asarray(self.b, dtype=float)
        if self.direction not in ("forward", "backward"):
            raise DataError("direction must be 'forward' or 'backward'")
        d = self.phi[0].shape[0]
        if len(self.phi) != self.k or any(p.shape != (d, d) for p in self.phi):
            raise DataError("phi must hold k square matrices")
        if np.any(self.b >= 1):
            raise DataError("scale exponents must be < 1")
        if self.residuals.dim != d:
            raise DataError(f"residual dimension must be {d}")

    @property
    def d(self) -> int:
        return self.phi[0].shape[0]

    def step(self, history, rng) -> np.ndarray:
        history = np.asarray(history, dtype=float)
        return evar_step(history, self, float(history[0, 0]), rng)


def evar_step(history, p: EVARParams, y: float, rng) -> np.ndarray:
    """One chain step: deterministic part sum_i Phi[i] @ history[-i] plus
    y^B-scaled residual drawn unconditionally from the stored kernel density."""
    history = np.asarray(history, dtype=float)
    if history.shape != (p.k, p.d):
        raise DataError(f"history must be a ({p.k}, {p.d}) array")
    if y <= p.u:
        raise DomainError("window-start driver value must exceed the threshold")
    det = np.zeros(p.d)
    for i in range(1, p.k + 1):
        det += p.phi[i - 1] @ history[p.k - i]
    eps = kde_draw(p.residuals, rng)
    return det + y ** p.b * eps


def deterministic_step(history, p: EVARParams) -> np.ndarray:
    """The mean part of :func:`evar_step` (no residual)."""
    history = np.asarray(history, dtype=float)
    det = np.zeros(p.d)
    for i in range(1, p.k + 1):
        det += p.phi[i - 1] @ history[p.k - i]
    return det


def fit_alpha_map(wins, u: float, restarts: int = 3, rng=None) -> ReparamMap:
    """Per-lag pairwise conditional-extremes slopes from chain windows.

    wins has shape (n, k+1, d); the slope of variable j at lead r given the
    window-start driver lands in alpha_hat[k - r, j].
    """
    n, kp1, d = wins.shape
    k = kp1 - 1
    rng = np.random.default_rng(0) if rng is None else rng
    ahat = np.empty((k + 1, d))
    y = wins[:, 0, 0]
    for r in range(k + 1):
        for j in range(d):
            if r == 0 and j == 0:
                ahat[k, 0] = 1.0
                continue
            fit = fit_ht_pair(y, wins[:, r, j], u=u, restarts=restarts, rng=rng)
            ahat[k - r, j] = fit.theta[0]
    return ReparamMap(alpha_hat=ahat)


def _phi_ols(wins):
    """Least-squares coefficient start: regress the final row on the k
    history rows (no scale term)."""
    n, kp1, d = wins.shape
    k = kp1 - 1
    lags = wins[:, :k, :].reshape(n, k * d)
    resp = wins[:, k, :]
    coef, *_ = np.linalg.lstsq(lags, resp, rcond=None)
    # coef[(row i)*d + j, l] multiplies window row i, variable j for target l
    phi = [np.empty((d, d)) for _ in range(k)]
    for i in range(1, k + 1):
        for j in range(d):
            for l in range(d):
                phi[i - 1][l, j] = coef[(k - i) * d + j, l]
    return phi


def _evar_family(k: int, d: int, u: float, force_b_zero: bool,
                 rmap: ReparamMap | None) -> ConditionalFamily:
    n_phi = k * d * d

    def theta_to_coef(theta):
        # theta holds raw phi entries (block-major, row-major within block).
        coef = np.empty((k * d, d))
        for i in range(1, k + 1):
            block = theta[(i - 1) * d * d:i * d * d].reshape(d, d)
            for j in range(d):
                coef[(k - i) * d + j, :] = block[:, j]
        return coef

    def mean(theta, pred):
        lags = pred[:, 1:]
        return lags @ theta_to_coef(theta)

    if force_b_zero:
        def scale(theta, pred):
            return np.ones((len(pred), d))
    else:
        def scale(theta, pred):
            b = theta[n_phi:]
            return pred[:, :1] ** b[None, :]

    def phis_from_flat(flat):
        return [flat[(i) * d * d:(i + 1) * d * d].reshape(d, d) for i in range(k)]

    def flat_from_phis(phis):
        return np.concatenate([p.ravel() for p in phis])

    def to_natural(z):
        phis = phis_from_flat(np.asarray(z[:n_phi], dtype=float))
        if rmap is not None:
            phis = unreparameterize(phis, rmap)
        theta = flat_from_phis(phis)
        if not force_b_zero:
            theta = np.concatenate([theta, z_to_beta(z[n_phi:])])
        return theta

    def to_unconstrained(theta):
        phis = phis_from_flat(np.asarray(theta[:n_phi], dtype=float))
        if rmap is not None:
            phis = reparameterize(phis, rmap)
        z = flat_from_phis(phis)
        if not force_b_zero:
            z = np.concatenate([z, beta_to_z(theta[n_phi:])])
        return z

    def boundary(theta):
        if force_b_zero:
            return []
        return ["b"] if np.any(theta[n_phi:] > 1 - 1e-4) else []

    names = tuple(
        f"phi{i}_{l}{j}" for i in range(1, k + 1) for l in range(d) for j in range(d)
    ) + (() if force_b_zero else tuple(f"b_{j}" for j in range(d)))
    return ConditionalFamily(
        name="evar0" if force_b_zero else "evar",
        n_resp=d, n_params=n_phi + (0 if force_b_zero else d),
        mean=mean, scale=scale, to_natural=to_natural,
        to_unconstrained=to_unconstrained, param_names=names, boundary=boundary,
    )


def fit_evar(excursions, k: int, direction: str, u: float,
             force_b_zero: bool = False, restarts: int = 5, rng=None,
             reparam: bool = True, min_windows: int = 30) -> EVARParams:
    """Fit an order-k extremal vector autoregression by pseudo-likelihood.

    With ``reparam=True`` (default) the per-lag slope map is estimated first
    and the optimizer runs in the decorrelated coordinates; the optimum is
    identical either way.  ``force_b_zero`` pins the scale exponents to 0.
    """
    wins = chain_windows(excursions, k, direction)
    return fit_evar_windows(wins, k, direction, u, force_b_zero=force_b_zero,
                            restarts=restarts, rng=rng, reparam=reparam,
                            min_windows=min_windows)


def fit_evar_windows(wins, k: int, direction: str, u: float,
                     force_b_zero: bool = False, restarts: int = 5, rng=None,
                     reparam: bool = True, min_windows: int = 30) -> EVARParams:
    """As :func:`fit_evar` but on a prepared (n, k+1, d) window stack."""
    if len(wins) < min_windows:
        raise InsufficientDataError(
            f"only {len(wins)} usable windows for order {k}; need >= {min_windows}")
    rng = np.random.default_rng(0) if rng is None else rng
    n, kp1, d = wins.shape
    rmap = None
    if reparam:
        try:
            rmap = fit_alpha_map(wins, u, rng=rng)
            rmap.check_divisors()
        except ReparamUndefinedError:
            warnings.warn("reparameterization undefined (zero slope divisor); "
                          "fitting in raw coordinates", StormsimWarning, stacklevel=2)
            rmap = None
    family = _evar_family(k, d, u, force_b_zero, rmap)
    phi0 = _phi_ols(wins)
    theta0 = np.concatenate([np.concatenate([p.ravel() for p in phi0])]
                            + ([] if force_b_zero else [np.full(d, 0.3)]))
    y = wins[:, 0, 0]
    lags = wins[:, :k, :].reshape(n, k * d)
    resp = wins[:, k, :]
    data = np.column_stack([y, lags, resp])
    fit = fit_conditional(data, family, theta0, u=u, restarts=restarts, rng=rng)
    n_phi = k * d * d
    phi = [fit.theta[i * d * d:(i + 1) * d * d].reshape(d, d) for i in range(k)]
    b = np.zeros(d) if force_b_zero else np.asarray(fit.theta[n_phi:])
    return EVARParams(k=k, u=u, phi=phi, b=b, residuals=fit.residuals,
                      direction=direction, mu=fit.mu, sigma2=fit.sigma2,
                      reparam=rmap, n_obs=n)
