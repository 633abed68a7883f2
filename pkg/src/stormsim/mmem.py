"""Multivariate Markov extremal model of order k (bivariate).

The chain transition reuses the conditional-extremes working form on a
length-(k+1) window: with the window-start driver value y > u as the
conditioning variable, every other cell of the window satisfies

    Y_cell = alpha0_cell * y + y^beta0_cell * eps_cell.

Advancing the chain means computing the residuals implied by the current
history, then drawing the final (new-time) residual pair conditionally on
them from the stored joint kernel density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .condext import (
    HTParams,
    IrregularMatrix,
    ResidualSample,
    fit_ht_pair,
    kde_conditional_sample,
)
from .errors import DataError, DomainError, InsufficientDataError
from .excursions import chain_windows


@dataclass
class MMEMParams:
    """Fitted chain model: irregular (k+1) x 2 coefficient matrices missing
    the window-start driver cell, and a joint residual sample of dimension
    2k+1 ordered history-first so the final pair can be drawn conditionally."""

    k: int
    u: float
    params: HTParams
    mu: np.ndarray
    sigma2: np.ndarray
    residuals: ResidualSample
    direction: str
    n_obs: int = 0

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise DataError("direction must be 'forward' or 'backward'")
        if self.residuals.dim != 2 * self.k + 1:
            raise DataError(f"joint residual dimension must be {2 * self.k + 1}")

    def step(self, history, rng) -> np.ndarray:
        return mmem_step(history, self, rng)


def _window_cells(k: int):
    """Flattening order of the irregular window: history cells first,
    the new-time pair (k, 0), (k, 1) last."""
    layout = IrregularMatrix.chain_layout(k)
    cells = list(layout.cells())
    assert cells[-2:] == [(k, 0), (k, 1)]
    return cells


def fit_mmem(excursions, k: int, direction: str, u: float, restarts: int = 5,
             rng=None, min_windows: int = 30) -> MMEMParams:
    """Fit the order-k chain model to post-peak (forward) or time-reversed
    pre-peak (backward) windows drawn from non-censored excursions.

    Every length-(k+1) window starting at an exceedance of the driver
    contributes one observation; each irregular cell gets its own
    (alpha, beta) pseudo-likelihood fit sharing the window-start value, and
    the joint residual matrix preserves cross-cell dependence.
    """
    wins = chain_windows(excursions, k, direction)
    if len(wins) < min_windows:
        raise InsufficientDataError(
            f"only {len(wins)} usable windows for order {k}; need >= {min_windows}")
    rng = np.random.default_rng(0) if rng is None else rng
    y = wins[:, 0, 0]
    alpha = IrregularMatrix.chain_layout(k)
    beta = IrregularMatrix.chain_layout(k)
    mus, sig2s, res_cols = [], [], []
    for i, j in _window_cells(k):
        fit = fit_ht_pair(y, wins[:, i, j], u=u, restarts=restarts, rng=rng)
        alpha.set(i, j, fit.theta[0])
        beta.set(i, j, fit.theta[1])
        mus.append(float(fit.mu[0]))
        sig2s.append(float(fit.sigma2[0]))
        res_cols.append(fit.residuals.values[:, 0])
    residuals = ResidualSample(np.column_stack(res_cols))
    return MMEMParams(k=k, u=u, params=HTParams(alpha=alpha, beta=beta),
                      mu=np.array(mus), sigma2=np.array(sig2s),
                      residuals=residuals, direction=direction, n_obs=len(wins))


def history_residuals(history, p: MMEMParams) -> np.ndarray:
    """Residuals implied by a k-row history under the fitted coefficients,
    in the stored flattening order (the 2k-1 history cells)."""
    history = np.asarray(history, dtype=float)
    if history.shape != (p.k, 2):
        raise DataError(f"history must be a ({p.k}, 2) array")
    y = history[0, 0]
    if y <= p.u:
        raise DomainError("window-start driver value must exceed the threshold")
    log_y = np.log(y)
    out = []
    for i, j in _window_cells(p.k)[:-2]:
        a = p.params.alpha.get(i, j)
        b = p.params.beta.get(i, j)
        out.append((history[i, j] - a * y) / np.exp(b * log_y))
    return np.array(out)


def mmem_step(history, p: MMEMParams, rng) -> np.ndarray:
    """Advance the chain one step given the last k bivariate values
    (oldest first; the window start must exceed the threshold)."""
    history = np.asarray(history, dtype=float)
    eps_hist = history_residuals(history, p)
    eps_new = kde_conditional_sample(p.residuals, eps_hist, rng)
    y = history[0, 0]
    log_y = np.log(y)
    a = np.array([p.params.alpha.get(p.k, 0), p.params.alpha.get(p.k, 1)])
    b = np.array([p.params.beta.get(p.k, 0), p.params.beta.get(p.k, 1)])
    return a * y + np.exp(b * log_y) * eps_new


def invert_history_residuals(eps_hist, y: float, p: MMEMParams) -> np.ndarray:
    """Rebuild the history rows from residuals and a window-start value;
    exact inverse of :func:`history_residuals`."""
    if y <= p.u:
        raise DomainError("window-start driver value must exceed the threshold")
    history = np.empty((p.k, 2))
    history[0, 0] = y
    log_y = np.log(y)
    for eps, (i, j) in zip(eps_hist, _window_cells(p.k)[:-2]):
        a = p.params.alpha.get(i, j)
        b = p.params.beta.get(i, j)
        history[i, j] = a * y + np.exp(b * log_y) * eps
    return history
