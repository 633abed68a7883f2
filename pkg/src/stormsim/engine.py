"""Full-excursion simulation: storm maximum, peak period, chain extensions,
rejection, directional paths and the physical back-transform.

One simulated excursion is built in four moves: draw the maximum from a
generalized Pareto fitted to excursion maxima; simulate the 2k-1 peak-period
rows conditional on it; where the flanking driver values all stay above the
threshold, extend each side with the fitted forward/backward chain until the
driver dips; and reject the whole draw whenever any simulated driver value
exceeds the maximum (which would contradict the peak's definition).
Directions are attached outward from the peak and physical values recovered
through the directional marginals.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .condext import PeakModel, fit_peak_model, simulate_peak
from .data import MetOceanSeries
from .directional import DirectionalModels, fit_wave_direction, fit_wind_offset, zeta
from .errors import ConfigError, DataError, RejectionRateWarning, SimulationError
from .evar import fit_evar
from .excursions import Excursion, extract_excursions
from .margins import GPDParams, SemiParametricMarginal, fit_gpd, fit_semiparametric, gpd_ppf, laplace_ppf
from .mmem import fit_mmem

FAMILIES = ("mmem", "evar", "evar0")
MAX_CHAIN_STEPS = 100_000


@dataclass
class ExcursionModel:
    """Composite generative model for whole excursions."""

    k: int
    u: float
    family: str
    peak: PeakModel
    forward: object
    backward: object
    storm_max: GPDParams
    peak_directions: np.ndarray | None = None
    dir_models: DirectionalModels | None = None
    marginal_hs: SemiParametricMarginal | None = None
    marginal_ws: SemiParametricMarginal | None = None
    max_rejects: int = 1000

    def __post_init__(self):
        if self.peak.k != self.k:
            raise DataError("peak model order must match the chain order")
        for chain in (self.forward, self.backward):
            if chain.k != self.k:
                raise DataError("forward/backward chain orders must match the peak order")

    @property
    def physical(self) -> bool:
        return self.marginal_hs is not None and self.dir_models is not None

    def simulate_ensemble(self, n: int, rng) -> "Ensemble":
        seed = int(np.asarray(rng.integers(0, 2**63 - 1)))
        return simulate_ensemble(self, n, seed=seed)


@dataclass
class Ensemble:
    """A simulated excursion collection with aggregated rejection statistics."""

    excursions: list
    n_rejected: int = 0
    n_runaway: int = 0

    def __iter__(self):
        return iter(self.excursions)

    def __len__(self):
        return len(self.excursions)

    @property
    def rejection_rate(self) -> float:
        total = self.n_rejected + len(self.excursions)
        return self.n_rejected / total if total else 0.0

    def summary(self) -> dict:
        lengths = [e.length for e in self.excursions]
        peaks = [e.peak_value for e in self.excursions if e.y is not None]
        return {
            "n": len(self.excursions),
            "n_rejected": self.n_rejected,
            "n_runaway": self.n_runaway,
            "rejection_rate": self.rejection_rate,
            "mean_length": float(np.mean(lengths)) if lengths else 0.0,
            "max_length": int(np.max(lengths)) if lengths else 0,
            "max_peak_laplace": float(np.max(peaks)) if peaks else 0.0,
        }


def _extend_side(chain, history, u, rng):
    """Run the chain until the driver dips to or below u; returns the new
    rows (dip included as the final row)."""
    rows = []
    hist = history.copy()
    for _ in range(MAX_CHAIN_STEPS):
        nxt = np.asarray(chain.step(hist, rng), dtype=float)
        rows.append(nxt)
        if nxt[0] <= u:
            return rows, True
        hist = np.vstack([hist[1:], nxt])
    return rows, False


def _draw_laplace_excursion(m: ExcursionModel, rng):
    """One accepted Laplace-scale draw; returns (full rows, left, right,
    centre position, rejections, runaways)."""
    k, u = m.k, m.u
    rejects = runaways = 0
    while True:
        if rejects > m.max_rejects:
            raise SimulationError(
                f"rejection cap exceeded: {rejects} rejections "
                f"(rate {rejects / (rejects + 1):.2%}); the fitted model is "
                "inconsistent with its own peak definition")
        y0 = u + float(gpd_ppf(rng.uniform(), m.storm_max))
        pp = simulate_peak(m.peak, y0, rng)
        rows = pp.rows
        centre = k - 1
        fwd: list = []
        bwd: list = []
        ok = True
        if k == 1 or np.all(rows[k:, 0] > u):
            history = rows[centre:centre + k]
            fwd, ok = _extend_side(m.forward, history, u, rng)
        if ok and (k == 1 or np.all(rows[:k - 1, 0] > u)):
            history = rows[centre::-1][:k]
            bwd, ok2 = _extend_side(m.backward, history, u, rng)
            ok = ok and ok2
        if not ok:
            runaways += 1
            rejects += 1
            continue
        parts = []
        if bwd:
            parts.append(np.asarray(bwd[::-1]))
        parts.append(rows)
        if fwd:
            parts.append(np.asarray(fwd))
        full = np.vstack(parts)
        centre_full = (len(bwd) if bwd else 0) + centre
        left = centre_full
        while left - 1 >= 0 and full[left - 1, 0] > u:
            left -= 1
        right = centre_full
        while right + 1 < len(full) and full[right + 1, 0] > u:
            right += 1
        run_max = float(np.max(full[left:right + 1, 0]))
        if run_max > y0:
            rejects += 1
            continue
        return full, left, right, centre_full, rejects, runaways


def simulate_excursion(m: ExcursionModel, rng, pad: int = 4):
    """Simulate one excursion; Laplace always, physical scales when the
    model carries marginals and directional models."""
    full, left, right, centre, rejects, runaways = _draw_laplace_excursion(m, rng)
    run = full[left:right + 1].copy()
    L = len(run)
    i_star = centre - left
    exc = Excursion(
        a=0, b=L - 1, i_star=i_star, y=run,
        head_pad=full[max(left - pad, 0):left].copy(),
        tail_pad=full[right + 1:right + 1 + pad].copy(),
    )
    if m.physical:
        _attach_physical_simulated(m, exc, rng)
    return exc, rejects, runaways


def _attach_physical_simulated(m: ExcursionModel, exc: Excursion, rng):
    """Simulate directions outward from the peak, interleaving the wave
    marginal back-transform so the direction-step spread can depend on the
    already-simulated physical wave height."""
    run = exc.y
    L = exc.length
    i_peak = exc.i_star
    dm = m.dir_models
    theta = np.empty(L)
    hs = np.empty(L)
    theta[i_peak] = float(rng.choice(m.peak_directions)) % 360.0
    hs[i_peak] = m.marginal_hs.from_laplace(run[i_peak, 0], theta[i_peak])

    wm = dm.wave_post
    hist = np.zeros(wm.order)
    for t in range(i_peak, L - 1):
        sd = zeta(hs[t], wm.lam)
        delta = float(hist @ wm.ar) + sd * rng.standard_normal()
        theta[t + 1] = (theta[t] + float(wm.from_gauss(delta))) % 360.0
        hs[t + 1] = m.marginal_hs.from_laplace(run[t + 1, 0], theta[t + 1])
        hist = np.concatenate([[delta], hist[:-1]])
    wm = dm.wave_pre
    hist = np.zeros(wm.order)
    for t in range(i_peak, 0, -1):
        sd = zeta(hs[t], wm.lam)
        delta = float(hist @ wm.ar) + sd * rng.standard_normal()
        theta[t - 1] = (theta[t] + float(wm.from_gauss(delta))) % 360.0
        hs[t - 1] = m.marginal_hs.from_laplace(run[t - 1, 0], theta[t - 1])
        hist = np.concatenate([[delta], hist[:-1]])

    from .condext import kde_draw  # local import to avoid cycle at module load

    gamma = np.empty(L)
    gamma[i_peak] = float(rng.choice(dm.offset_post.init_sample))
    om = dm.offset_post
    hist = np.full(om.order, gamma[i_peak])
    for t in range(i_peak, L - 1):
        gamma[t + 1] = float(hist @ om.ar) + float(kde_draw(om.residuals, rng)[0])
        hist = np.concatenate([[gamma[t + 1]], hist[:-1]])
    om = dm.offset_pre
    hist = np.full(om.order, gamma[i_peak])
    for t in range(i_peak, 0, -1):
        gamma[t - 1] = float(hist @ om.ar) + float(kde_draw(om.residuals, rng)[0])
        hist = np.concatenate([[gamma[t - 1]], hist[:-1]])
    theta_w = (theta + gamma) % 360.0

    exc.theta_h = theta
    exc.theta_w = theta_w
    exc.hs = hs
    exc.ws = m.marginal_ws.from_laplace(run[:, 1], theta_w)


def _simulate_chunk(args):
    model, seeds, pad = args
    out = []
    rejected = runaway = 0
    for s in seeds:
        rng = np.random.default_rng(s)
        exc, r, w = simulate_excursion(model, rng, pad=pad)
        out.append(exc)
        rejected += r
        runaway += w
    return out, rejected, runaway


def simulate_ensemble(m: ExcursionModel, n: int, seed: int = 0, pad: int = 4,
                      workers: int = 1) -> Ensemble:
    """Simulate ``n`` independent excursions; bitwise reproducible for a
    given seed regardless of the worker count."""
    if n < 0:
        raise ConfigError("ensemble size must be non-negative")
    root = np.random.default_rng(seed)
    child_seeds = root.integers(0, 2**63 - 1, size=n)
    if n == 0:
        return Ensemble(excursions=[])
    if workers <= 1:
        excs, rejected, runaway = _simulate_chunk((m, child_seeds, pad))
    else:
        chunks = np.array_split(child_seeds, min(workers * 4, n))
        excs = []
        rejected = runaway = 0
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part, r, w in pool.map(_simulate_chunk,
                                       [(m, c, pad) for c in chunks if len(c)]):
                excs.extend(part)
                rejected += r
                runaway += w
    ens = Ensemble(excursions=excs, n_rejected=rejected, n_runaway=runaway)
    if ens.rejection_rate > 0.5:
        warnings.warn(f"rejection rate {ens.rejection_rate:.1%} exceeds 50%",
                      RejectionRateWarning, stacklevel=2)
    return ens


# ---------------------------------------------------------------------------
# Pipeline fitting
# ---------------------------------------------------------------------------

def prepare_excursions(series: MetOceanSeries, marginal_hs, marginal_ws,
                       u: float, pad: int = 4) -> list:
    """Transform a physical series to Laplace scale, extract excursions and
    attach the physical slices needed by directional and response models."""
    yh = marginal_hs.to_laplace(series.hs, series.theta_h)
    yw = marginal_ws.to_laplace(series.ws, series.theta_w)
    lap = np.column_stack([yh, yw])
    excs = extract_excursions(lap, u, pad=pad)
    for e in excs:
        sl = slice(e.a, e.b + 1)
        e.hs = series.hs[sl].copy()
        e.ws = series.ws[sl].copy()
        e.theta_h = series.theta_h[sl].copy()
        e.theta_w = series.theta_w[sl].copy()
    return excs


def fit_chain(excursions, k: int, direction: str, u: float, family: str,
              restarts: int = 5, rng=None):
    if family == "mmem":
        return fit_mmem(excursions, k, direction, u, restarts=restarts, rng=rng)
    if family == "evar":
        return fit_evar(excursions, k, direction, u, restarts=restarts, rng=rng)
    if family == "evar0":
        return fit_evar(excursions, k, direction, u, force_b_zero=True,
                        restarts=restarts, rng=rng)
    raise ConfigError(f"unknown chain family {family!r}; expected one of {FAMILIES}")


def fit_storm_max_gpd(excursions, u: float) -> GPDParams:
    """GPD of excursion-maximum excesses over the threshold, Laplace scale."""
    peaks = np.array([e.peak_value for e in excursions if not e.censored])
    return fit_gpd(peaks - u, u_x=u, zeta_u=0.5)


def fit_excursion_model(series: MetOceanSeries, k: int, family: str = "evar",
                        threshold_q: float = 0.95, n_bins: int = 8,
                        restarts: int = 5, seed: int = 0,
                        with_directions: bool = True, max_rejects: int = 1000):
    """Fit the complete excursion model to a physical met-ocean series.

    Returns (model, excursions); the excursions carry the Laplace series
    context used for fitting and are reusable for diagnostics.
    """
    rng = np.random.default_rng(seed)
    marginal_hs = fit_semiparametric(series.hs, series.theta_h, "hs", n_bins=n_bins,
                                     zeta_u=1.0 - threshold_q)
    marginal_ws = fit_semiparametric(series.ws, series.theta_w, "ws", n_bins=n_bins,
                                     zeta_u=1.0 - threshold_q)
    u = laplace_ppf(threshold_q)
    excs = prepare_excursions(series, marginal_hs, marginal_ws, u)
    model = fit_excursion_model_from_excursions(
        excs, k=k, family=family, u=u, restarts=restarts, rng=rng,
        marginal_hs=marginal_hs, marginal_ws=marginal_ws,
        with_directions=with_directions, max_rejects=max_rejects)
    return model, excs


def fit_excursion_model_from_excursions(excursions, k: int, family: str, u: float,
                                        restarts: int = 5, rng=None,
                                        marginal_hs=None, marginal_ws=None,
                                        with_directions: bool = True,
                                        max_rejects: int = 1000) -> ExcursionModel:
    """Fit peak, chains, storm-max law and (optionally) directional models
    on an already-prepared excursion collection."""
    rng = np.random.default_rng(0) if rng is None else rng
    peak = fit_peak_model(excursions, k, u, restarts=restarts, rng=rng)
    forward = fit_chain(excursions, k, "forward", u, family, restarts=restarts, rng=rng)
    backward = fit_chain(excursions, k, "backward", u, family, restarts=restarts, rng=rng)
    storm_max = fit_storm_max_gpd(excursions, u)
    dirs = None
    peak_dirs = None
    if with_directions and marginal_hs is not None:
        usable = [e for e in excursions if not e.censored and e.theta_h is not None]
        peak_dirs = np.array([e.peak_theta_h for e in usable])
        dirs = DirectionalModels(
            wave_pre=fit_wave_direction(excursions, side="pre"),
            wave_post=fit_wave_direction(excursions, side="post"),
            offset_pre=fit_wind_offset(excursions, side="pre"),
            offset_post=fit_wind_offset(excursions, side="post"),
        )
    return ExcursionModel(
        k=k, u=u, family=family, peak=peak, forward=forward, backward=backward,
        storm_max=storm_max, peak_directions=peak_dirs, dir_models=dirs,
        marginal_hs=marginal_hs, marginal_ws=marginal_ws, max_rejects=max_rejects)


# ---------------------------------------------------------------------------
# Ensemble CSV output
# ---------------------------------------------------------------------------

def write_ensemble_csv(ensemble, path):
    """One row per time step with an excursion id column; physical columns
    stay empty for Laplace-only ensembles."""
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["exc_id", "t_rel", "y_hs", "y_ws", "hs", "ws",
                         "theta_h", "theta_w"])
        for eid, e in enumerate(ensemble):
            for t in range(e.length):
                row = [eid, t - (e.i_star - e.a)]
                if e.y is not None:
                    row += [repr(float(e.y[t, 0])), repr(float(e.y[t, 1]))]
                else:
                    row += ["", ""]
                if e.hs is not None:
                    row += [repr(float(e.hs[t])), repr(float(e.ws[t])),
                            repr(float(e.theta_h[t])), repr(float(e.theta_w[t]))]
                else:
                    row += ["", "", "", ""]
                writer.writerow(row)
