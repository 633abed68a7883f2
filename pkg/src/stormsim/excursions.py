"""Excursion extraction, peak/pre/post partitioning and extremal diagnostics.

An excursion is a maximal run of consecutive time steps where the driving
(first) component on Laplace scale exceeds a threshold u.  All dependence
models in this package are fitted to windows drawn from excursions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CensoredPeakError, DataError, InsufficientDataError


@dataclass
class Excursion:
    """A contiguous run of first-component threshold exceedances.

    Indices ``a``, ``b`` and ``i_star`` are absolute positions in the parent
    series; ``y`` holds the (b - a + 1, 2) Laplace-scale values of the run.
    ``head_pad`` / ``tail_pad`` keep a few neighbouring (below-threshold)
    rows for lagged diagnostics.  Physical-scale companions are optional.
    """

    a: int
    b: int
    i_star: int
    y: np.ndarray | None
    censored: bool = False
    theta_h: np.ndarray | None = None
    theta_w: np.ndarray | None = None
    hs: np.ndarray | None = None
    ws: np.ndarray | None = None
    head_pad: np.ndarray | None = None
    tail_pad: np.ndarray | None = None
    series: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (self.a <= self.i_star <= self.b):
            raise DataError("peak index must lie inside [a, b]")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=float)
            if self.y.shape != (self.length, 2):
                raise DataError(f"y must have shape ({self.length}, 2)")
            rel = self.i_star - self.a
            if np.argmax(self.y[:, 0]) != rel and self.y[rel, 0] < np.max(self.y[:, 0]):
                raise DataError("i_star must locate the first-component maximum")
        elif self.hs is None:
            raise DataError("an excursion needs Laplace values or physical values")

    @property
    def length(self) -> int:
        return self.b - self.a + 1

    @property
    def peak_value(self) -> float:
        """First-component maximum on Laplace scale."""
        if self.y is None:
            raise DataError("excursion has no Laplace values")
        return float(self.y[self.i_star - self.a, 0])

    @property
    def peak_hs(self) -> float:
        if self.hs is None:
            raise DataError("excursion has no physical values")
        return float(self.hs[self.i_star - self.a])

    @property
    def peak_theta_h(self) -> float:
        if self.theta_h is None:
            raise DataError("excursion has no directions")
        return float(self.theta_h[self.i_star - self.a])


@dataclass
class PeakPeriod:
    """The 2k-1 consecutive bivariate observations centred on the maximum."""

    k: int
    rows: np.ndarray
    u: float | None = None
    neighbor_exceeds_peak: bool = False

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.shape[0] != 2 * self.k - 1:
            raise DataError(f"peak period of order {self.k} needs {2 * self.k - 1} rows")
        centre = self.rows[self.k - 1, 0]
        if self.u is not None and centre <= self.u:
            raise DataError("centre of the peak period must exceed the threshold")

    @property
    def centre_value(self) -> float:
        return float(self.rows[self.k - 1, 0])


def extract_excursions(series, u: float, pad: int = 4) -> list[Excursion]:
    """Find all maximal runs with first component above ``u``.

    ``series`` is an (n, 2) Laplace-scale array.  Runs touching the series
    boundary are flagged censored (their true extent is unknown) and are
    excluded from model fitting by callers.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 2 or series.shape[1] != 2:
        raise DataError("series must be an (n, 2) array")
    if u <= 0:
        raise DataError("threshold must be positive on Laplace scale")
    n = len(series)
    exceed = series[:, 0] > u
    if not np.any(exceed):
        return []
    diff = np.diff(exceed.astype(int))
    starts = list(np.nonzero(diff == 1)[0] + 1)
    ends = list(np.nonzero(diff == -1)[0])
    if exceed[0]:
        starts.insert(0, 0)
    if exceed[-1]:
        ends.append(n - 1)
    out = []
    for a, b in zip(starts, ends):
        seg = series[a:b + 1]
        i_star = a + int(np.argmax(seg[:, 0]))
        out.append(Excursion(
            a=a, b=b, i_star=i_star, y=seg.copy(),
            censored=(a == 0 or b == n - 1),
            head_pad=series[max(a - pad, 0):a].copy(),
            tail_pad=series[b + 1:b + 1 + pad].copy(),
            series=series,
        ))
    return out


def partition(e: Excursion, k: int):
    """Split an excursion into (pre indices, peak period, post indices).

    The peak period covers rows i_star-(k-1) .. i_star+(k-1) of the parent
    series, padded with actual neighbouring observations when the excursion
    ends inside the window.  Pre/post index ranges cover a..i_star and
    i_star..b and intersect exactly in the maximum.
    """
    if k < 1:
        raise DataError("model order must be at least 1")
    lo, hi = e.i_star - (k - 1), e.i_star + (k - 1)
    if lo >= e.a and hi <= e.b:
        rows = e.y[lo - e.a:hi - e.a + 1]
    else:
        if e.series is None:
            raise CensoredPeakError("peak window leaves the excursion and no parent series is attached")
        if lo < 0 or hi >= len(e.series):
            raise CensoredPeakError(
                f"peak window [{lo}, {hi}] exceeds the available series of length {len(e.series)}"
            )
        rows = e.series[lo:hi + 1]
    rows = np.asarray(rows, dtype=float)
    centre = rows[k - 1, 0]
    pp = PeakPeriod(k=k, rows=rows.copy(),
                    neighbor_exceeds_peak=bool(np.any(rows[:, 0] > centre)))
    pre = np.arange(e.a, e.i_star + 1)
    post = np.arange(e.i_star, e.b + 1)
    return pre, pp, post


def chain_windows(excursions, k: int, direction: str):
    """Stack length-(k+1) bivariate windows for chain-model fitting.

    For ``direction="forward"`` a window starts at every post-peak time t in
    [i_star, b] (all of which exceed the threshold) and runs forward
    t..t+k; responses beyond the excursion end are taken from the parent
    series (they may sit below the threshold, which is how the fitted chain
    learns to terminate).  ``"backward"`` mirrors this on reversed time over
    the pre-peak period.  Windows running off the series are dropped.

    Returns an (n, k+1, 2) array whose row 0 is the window start (the
    conditioning exceedance).
    """
    if direction not in ("forward", "backward"):
        raise DataError("direction must be 'forward' or 'backward'")
    wins = []
    for e in excursions:
        if e.censored or e.series is None:
            continue
        n = len(e.series)
        if direction == "forward":
            for t in range(e.i_star, e.b + 1):
                if t + k <= n - 1:
                    wins.append(e.series[t:t + k + 1])
        else:
            for t in range(e.a, e.i_star + 1):
                if t - k >= 0:
                    wins.append(e.series[t - k:t + 1][::-1])
    if not wins:
        return np.empty((0, k + 1, 2))
    return np.asarray(wins, dtype=float)


# ---------------------------------------------------------------------------
# Extremal dependence diagnostics
# ---------------------------------------------------------------------------

_PAIRS = {"HH": (0, 0), "HW": (0, 1), "WW": (1, 1)}


def _chi_cluster_counts(series, u, lag, pair):
    """Per-cluster (numerator, denominator) counts of the conditional
    exceedance estimator, clustered on runs of the conditioning variable."""
    ci, cj = _PAIRS[pair]
    cond = series[:, ci] > u
    n = len(series)
    idx = np.nonzero(cond)[0]
    idx = idx[idx + lag < n]
    if len(idx) == 0:
        return np.empty((0, 2))
    hits = (series[idx + lag, cj] > u).astype(float)
    # Cluster boundaries: breaks in consecutive conditioning indices.
    breaks = np.nonzero(np.diff(idx) > 1)[0]
    groups = np.split(np.arange(len(idx)), breaks + 1)
    return np.array([[hits[g].sum(), len(g)] for g in groups], dtype=float)


@dataclass
class ChiEstimate:
    value: float
    lo: float
    hi: float
    n_conditioning: int


def chi_estimate(series, u: float, lag: int, pair: str = "HH",
                 n_boot: int = 200, level: float = 0.95, seed: int = 0) -> ChiEstimate:
    """Empirical conditional exceedance probability with a bootstrap band.

    chi(u, lag) = P(second component > u at t+lag | first > u at t), with
    the component pair selected by ``pair`` in {"HH", "HW", "WW"}.  The band
    resamples whole conditioning clusters, since values inside a cluster are
    dependent.
    """
    if pair not in _PAIRS:
        raise DataError(f"pair must be one of {sorted(_PAIRS)}")
    if lag < 1:
        raise DataError("lag must be >= 1")
    series = np.asarray(series, dtype=float)
    counts = _chi_cluster_counts(series, u, lag, pair)
    n_cond = int(counts[:, 1].sum()) if len(counts) else 0
    if n_cond < 50:
        raise InsufficientDataError(f"only {n_cond} conditioning exceedances; need >= 50")
    value = counts[:, 0].sum() / counts[:, 1].sum()
    rng = np.random.default_rng(seed)
    m = len(counts)
    reps = np.empty(n_boot)
    for r in range(n_boot):
        pick = rng.integers(0, m, m)
        c = counts[pick]
        reps[r] = c[:, 0].sum() / c[:, 1].sum()
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(reps, [alpha, 1.0 - alpha])
    return ChiEstimate(value=float(value), lo=float(lo), hi=float(hi), n_conditioning=n_cond)


def chi_from_excursions(excursions, u: float, lag: int, pair: str = "HH") -> float:
    """Point estimate of chi from an excursion collection (e.g. a simulated
    ensemble), using stored pad rows for targets beyond the run.

    Conditioning times are in-run exceedances of the trigger variable; pairs
    whose target lies beyond the available pad are dropped.
    """
    if pair not in _PAIRS:
        raise DataError(f"pair must be one of {sorted(_PAIRS)}")
    ci, cj = _PAIRS[pair]
    num = den = 0
    for e in excursions:
        tail = e.tail_pad if e.tail_pad is not None else np.empty((0, 2))
        full = np.vstack([e.y, tail]) if len(tail) else e.y
        L = e.length
        for t in range(L):
            if e.y[t, ci] <= u:
                continue
            if t + lag >= len(full):
                continue
            den += 1
            num += bool(full[t + lag, cj] > u)
    if den == 0:
        raise InsufficientDataError("no conditioning exceedances with an observable target")
    return num / den


# ---------------------------------------------------------------------------
# Survival of an excursion around its maximum
# ---------------------------------------------------------------------------

def _qualifying(excursions, peak_range, scale):
    lo, hi = peak_range
    out = []
    for e in excursions:
        if e.censored:
            continue
        peak = e.peak_hs if scale == "physical" else e.peak_value
        if lo <= peak <= hi:
            out.append(e)
    return out


def survival_curve(excursions, u: float, peak_range, taus=None,
                   scale: str = "physical") -> dict[int, float]:
    """P(run extends through lag tau | peak in ``peak_range``).

    For tau >= 0 this is the fraction of qualifying excursions whose first
    component stays above the threshold from the maximum out to tau steps
    after it (symmetrically before it for tau < 0).  tau = 0 gives 1 by
    construction.
    """
    qual = _qualifying(excursions, peak_range, scale)
    if len(qual) < 20:
        raise InsufficientDataError(
            f"only {len(qual)} excursions with peak in range; need >= 20")
    if taus is None:
        t_max = max(max(e.b - e.i_star for e in qual), max(e.i_star - e.a for e in qual))
        taus = range(-t_max - 1, t_max + 2)
    out = {}
    n = len(qual)
    for tau in taus:
        if tau >= 0:
            count = sum(1 for e in qual if e.b - e.i_star >= tau)
        else:
            count = sum(1 for e in qual if e.i_star - e.a >= -tau)
        out[int(tau)] = count / n
    return out


def survival_band(excursions, u: float, peak_range, taus, n_boot: int = 200,
                  level: float = 0.95, seed: int = 0, scale: str = "physical"):
    """Bootstrap band for :func:`survival_curve`, resampling excursions."""
    qual = _qualifying(excursions, peak_range, scale)
    if len(qual) < 20:
        raise InsufficientDataError(
            f"only {len(qual)} excursions with peak in range; need >= 20")
    rng = np.random.default_rng(seed)
    taus = list(taus)
    reps = np.empty((n_boot, len(taus)))
    m = len(qual)
    post = np.array([e.b - e.i_star for e in qual])
    pre = np.array([e.i_star - e.a for e in qual])
    for r in range(n_boot):
        pick = rng.integers(0, m, m)
        for j, tau in enumerate(taus):
            if tau >= 0:
                reps[r, j] = np.mean(post[pick] >= tau)
            else:
                reps[r, j] = np.mean(pre[pick] >= -tau)
    alpha = (1.0 - level) / 2.0
    lo = np.quantile(reps, alpha, axis=0)
    hi = np.quantile(reps, 1.0 - alpha, axis=0)
    return {int(t): (float(l), float(h)) for t, l, h in zip(taus, lo, hi)}
