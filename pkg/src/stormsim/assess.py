"""Model comparison: tail distance metric, cross-validation harness and
bootstrap confidence intervals.

Comparison works on upper-tail quantiles of excursion response summaries: a
model is fitted on a small random subset of excursions, simulates an
ensemble, and its response quantiles are scored against the withheld
excursions by mean absolute relative error over a fixed percentile grid.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .engine import fit_excursion_model_from_excursions
from .errors import (
    CIError,
    ConfigError,
    DataError,
    DomainError,
    FitError,
    InsufficientDataError,
    SimulationError,
    StormsimWarning,
)
from .hm import HMModel, build_catalog, fit_windspeed_regression
from .response import DEFAULT_RESPONSE_CONFIGS, response_samples


@dataclass(frozen=True)
class PercentileGrid:
    """The 20 equidistant probabilities from 0.97 to 0.999 inclusive."""

    probs: tuple = tuple(np.linspace(0.97, 0.999, 20))

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if len(p) != 20:
            raise DataError("the percentile grid holds exactly 20 probabilities")
        if abs(p[0] - 0.97) > 1e-12 or abs(p[-1] - 0.999) > 1e-12:
            raise DataError("the percentile grid runs from 0.97 to 0.999")
        steps = np.diff(p)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-12:
            raise DataError("the percentile grid must increase in equal steps")

    def __array__(self, dtype=None):
        return np.asarray(self.probs, dtype=dtype or float)


def distance_D(model_sample, empirical_sample, grid: PercentileGrid | None = None) -> float:
    """Mean absolute relative quantile error over the percentile grid.

    D = (1/20) * sum_j |q_E(p_j) - q_M(p_j)| / q_E(p_j), with linear
    interpolation between order statistics on both samples.  The empirical
    quantiles sit in the denominator, so the metric is asymmetric in its
    arguments and requires them to be nonzero.
    """
    probs = np.asarray(grid if grid is not None else PercentileGrid())
    model_sample = np.asarray(model_sample, dtype=float)
    empirical_sample = np.asarray(empirical_sample, dtype=float)
    if len(model_sample) == 0 or len(empirical_sample) == 0:
        raise DataError("both samples must be non-empty")
    q_e = np.quantile(empirical_sample, probs, method="linear")
    q_m = np.quantile(model_sample, probs, method="linear")
    if np.any(q_e == 0):
        raise DomainError("an empirical grid quantile is zero; distance undefined")
    return float(np.mean(np.abs(q_e - q_m) / np.abs(q_e)))


# ---------------------------------------------------------------------------
# Model specs for cross-validation
# ---------------------------------------------------------------------------

@dataclass
class CVContext:
    """Shared ingredients every spec needs: the excursion threshold and the
    directional marginals (fitted once on the full series)."""

    u: float
    marginal_hs: object = None
    marginal_ws: object = None


@dataclass
class ChainSpec:
    """A peak + forward/backward chain model of one family and order."""

    family: str
    k: int
    restarts: int = 2
    max_rejects: int = 2000

    @property
    def name(self) -> str:
        return f"{self.family}({self.k})"

    def fit(self, train, ctx: CVContext, rng):
        return fit_excursion_model_from_excursions(
            train, k=self.k, family=self.family, u=ctx.u, restarts=self.restarts,
            rng=rng, marginal_hs=ctx.marginal_hs, marginal_ws=ctx.marginal_ws,
            with_directions=True, max_rejects=self.max_rejects)


@dataclass
class HMSpec:
    """The historical-matching baseline."""

    n_match: int = 20

    @property
    def name(self) -> str:
        return "hm"

    def fit(self, train, ctx: CVContext, rng):
        catalog = build_catalog(train)
        regression = fit_windspeed_regression(catalog)
        return HMModel(catalog=catalog, hs_marginal=ctx.marginal_hs,
                       regression=regression, n_match=self.n_match)


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

@dataclass
class CVRow:
    model: str
    config_index: int
    statistic: str              # "rmax" or "rsum"
    mean: float
    lo: float
    hi: float
    n_ok: int
    values: list = field(default_factory=list)


@dataclass
class CVReport:
    rows: list
    failures: list
    n_partitions: int
    train_frac: float
    ensemble_size: int
    seed: int

    def row(self, model: str, config_index: int, statistic: str) -> CVRow:
        for r in self.rows:
            if (r.model, r.config_index, r.statistic) == (model, config_index, statistic):
                return r
        raise KeyError((model, config_index, statistic))

    def to_json_dict(self) -> dict:
        return {
            "n_partitions": self.n_partitions,
            "train_frac": self.train_frac,
            "ensemble_size": self.ensemble_size,
            "seed": self.seed,
            "rows": [vars(r) for r in self.rows],
            "failures": [{"model": m, "partition": p, "error": msg}
                         for m, p, msg in self.failures],
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path):
        import csv as _csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = _csv.writer(fh)
            w.writerow(["model", "config_index", "statistic", "mean_D", "lo80", "hi80", "n_ok"])
            for r in self.rows:
                w.writerow([r.model, r.config_index, r.statistic,
                            repr(r.mean), repr(r.lo), repr(r.hi), r.n_ok])


def _cv_partition(args):
    (excursions, specs, ctx, responses, ensemble_size, seed, p, train_frac) = args
    rng_split = np.random.default_rng([seed, p])
    n = len(excursions)
    perm = rng_split.permutation(n)
    n_train = max(int(round(train_frac * n)), 1)
    train = [excursions[i] for i in perm[:n_train]]
    test = [excursions[i] for i in perm[n_train:]]
    test_stats = [response_samples(test, cfg) for cfg in responses]
    results = {}
    failures = []
    for s_idx, spec in enumerate(specs):
        # Every spec sees an identical, partition-specific stream so that
        # identical specs produce identical scores.
        rng_model = np.random.default_rng([seed, p, 104729])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", StormsimWarning)
                model = spec.fit(train, ctx, rng_model)
                sim = model.simulate_ensemble(ensemble_size, rng_model)
            sim_excs = list(sim)
            for c_idx, cfg in enumerate(responses):
                sim_rmax, sim_rsum = response_samples(sim_excs, cfg)
                emp_rmax, emp_rsum = test_stats[c_idx]
                results[(s_idx, c_idx, "rmax")] = distance_D(sim_rmax, emp_rmax)
                results[(s_idx, c_idx, "rsum")] = distance_D(sim_rsum, emp_rsum)
        except (FitError, InsufficientDataError, SimulationError, DomainError) as err:
            failures.append((spec.name, p, f"{type(err).__name__}: {err}"))
    return results, failures


def cross_validate(excursions, specs, n_partitions: int = 50,
                   train_frac: float = 0.25, responses=DEFAULT_RESPONSE_CONFIGS,
                   ensemble_size: int = 20_000, seed: int = 0,
                   ctx: CVContext | None = None, workers: int = 1,
                   min_excursions: int = 200) -> CVReport:
    """Score every spec by mean tail distance over random excursion splits.

    Each partition fits every spec on the training quarter of the
    excursions, simulates an ensemble, computes the excursion response
    summaries, and evaluates the distance against the withheld excursions.
    Fit failures are recorded per partition and never silently dropped.
    Reproducible bit-for-bit given (data, seed).
    """
    usable = [e for e in excursions if not e.censored and e.hs is not None]
    if len(usable) < min_excursions:
        raise InsufficientDataError(
            f"cross-validation needs >= {min_excursions} usable excursions, "
            f"got {len(usable)}")
    if not 0 < train_frac < 1:
        raise ConfigError("train_frac must lie in (0, 1)")
    if ctx is None:
        raise ConfigError("a CVContext (threshold + marginals) is required")
    names = [spec.name for spec in specs]
    jobs = [(usable, specs, ctx, tuple(responses), ensemble_size, seed, p, train_frac)
            for p in range(n_partitions)]
    if workers <= 1:
        outcomes = [_cv_partition(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_cv_partition, jobs))

    rows = []
    failures = []
    for _, fails in outcomes:
        failures.extend(fails)
    for s_idx, name in enumerate(names):
        for c_idx in range(len(responses)):
            for stat in ("rmax", "rsum"):
                values = [res[(s_idx, c_idx, stat)] for res, _ in outcomes
                          if (s_idx, c_idx, stat) in res]
                if values:
                    lo, hi = np.quantile(values, [0.1, 0.9])
                    rows.append(CVRow(model=name, config_index=c_idx, statistic=stat,
                                      mean=float(np.mean(values)), lo=float(lo),
                                      hi=float(hi), n_ok=len(values),
                                      values=[float(v) for v in values]))
                else:
                    rows.append(CVRow(model=name, config_index=c_idx, statistic=stat,
                                      mean=math.nan, lo=math.nan, hi=math.nan,
                                      n_ok=0, values=[]))
    return CVReport(rows=rows, failures=failures, n_partitions=n_partitions,
                    train_frac=train_frac, ensemble_size=ensemble_size, seed=seed)


# ---------------------------------------------------------------------------
# Bootstrap confidence intervals
# ---------------------------------------------------------------------------

@dataclass
class BootstrapCI:
    names: list
    point: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    n_failed: int
    level: float

    def covers(self, truth) -> np.ndarray:
        truth = np.asarray(truth, dtype=float)
        return (self.lo <= truth) & (truth <= self.hi)


def _as_named(result):
    if isinstance(result, dict):
        names = list(result.keys())
        return names, np.array([float(result[k]) for k in names])
    arr = np.atleast_1d(np.asarray(result, dtype=float))
    return [f"p{i}" for i in range(len(arr))], arr


def bootstrap_ci(fit_fn, excursions, n_boot: int = 200, level: float = 0.90,
                 seed: int = 0, max_failure_frac: float = 0.10) -> BootstrapCI:
    """Percentile bootstrap intervals under excursion-level resampling.

    ``fit_fn(excursions, rng)`` must return a parameter dict or vector and
    be deterministic given its inputs.  More than ``max_failure_frac``
    failed replicates aborts with :class:`CIError`.
    """
    if not 0 < level < 1:
        raise ConfigError("level must lie in (0, 1)")
    excursions = list(excursions)
    m = len(excursions)
    if m < 2:
        raise InsufficientDataError("bootstrap needs at least 2 excursions")
    names, point = _as_named(fit_fn(excursions, np.random.default_rng([seed, 2**32])))
    reps = np.full((n_boot, len(point)), np.nan)
    failed = 0
    for r in range(n_boot):
        rng = np.random.default_rng([seed, r])
        pick = rng.integers(0, m, m)
        sample = [excursions[i] for i in pick]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", StormsimWarning)
                _, reps[r] = _as_named(fit_fn(sample, rng))
        except (FitError, InsufficientDataError, DomainError) as err:
            failed += 1
    if failed > max_failure_frac * n_boot:
        raise CIError(f"{failed}/{n_boot} bootstrap replicates failed")
    good = reps[~np.isnan(reps).any(axis=1)]
    alpha = (1.0 - level) / 2.0
    lo = np.quantile(good, alpha, axis=0)
    hi = np.quantile(good, 1.0 - alpha, axis=0)
    return BootstrapCI(names=names, point=point, lo=lo, hi=hi,
                       n_failed=failed, level=level)
