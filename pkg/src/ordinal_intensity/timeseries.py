"""Monthly intensity series and the extrinsic forecasting toolkit.

Per-event quantities (mean intensity, predicate, quantifier, or an external
correlate) are averaged per location-month, gaps are linearly interpolated
and edges filled with the nearest observed value.  On top of the series:
first differencing, an augmented Dickey-Fuller stationarity test (constant
only, BIC lag selection, MacKinnon approximate critical values), AR/VAR
least-squares fits with BIC order selection, expanding-window one-step
cross-validation, Granger F-tests, and Pearson correlation.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import DataError, EventArrays, month_index, month_label
from .infer import SamplerConfig, sample_posterior, score_events
from .model import Hyperparams

logger = logging.getLogger(__name__)

# MacKinnon (2010) response-surface coefficients, constant-only case:
# crit = b0 + b1/n + b2/n^2 + b3/n^3
_ADF_CRIT = {
    "1%": (-3.43035, -6.5393, -16.786, -79.433),
    "5%": (-2.86154, -2.8903, -4.234, -40.04),
    "10%": (-2.56677, -1.5384, -2.809, 0.0),
}


class DegenerateSeriesError(ValueError):
    """Raised when a statistic is undefined for the given series."""


@dataclass
class IntensitySeries:
    """Contiguous monthly series for one location."""

    location: str
    start: int                 # first month index
    values: np.ndarray
    provenance: str = "external"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValueError("series values must be a non-empty 1-d array")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("series values must be finite")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def months(self) -> np.ndarray:
        return np.arange(self.start, self.start + len(self.values))

    @property
    def month_labels(self) -> list[str]:
        return [month_label(int(m)) for m in self.months]


def _values(series) -> np.ndarray:
    if isinstance(series, IntensitySeries):
        return series.values
    return np.asarray(series, dtype=np.float64)


def aggregate_monthly(
    values,
    locations,
    months,
    location: str,
    provenance: str = "external",
    month_range: tuple[int, int] | None = None,
    rescale: bool = False,
) -> IntensitySeries:
    """Average a per-event quantity into a contiguous monthly series.

    ``rescale`` min-max rescales the values to [0, 1] across *all* events
    before selecting the location (used for latent intensity scores).  Months
    without events are linearly interpolated; with an explicit ``month_range``
    (inclusive) the edges are extended with the nearest observed value.
    """
    values = np.asarray(values, dtype=np.float64)
    locations = np.asarray(locations, dtype="O")
    months = np.asarray(months, dtype=np.int64)
    if rescale:
        lo, hi = values.min(), values.max()
        if hi > lo:
            values = (values - lo) / (hi - lo)
        else:
            logger.info("rescale requested for a constant quantity; using zeros")
            values = np.zeros_like(values)
    mask = locations == location
    if not mask.any():
        raise DataError(f"location {location!r} has no events")
    obs_months, inverse = np.unique(months[mask], return_inverse=True)
    sums = np.zeros(obs_months.size)
    counts = np.zeros(obs_months.size)
    np.add.at(sums, inverse, values[mask])
    np.add.at(counts, inverse, 1.0)
    means = sums / counts
    first, last = (int(obs_months[0]), int(obs_months[-1])) if month_range is None else month_range
    full = np.arange(first, last + 1)
    series = np.interp(full, obs_months, means)
    return IntensitySeries(location=location, start=first, values=series, provenance=provenance)


def observed_months(arrays: EventArrays, location: str) -> np.ndarray:
    """Distinct months with events at a location (pre-interpolation view)."""
    mask = arrays.location == location
    if not mask.any():
        raise DataError(f"location {location!r} has no events")
    return np.unique(arrays.month[mask])


def difference(series):
    """First-order differencing; length shrinks by one."""
    vals = _values(series)
    if vals.size < 2:
        raise ValueError("series too short to difference")
    diffed = np.diff(vals)
    if isinstance(series, IntensitySeries):
        return IntensitySeries(
            location=series.location,
            start=series.start + 1,
            values=diffed,
            provenance=series.provenance,
        )
    return diffed


def align_series(series_list: list[IntensitySeries]) -> list[IntensitySeries]:
    """Clip series to their common month range."""
    start = max(s.start for s in series_list)
    end = min(s.start + len(s) for s in series_list)
    if end - start < 2:
        raise ValueError("series do not overlap enough to align")
    return [
        IntensitySeries(
            location=s.location,
            start=start,
            values=s.values[start - s.start: end - s.start],
            provenance=s.provenance,
        )
        for s in series_list
    ]


def _ols(x: np.ndarray, y: np.ndarray, ridge: float = 0.0):
    """Least squares with optional ridge fallback; returns (beta, resid, rank)."""
    if ridge:
        gram = x.T @ x + ridge * np.eye(x.shape[1])
        beta = np.linalg.solve(gram, x.T @ y)
        rank = x.shape[1]
    else:
        beta, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    return beta, resid, rank


@dataclass
class AdfResult:
    statistic: float
    reject_5pct: bool
    lag: int
    nobs: int
    critical_values: dict
    degenerate: bool = False


def _adf_design(values: np.ndarray, lag: int):
    dy = np.diff(values)
    n = dy.size - lag
    y = dy[lag:]
    cols = [np.ones(n), values[lag:-1]]
    for i in range(1, lag + 1):
        cols.append(dy[lag - i: dy.size - i])
    return np.column_stack(cols), y


def adf_test(series, max_lag: int | None = None) -> AdfResult:
    """Augmented Dickey-Fuller test with intercept.

    Lag order minimizes BIC up to floor((L-1)^(1/3)); the statistic is the
    t-ratio on the lagged level, compared against the MacKinnon approximate
    5% critical value.  ``reject_5pct`` True means stationary.
    """
    values = _values(series)
    length = values.size
    if length < 20:
        raise ValueError("series too short for the ADF test (need >= 20)")
    if np.ptp(values) == 0.0:
        return AdfResult(
            statistic=float("nan"),
            reject_5pct=False,
            lag=0,
            nobs=length - 1,
            critical_values={},
            degenerate=True,
        )
    if max_lag is None:
        max_lag = int(np.floor((length - 1) ** (1.0 / 3.0)))
    max_lag = min(max_lag, (length - 1) // 2 - 2)
    max_lag = max(max_lag, 0)

    # candidate comparison on the common sample (trimmed to max_lag)
    best_lag, best_bic = 0, np.inf
    dy = np.diff(values)
    common_n = dy.size - max_lag
    for lag in range(0, max_lag + 1):
        x, y = _adf_design(values, lag)
        x, y = x[-common_n:], y[-common_n:]
        _, resid, _ = _ols(x, y)
        ssr = float(resid @ resid)
        sigma2 = max(ssr / common_n, 1e-300)
        bic = common_n * np.log(sigma2) + (lag + 2) * np.log(common_n)
        if bic < best_bic:
            best_bic, best_lag = bic, lag

    x, y = _adf_design(values, best_lag)
    nobs = y.size
    beta, resid, rank = _ols(x, y)
    if rank < x.shape[1]:
        beta, resid, _ = _ols(x, y, ridge=1e-8)
        logger.info("ADF regression rank-deficient; ridge fallback")
    ssr = float(resid @ resid)
    dof = nobs - x.shape[1]
    if dof <= 0 or ssr <= 0.0:
        return AdfResult(float("nan"), False, best_lag, nobs, {}, degenerate=True)
    sigma2 = ssr / dof
    cov = sigma2 * np.linalg.inv(x.T @ x)
    stat = float(beta[1] / np.sqrt(cov[1, 1]))
    crit = {
        key: b0 + b1 / nobs + b2 / nobs**2 + b3 / nobs**3
        for key, (b0, b1, b2, b3) in _ADF_CRIT.items()
    }
    return AdfResult(
        statistic=stat,
        reject_5pct=bool(stat < crit["5%"]),
        lag=best_lag,
        nobs=nobs,
        critical_values=crit,
    )


@dataclass
class VarFit:
    """Least-squares (vector) autoregression chosen by BIC."""

    variables: list[str]
    lag: int
    coefs: np.ndarray        # (lag, d, d): coefs[l][i, j] = effect of var j at lag l+1 on var i
    intercept: np.ndarray    # (d,)
    resid_cov: np.ndarray    # (d, d)
    bic: float
    nobs: int

    def forecast_one(self, history: np.ndarray) -> np.ndarray:
        """One-step forecast from the trailing rows of (T, d) history."""
        history = np.atleast_2d(np.asarray(history, dtype=np.float64))
        if history.ndim == 2 and history.shape[1] != len(self.variables):
            history = history.T if history.shape[0] == len(self.variables) else history
        pred = self.intercept.copy()
        for l in range(self.lag):
            pred = pred + self.coefs[l] @ history[-1 - l]
        return pred


def _stack_series(series_set) -> tuple[np.ndarray, list[str]]:
    if isinstance(series_set, (IntensitySeries, np.ndarray)):
        series_set = [series_set]
    arrays, names = [], []
    for i, s in enumerate(series_set):
        arrays.append(_values(s))
        if isinstance(s, IntensitySeries):
            names.append(f"{s.provenance}:{s.location}")
        else:
            names.append(f"series{i}")
    lengths = {a.size for a in arrays}
    if len(lengths) != 1:
        raise ValueError("all series must have equal length")
    return np.column_stack(arrays), names


def _var_design(y_mat: np.ndarray, lag: int):
    t, d = y_mat.shape
    n = t - lag
    y = y_mat[lag:]
    cols = [np.ones((n, 1))]
    for l in range(1, lag + 1):
        cols.append(y_mat[lag - l: t - l])
    return np.hstack(cols), y


def _fit_var_lag(y_mat: np.ndarray, lag: int, trim: int | None = None):
    x, y = _var_design(y_mat, lag)
    if trim is not None:
        x, y = x[-trim:], y[-trim:]
    beta, resid, rank = _ols(x, y)
    if rank < x.shape[1]:
        beta, resid, _ = _ols(x, y, ridge=1e-8)
        logger.info("VAR design rank-deficient at lag %d; ridge fallback", lag)
    n = y.shape[0]
    cov = resid.T @ resid / n
    return beta, cov, n


def _bic(cov: np.ndarray, n: int, k: int) -> float:
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        logdet = -np.inf  # perfect fit
    return float(n * logdet + k * np.log(n))


def fit_var(series_set, max_lag: int = 12, min_tail: int = 10) -> VarFit:
    """Fit a (vector) autoregression, selecting the lag 1..max_lag by BIC.

    Candidates are compared on the common trimmed sample; the winner is refit
    on its own full sample.  BIC = n log det(residual covariance) + k log n
    with k the coefficient count.
    """
    y_mat, names = _stack_series(series_set)
    t, d = y_mat.shape
    if d > 2:
        raise ValueError("only univariate AR or pairwise VAR is supported")
    if max_lag < 1:
        raise ValueError("max_lag must be at least 1")
    max_lag = min(max_lag, (t - min_tail) // (d + 1))
    if max_lag < 1:
        raise ValueError(f"series too short (length {t}) for lag selection")

    common_n = t - max_lag
    best_lag, best_bic = 1, np.inf
    with np.errstate(divide="ignore"):
        for lag in range(1, max_lag + 1):
            k = d * (d * lag + 1)
            _, cov, _ = _fit_var_lag(y_mat, lag, trim=common_n)
            bic = _bic(cov, common_n, k)
            if bic < best_bic:
                best_bic, best_lag = bic, lag
        beta, cov, nobs = _fit_var_lag(y_mat, best_lag)
        bic = _bic(cov, nobs, d * (d * best_lag + 1))

    intercept = beta[0]
    coefs = np.stack(
        [beta[1 + l * d: 1 + (l + 1) * d].T for l in range(best_lag)]
    )
    return VarFit(
        variables=names,
        lag=best_lag,
        coefs=coefs,
        intercept=intercept,
        resid_cov=np.atleast_2d(cov),
        bic=bic,
        nobs=nobs,
    )


def fit_ar(series, max_lag: int = 12) -> VarFit:
    """Univariate special case of fit_var."""
    return fit_var([series], max_lag=max_lag)


def forecast_cv(
    series_set, target: int = 0, folds: int = 24, max_lag: int = 12
) -> float:
    """Mean squared one-step error over an expanding-window scheme.

    Fold j fits on the first L - folds + j - 1 points (refitting the lag by
    BIC) and forecasts the next point; the last ``folds`` points each get
    forecast exactly once.
    """
    y_mat, _ = _stack_series(series_set)
    t = y_mat.shape[0]
    if folds < 1 or t - folds < max_lag + 10:
        raise ValueError("not enough data for the requested fold scheme")
    errors = np.empty(folds)
    for j in range(folds):
        fit_len = t - folds + j
        fit = fit_var([y_mat[:fit_len, i] for i in range(y_mat.shape[1])], max_lag=max_lag)
        pred = fit.forecast_one(y_mat[:fit_len])
        errors[j] = (y_mat[fit_len, target] - pred[target]) ** 2
    return float(errors.mean())


@dataclass
class GrangerResult:
    p_value: float
    f_stat: float
    lag: int
    nobs: int
    degenerate: bool = False


def granger_test(cause, effect, lag: int) -> GrangerResult:
    """F-test of whether lags of ``cause`` improve one-step forecasts of
    ``effect`` beyond its own lags.

    Small p-values reject the null of no added predictive information.  The F
    statistic uses (lag, n - 2*lag - 1) degrees of freedom on the n = L - lag
    regression observations.
    """
    cause = _values(cause)
    effect = _values(effect)
    if cause.size != effect.size:
        raise ValueError("series must have equal length")
    if lag < 1:
        raise ValueError("lag must be at least 1")
    n = effect.size - lag
    df2 = n - 2 * lag - 1
    if df2 <= 0:
        raise ValueError("series too short for the requested lag")

    y = effect[lag:]
    own = [np.ones(n)] + [effect[lag - i: effect.size - i] for i in range(1, lag + 1)]
    x_r = np.column_stack(own)
    x_u = np.column_stack(own + [cause[lag - i: cause.size - i] for i in range(1, lag + 1)])

    _, resid_r, _ = _ols(x_r, y)
    _, resid_u, rank_u = _ols(x_u, y)
    ssr_r = float(resid_r @ resid_r)
    ssr_u = float(resid_u @ resid_u)
    degenerate = rank_u < x_u.shape[1]

    if ssr_u <= 0.0:
        return GrangerResult(1.0, 0.0, lag, n, degenerate=True)
    f_stat = max(ssr_r - ssr_u, 0.0) / lag / (ssr_u / df2)
    p = float(stats.f.sf(f_stat, lag, df2))
    if f_stat < 1e-12:
        degenerate = True
    return GrangerResult(p_value=p, f_stat=float(f_stat), lag=lag, nobs=n, degenerate=degenerate)


def pearson(a, b) -> float:
    """Sample Pearson correlation; undefined for constant series."""
    a = _values(a)
    b = _values(b)
    if a.size != b.size or a.size < 3:
        raise ValueError("series must have equal length >= 3")
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        raise DegenerateSeriesError("correlation undefined for a zero-variance series")
    a = a - a.mean()
    b = b - b.mean()
    return float(a @ b / np.sqrt((a @ a) * (b @ b)))


def leakage_safe_z(
    data: EventArrays,
    location: str,
    hyper: Hyperparams,
    config: SamplerConfig,
) -> IntensitySeries:
    """Monthly mean-intensity series for a location the fit never saw.

    Fits the model on every event *outside* the location, scores all events
    with the resulting posterior, min-max rescales the mean intensities to
    [0, 1] across all scored events, and aggregates the held-out location's
    months.
    """
    holdout_mask = data.location == location
    if not holdout_mask.any():
        raise DataError(f"location {location!r} has no events")
    train = data.subset(~holdout_mask)
    if len(train) == 0:
        raise DataError("no training events remain after excluding the location")
    samples = sample_posterior(train, hyper, config)
    scores = score_events(samples, data)
    return aggregate_monthly(
        scores.mean,
        data.location,
        data.month,
        location,
        provenance="latent",
        rescale=True,
    )


def write_series_csv(path, series: IntensitySeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["month", "value"])
        for label, value in zip(series.month_labels, series.values):
            writer.writerow([label, f"{value:.10g}"])


def read_series_csv(path, location: str = "external", provenance: str = "external") -> IntensitySeries:
    """Read a two-column (month, value) CSV; interior gaps are interpolated."""
    months, values = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        reader = csv.DictReader(lines)
        if reader.fieldnames is None or not {"month", "value"} <= set(reader.fieldnames):
            raise DataError("series CSV needs 'month' and 'value' columns")
        for row in reader:
            months.append(month_index(row["month"]))
            values.append(float(row["value"]))
    if not months:
        raise DataError("series CSV has no rows")
    months = np.asarray(months, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(months)
    months, values = months[order], values[order]
    full = np.arange(months[0], months[-1] + 1)
    series = np.interp(full, months, values)
    return IntensitySeries(location=location, start=int(months[0]), values=series, provenance=provenance)
