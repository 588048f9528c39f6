"""Intrinsic evaluation: posterior predictive imputation and its baselines.

The imputation task removes one site from every held-out tuple, conditions
the latent class on the remaining sites, and evaluates both the posterior
predictive density of the removed value (summarized by SPPD, the geometric
mean over events of the Monte-Carlo predictive density) and point predictions
(weighted F1 for categorical sites, MSE for cardinal ones).

Baselines: a naive single-site fit that ignores the remaining sites, an
unfitted model with parameters drawn from the prior, and per-site least
squares from one-hot encoded remaining sites.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import dists
from .data import ALL_SITES, EventArrays
from .infer import PosteriorSamples, SamplerConfig, SamplerError, sample_posterior
from .model import (
    DataCache,
    Hyperparams,
    ParamsConstrained,
    _class_log_weights,
    _site_block,
    sample_prior,
    unconstrain,
)

logger = logging.getLogger(__name__)

CATEGORICAL_SITES = ("subject", "object")


def sppd(densities) -> float:
    """Scaled pointwise predictive density of an (events x draws) matrix.

    Averages the density over draws per event, then takes the geometric mean
    over events.  Events whose density is zero under every draw force the
    value to zero; that case is flagged with a warning.
    """
    densities = np.asarray(densities, dtype=np.float64)
    if densities.ndim != 2 or densities.size == 0:
        raise ValueError("expected a non-empty (events x draws) matrix")
    if np.any(densities < 0.0):
        raise ValueError("densities must be non-negative")
    mean_over_draws = densities.mean(axis=1)
    zero = mean_over_draws == 0.0
    if zero.any():
        warnings.warn(
            f"{int(zero.sum())} events have zero predictive density; SPPD is 0",
            stacklevel=2,
        )
        return 0.0
    return float(np.exp(np.mean(np.log(mean_over_draws))))


def sppd_from_log(log_densities: np.ndarray) -> tuple[float, int]:
    """SPPD from an (events x draws) log-density matrix; counts -inf events."""
    n_draws = log_densities.shape[1]
    log_mean = logsumexp(log_densities, axis=1) - np.log(n_draws)
    n_zero = int(np.sum(~np.isfinite(log_mean)))
    if n_zero:
        return 0.0, n_zero
    return float(np.exp(np.mean(log_mean))), 0


def mse(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    return float(np.mean((y_true - y_pred) ** 2))


def weighted_f1(y_true, y_pred, n_classes: int | None = None) -> float:
    """Per-class F1 averaged with weights proportional to true-class support."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("y_true and y_pred must be equal-length and non-empty")
    k = n_classes or int(max(y_true.max(), y_pred.max())) + 1
    total = 0.0
    for c in range(k):
        support = int(np.sum(y_true == c))
        if support == 0:
            continue
        tp = int(np.sum((y_true == c) & (y_pred == c)))
        fp = int(np.sum((y_true != c) & (y_pred == c)))
        fn = support - tp
        denom = 2 * tp + fp + fn
        f1 = 2.0 * tp / denom if denom else 0.0
        total += support * f1
    return total / y_true.size


@dataclass
class ImputationResult:
    """Held-out predictive performance for one removed site."""

    site: str
    method: str
    sppd: float | None
    metric: str                # "weighted_f1" or "mse"
    error: float
    predictions: np.ndarray
    n_zero_density: int = 0

    def as_rows(self, seed: int | None = None) -> list[dict]:
        rows = []
        if self.sppd is not None:
            rows.append(
                {"site": self.site, "method": self.method, "metric": "sppd",
                 "value": self.sppd, "seed": seed}
            )
        rows.append(
            {"site": self.site, "method": self.method, "metric": self.metric,
             "value": self.error, "seed": seed}
        )
        return rows


def _predictive_pass(
    thetas: list[ParamsConstrained],
    cache: DataCache,
    site: str,
    observe_sites: tuple,
):
    """Log predictive densities (N x T) and draw-averaged point predictions."""
    n = cache.n
    t_total = len(thetas)
    log_dens = np.empty((n, t_total))
    categorical = site in CATEGORICAL_SITES
    if categorical:
        k = thetas[0].pi_s.shape[1] if site == "subject" else thetas[0].pi_o.shape[1]
        probs = np.zeros((n, k))
    else:
        expect = np.zeros(n)
    for t, theta in enumerate(thetas):
        lw = _class_log_weights(theta, cache, observe_sites)
        lw -= logsumexp(lw, axis=1, keepdims=True)  # log responsibilities
        site_ll = _site_block(theta, cache, site)
        log_dens[:, t] = logsumexp(lw + site_ll, axis=1)
        resp = np.exp(lw)
        if categorical:
            emission = theta.pi_s if site == "subject" else theta.pi_o
            probs += resp @ emission
        elif site == "predicate":
            expect += resp @ dists.beta_mean(theta.omega, theta.kappa)
        else:
            expect += resp @ dists.zig_mean(theta.delta, theta.b)
    if categorical:
        return log_dens, probs / t_total
    return log_dens, expect / t_total


def impute(
    samples: PosteriorSamples,
    data: EventArrays,
    site: str,
    observe_sites: tuple | None = None,
    method: str = "model",
) -> ImputationResult:
    """Predict one removed site for every event from the posterior.

    ``observe_sites`` defaults to the three remaining sites; the naive
    baseline passes an empty tuple so predictions ignore the rest of the
    tuple.  Point predictions average the per-draw predictive expectation;
    categorical sites are scored by weighted F1 on the argmax of the
    draw-averaged class probabilities, cardinal sites by MSE.
    """
    if site not in ALL_SITES:
        raise ValueError(f"unknown site {site!r}")
    if observe_sites is None:
        observe_sites = tuple(s for s in ALL_SITES if s != site)
    cache = DataCache(data, samples.hyper)
    log_dens, prediction = _predictive_pass(samples.thetas, cache, site, observe_sites)
    value, n_zero = sppd_from_log(log_dens)
    if site in CATEGORICAL_SITES:
        y_true = data.subject if site == "subject" else data.object
        y_pred = np.argmax(prediction, axis=1)
        error = weighted_f1(y_true, y_pred, prediction.shape[1])
        metric = "weighted_f1"
        prediction_out = y_pred
    else:
        y_true = data.predicate if site == "predicate" else data.quantifier
        error = mse(y_true, prediction)
        metric = "mse"
        prediction_out = prediction
    return ImputationResult(
        site=site,
        method=method,
        sppd=value,
        metric=metric,
        error=error,
        predictions=prediction_out,
        n_zero_density=n_zero,
    )


def baseline_naive(
    train: EventArrays, site: str, hyper: Hyperparams, config: SamplerConfig
) -> PosteriorSamples:
    """Fit the model machinery to a single site (empirical-histogram baseline).

    Use the returned samples with ``impute(..., observe_sites=())`` so that
    predictions ignore the remaining sites.
    """
    if site not in ALL_SITES:
        raise ValueError(f"unknown site {site!r}")
    return sample_posterior(train, hyper, config, sites=(site,))


def baseline_prior(
    hyper: Hyperparams, n_draws: int, seed: int
) -> PosteriorSamples:
    """Unfitted parameter packs drawn from the prior, shaped like a posterior."""
    rng = np.random.default_rng(seed)
    packs = [sample_prior(hyper, rng) for _ in range(n_draws)]
    unconstrained = np.stack([unconstrain(theta, hyper) for theta in packs])[None]
    config = SamplerConfig(draws=n_draws, warmup=0, chains=1, seed=seed)
    return PosteriorSamples(
        hyper=hyper,
        config=config,
        sites=tuple(ALL_SITES),
        unconstrained=unconstrained,
        accept_rate=np.zeros(1),
        divergences=np.zeros(1, dtype=np.int64),
        step_size=np.zeros(1),
        mean_tree_depth=np.zeros(1),
    )


# -- linear regression baseline ------------------------------------------------

@dataclass
class LinearImputer:
    """One-vs-rest / ordinary least squares from the remaining sites."""

    site: str
    coef: np.ndarray           # (features + 1, targets)
    n_subject: int = 4
    n_object: int = 4

    def design(self, data: EventArrays) -> np.ndarray:
        cols = [np.ones((len(data), 1))]
        if self.site != "subject":
            cols.append(np.eye(self.n_subject)[data.subject])
        if self.site != "predicate":
            cols.append(data.predicate[:, None])
        if self.site != "quantifier":
            cols.append(data.quantifier[:, None].astype(np.float64))
        if self.site != "object":
            cols.append(np.eye(self.n_object)[data.object])
        return np.hstack(cols)

    def predict(self, data: EventArrays) -> np.ndarray:
        raw = self.design(data) @ self.coef
        if self.site in CATEGORICAL_SITES:
            return np.argmax(raw, axis=1)
        return raw[:, 0]


def baseline_lr(train: EventArrays, site: str) -> LinearImputer:
    """Least-squares imputer; categorical targets use one-vs-rest + argmax.

    A rank-deficient design falls back to a small ridge penalty (logged).
    """
    if site not in ALL_SITES:
        raise ValueError(f"unknown site {site!r}")
    if len(train) == 0:
        raise ValueError("empty training data")
    imputer = LinearImputer(site=site, coef=np.empty(0))
    x = imputer.design(train)
    if site == "subject":
        y = np.eye(4)[train.subject]
    elif site == "object":
        y = np.eye(4)[train.object]
    elif site == "predicate":
        y = train.predicate[:, None]
    else:
        y = train.quantifier[:, None].astype(np.float64)
    coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < x.shape[1]:
        logger.info("singular design for site %s: ridge fallback (1e-6)", site)
        gram = x.T @ x + 1e-6 * np.eye(x.shape[1])
        coef = np.linalg.solve(gram, x.T @ y)
    imputer.coef = coef
    return imputer


def evaluate_lr(imputer: LinearImputer, data: EventArrays) -> ImputationResult:
    """Score the least-squares baseline with the shared error metrics (no SPPD)."""
    pred = imputer.predict(data)
    site = imputer.site
    if site in CATEGORICAL_SITES:
        y_true = data.subject if site == "subject" else data.object
        error = weighted_f1(y_true, pred, 4)
        metric = "weighted_f1"
    else:
        y_true = data.predicate if site == "predicate" else data.quantifier
        error = mse(y_true, pred)
        metric = "mse"
    return ImputationResult(
        site=site, method="lr", sppd=None, metric=metric, error=error, predictions=pred
    )


# -- model selection -----------------------------------------------------------

def joint_log_density_matrix(samples: PosteriorSamples, data: EventArrays) -> np.ndarray:
    """(N, T) log marginal density of each full tuple under each draw."""
    cache = DataCache(data, samples.hyper)
    thetas = samples.thetas
    out = np.empty((cache.n, len(thetas)))
    for t, theta in enumerate(thetas):
        out[:, t] = logsumexp(_class_log_weights(theta, cache, ALL_SITES), axis=1)
    return out


@dataclass
class CSweepCell:
    n_classes: int
    seed: int
    sppd: float | None
    error: str | None = None


def select_C(
    train: EventArrays,
    heldout: EventArrays,
    hyper: Hyperparams,
    c_values,
    seeds,
    config: SamplerConfig,
) -> list[CSweepCell]:
    """Fit per (class count, seed) and report held-out joint-tuple SPPD.

    Sampler failures are recorded in their cell and the sweep continues.
    """
    cells = []
    for c in c_values:
        hyper_c = Hyperparams(
            n_classes=int(c),
            mu=hyper.mu,
            sigma=hyper.sigma,
            gamma_shape=hyper.gamma_shape,
            gamma_rate=hyper.gamma_rate,
            alpha_z=hyper.alpha_z,
            n_subject=hyper.n_subject,
            n_object=hyper.n_object,
        )
        for seed in seeds:
            config_cs = SamplerConfig(
                draws=config.draws,
                warmup=config.warmup,
                chains=config.chains,
                target_accept=config.target_accept,
                max_tree_depth=config.max_tree_depth,
                seed=int(seed),
                n_jobs=config.n_jobs,
            )
            try:
                samples = sample_posterior(train, hyper_c, config_cs)
                value, _ = sppd_from_log(joint_log_density_matrix(samples, heldout))
                cells.append(CSweepCell(int(c), int(seed), value))
            except SamplerError as exc:
                logger.warning("sweep cell C=%s seed=%s failed: %s", c, seed, exc)
                cells.append(CSweepCell(int(c), int(seed), None, error=str(exc)))
    return cells


def summarize_sweep(cells: list[CSweepCell]) -> list[dict]:
    """Mean and standard deviation of SPPD per class count (failures dropped)."""
    out = []
    for c in sorted({cell.n_classes for cell in cells}):
        values = [cell.sppd for cell in cells if cell.n_classes == c and cell.sppd is not None]
        if values:
            out.append(
                {
                    "n_classes": c,
                    "sppd_mean": float(np.mean(values)),
                    "sppd_sd": float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
                    "n_fits": len(values),
                }
            )
        else:
            out.append({"n_classes": c, "sppd_mean": None, "sppd_sd": None, "n_fits": 0})
    return out
