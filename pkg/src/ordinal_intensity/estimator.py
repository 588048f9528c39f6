"""Scikit-learn style estimator wrapping the model, sampler and scorer.

The estimator composes with sklearn tooling (``get_params``/``set_params``,
clone) while accepting event tuples rather than feature matrices: ``X`` is a
sequence of EventTuple or an EventArrays.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import ALL_SITES, as_event_arrays
from .infer import IntensityScores, SamplerConfig, sample_posterior, score_events
from .model import Hyperparams


class OrdinalIntensityModel(BaseEstimator):
    """Ordinal latent-class intensity model with NUTS posterior inference.

    Parameters
    ----------
    n_classes : int
        Number of ordered latent intensity classes.
    mu, sigma : float
        Normal prior location/scale on pre-ordering coordinates.
    gamma_shape, gamma_rate : float
        Shifted-Gamma prior on Beta concentrations (support kappa > 2).
    alpha_z : float
        Symmetric Dirichlet concentration on the class weights.
    draws, warmup, chains, target_accept, max_tree_depth, seed, n_jobs
        Sampler settings; see SamplerConfig.

    Attributes
    ----------
    posterior_ : PosteriorSamples
        Retained draws after fitting.
    """

    def __init__(
        self,
        n_classes: int = 5,
        mu: float = -1.0,
        sigma: float = 1.0,
        gamma_shape: float = 1.0,
        gamma_rate: float = 1.0,
        alpha_z: float = 1.0,
        draws: int = 1000,
        warmup: int = 200,
        chains: int = 4,
        target_accept: float = 0.8,
        max_tree_depth: int = 10,
        seed: int = 0,
        n_jobs: int = 1,
    ):
        self.n_classes = n_classes
        self.mu = mu
        self.sigma = sigma
        self.gamma_shape = gamma_shape
        self.gamma_rate = gamma_rate
        self.alpha_z = alpha_z
        self.draws = draws
        self.warmup = warmup
        self.chains = chains
        self.target_accept = target_accept
        self.max_tree_depth = max_tree_depth
        self.seed = seed
        self.n_jobs = n_jobs

    def _hyper(self) -> Hyperparams:
        return Hyperparams(
            n_classes=self.n_classes,
            mu=self.mu,
            sigma=self.sigma,
            gamma_shape=self.gamma_shape,
            gamma_rate=self.gamma_rate,
            alpha_z=self.alpha_z,
        )

    def _config(self) -> SamplerConfig:
        return SamplerConfig(
            draws=self.draws,
            warmup=self.warmup,
            chains=self.chains,
            target_accept=self.target_accept,
            max_tree_depth=self.max_tree_depth,
            seed=self.seed,
            n_jobs=self.n_jobs,
        )

    def fit(self, X, y=None, sites=ALL_SITES):
        """Sample the posterior given event tuples X (y is ignored)."""
        data = as_event_arrays(X)
        self.posterior_ = sample_posterior(data, self._hyper(), self._config(), sites)
        return self

    def _check_fitted(self):
        if not hasattr(self, "posterior_"):
            raise NotFittedError("this OrdinalIntensityModel instance is not fitted yet")

    def score_events(self, X, sites=ALL_SITES) -> IntensityScores:
        """Draw-averaged class masses plus mean/modal intensity per event."""
        self._check_fitted()
        return score_events(self.posterior_, as_event_arrays(X), sites)

    def predict(self, X) -> np.ndarray:
        """Posterior mean intensity per event, a real value in [1, n_classes]."""
        return self.score_events(X).mean

    def predict_class(self, X) -> np.ndarray:
        """Modal intensity class per event (1-based; ties pick the smaller)."""
        return self.score_events(X).mode

    def predict_proba(self, X) -> np.ndarray:
        """(N, n_classes) draw-averaged posterior class masses."""
        return self.score_events(X).mass

    def score(self, X, y=None) -> float:
        """Mean posterior log pointwise predictive density of the joint tuples."""
        self._check_fitted()
        from scipy.special import logsumexp

        from .evaluate import joint_log_density_matrix

        log_dens = joint_log_density_matrix(self.posterior_, as_event_arrays(X))
        return float(np.mean(logsumexp(log_dens, axis=1) - np.log(log_dens.shape[1])))
