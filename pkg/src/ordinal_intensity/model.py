"""Ordinal latent-class model of event intensity.

Each event tuple (subject, predicate, quantifier, object) is generated from a
discrete intensity class z drawn from a C-way Categorical.  Conditioned on z,
the subject and object are Categorical over four actor classes, the predicate
is Beta with class-specific mode/concentration, and the quantifier is a
zero-inflated Geometric.  Ordering constraints on the Beta modes (increasing)
and on the Geometric gate/success vectors (decreasing, since larger values
mean fewer casualties) make z ordinal and kill label switching.

Inference operates on an unconstrained vector of length 11C-1: stick-breaking
coordinates for the class weights and the two Categorical emission matrices,
pre-ordering coordinates for the three ordered vectors, and log(kappa - 2).
The discrete z is marginalized out of the likelihood with a log-sum-exp over
classes; gradients chain per-class responsibilities through every transform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, expit, gammaln, logsumexp

from . import dists, ordered
from .data import ALL_SITES, DataError, EventArrays

PARAMS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Hyperparams:
    """Prior settings; defaults are the uninformative values used throughout."""

    n_classes: int = 5
    mu: float = -1.0
    sigma: float = 1.0
    gamma_shape: float = 1.0
    gamma_rate: float = 1.0
    alpha_z: float = 1.0
    n_subject: int = 4
    n_object: int = 4

    def __post_init__(self):
        # the modeling domain is >= 2 classes; 1 is allowed so the degenerate
        # no-mixture collapse stays testable
        if self.n_classes < 1:
            raise ValueError("n_classes must be at least 1")
        if self.sigma <= 0 or self.gamma_shape <= 0 or self.gamma_rate <= 0:
            raise ValueError("sigma, gamma_shape and gamma_rate must be positive")
        if self.alpha_z <= 0:
            raise ValueError("alpha_z must be positive")

    def as_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "mu": self.mu,
            "sigma": self.sigma,
            "gamma_shape": self.gamma_shape,
            "gamma_rate": self.gamma_rate,
            "alpha_z": self.alpha_z,
            "n_subject": self.n_subject,
            "n_object": self.n_object,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(**d)


class ParamLayout:
    """Index map of the flat unconstrained vector (length 11C-1 for S=O=4)."""

    def __init__(self, hyper: Hyperparams):
        c, s, o = hyper.n_classes, hyper.n_subject, hyper.n_object
        self.n_classes, self.n_subject, self.n_object = c, s, o
        pos = 0

        def take(n):
            nonlocal pos
            sl = slice(pos, pos + n)
            pos += n
            return sl

        self.pi_z = take(c - 1)
        self.pi_s = take(c * (s - 1))
        self.pi_o = take(c * (o - 1))
        self.x_omega = take(c)
        self.u_kappa = take(c)
        self.x_delta = take(c)
        self.x_b = take(c)
        self.size = pos


@dataclass
class ParamsConstrained:
    """Full constrained parameter pack (13C scalars for S=O=4)."""

    pi_z: np.ndarray    # (C,) class weights, simplex
    pi_s: np.ndarray    # (C, S) subject emission rows, simplexes
    pi_o: np.ndarray    # (C, O) object emission rows, simplexes
    omega: np.ndarray   # (C,) Beta modes, strictly increasing in (0, 1)
    kappa: np.ndarray   # (C,) Beta concentrations, all > 2
    delta: np.ndarray   # (C,) gate params, strictly decreasing in (0, 1)
    b: np.ndarray       # (C,) success params, strictly decreasing in (0, 1)

    @property
    def n_classes(self) -> int:
        return len(self.pi_z)

    @property
    def n_params(self) -> int:
        return self.pi_z.size + self.pi_s.size + self.pi_o.size + 4 * self.omega.size

    def validate(self, atol: float = dists.SIMPLEX_ATOL) -> None:
        if abs(self.pi_z.sum() - 1.0) > atol:
            raise ValueError("pi_z does not sum to 1")
        for name, mat in (("pi_s", self.pi_s), ("pi_o", self.pi_o)):
            if np.any(np.abs(mat.sum(axis=1) - 1.0) > atol):
                raise ValueError(f"{name} rows do not sum to 1")
        if self.omega.size > 1 and not np.all(np.diff(self.omega) > 0):
            raise ValueError("omega is not strictly increasing")
        for name, vec in (("delta", self.delta), ("b", self.b)):
            if vec.size > 1 and not np.all(np.diff(vec) < 0):
                raise ValueError(f"{name} is not strictly decreasing")
        if np.any(self.kappa <= 2.0):
            raise ValueError("kappa entries must exceed 2")
        for name, vec in (("omega", self.omega), ("delta", self.delta), ("b", self.b)):
            if np.any((vec <= 0.0) | (vec >= 1.0)):
                raise ValueError(f"{name} entries must lie strictly inside (0, 1)")

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [
                self.pi_z,
                self.pi_s.ravel(),
                self.pi_o.ravel(),
                self.omega,
                self.kappa,
                self.delta,
                self.b,
            ]
        )

    def param_names(self) -> list[str]:
        c = self.n_classes
        names = [f"pi_z[{i}]" for i in range(c)]
        names += [f"pi_s[{i},{j}]" for i in range(c) for j in range(self.pi_s.shape[1])]
        names += [f"pi_o[{i},{j}]" for i in range(c) for j in range(self.pi_o.shape[1])]
        for block in ("omega", "kappa", "delta", "b"):
            names += [f"{block}[{i}]" for i in range(c)]
        return names

    def as_dict(self) -> dict:
        return {
            "pi_z": self.pi_z.tolist(),
            "pi_s": self.pi_s.tolist(),
            "pi_o": self.pi_o.tolist(),
            "omega": self.omega.tolist(),
            "kappa": self.kappa.tolist(),
            "delta": self.delta.tolist(),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamsConstrained":
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})

    def to_json(self, hyper: Hyperparams | None = None) -> str:
        doc = {"version": PARAMS_FORMAT_VERSION, "params": self.as_dict()}
        if hyper is not None:
            doc["hyper"] = hyper.as_dict()
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> tuple["ParamsConstrained", Hyperparams | None]:
        doc = json.loads(text)
        if doc.get("version") != PARAMS_FORMAT_VERSION:
            raise ValueError(f"unsupported params document version {doc.get('version')!r}")
        hyper = Hyperparams.from_dict(doc["hyper"]) if "hyper" in doc else None
        return cls.from_dict(doc["params"]), hyper


def constrain(x: np.ndarray, hyper: Hyperparams) -> ParamsConstrained:
    """Map the flat unconstrained vector to a valid parameter pack."""
    x = np.asarray(x, dtype=np.float64)
    layout = ParamLayout(hyper)
    if x.shape != (layout.size,):
        raise ValueError(f"expected vector of length {layout.size}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite entries in unconstrained vector")
    c, s, o = layout.n_classes, layout.n_subject, layout.n_object
    return ParamsConstrained(
        pi_z=dists.stick_breaking(x[layout.pi_z]),
        pi_s=dists.stick_breaking(x[layout.pi_s].reshape(c, s - 1)),
        pi_o=dists.stick_breaking(x[layout.pi_o].reshape(c, o - 1)),
        omega=ordered.sigmoid_ordered(x[layout.x_omega]),
        kappa=2.0 + np.exp(x[layout.u_kappa]),
        delta=ordered.sigmoid_ordered(x[layout.x_delta], reverse=True),
        b=ordered.sigmoid_ordered(x[layout.x_b], reverse=True),
    )


def unconstrain(theta: ParamsConstrained, hyper: Hyperparams | None = None) -> np.ndarray:
    """Invert constrain; round-trips to 1e-9."""
    hyper = hyper or Hyperparams(n_classes=theta.n_classes)
    layout = ParamLayout(hyper)
    x = np.empty(layout.size)
    x[layout.pi_z] = dists.stick_breaking_inverse(theta.pi_z)
    x[layout.pi_s] = np.concatenate(
        [dists.stick_breaking_inverse(row) for row in theta.pi_s]
    )
    x[layout.pi_o] = np.concatenate(
        [dists.stick_breaking_inverse(row) for row in theta.pi_o]
    )
    def inv_sigmoid(v):
        return np.log(v) - np.log1p(-v)

    x[layout.x_omega] = ordered.from_ordered(inv_sigmoid(theta.omega))
    x[layout.u_kappa] = np.log(theta.kappa - 2.0)
    x[layout.x_delta] = ordered.from_ordered(inv_sigmoid(theta.delta)[::-1])
    x[layout.x_b] = ordered.from_ordered(inv_sigmoid(theta.b)[::-1])
    return x


class DataCache:
    """Per-dataset precomputations reused across log-joint evaluations."""

    def __init__(self, data: EventArrays, hyper: Hyperparams):
        data.validate(hyper.n_subject, hyper.n_object)
        self.n = len(data)
        self.subject = data.subject
        self.object = data.object
        self.log_p = np.log(data.predicate)
        self.log_1mp = np.log1p(-data.predicate)
        self.q = data.quantifier.astype(np.float64)
        self.zero = data.quantifier == 0
        self.nonzero = ~self.zero
        self.q_nonzero = self.q[self.nonzero]
        eye_s = np.eye(hyper.n_subject)
        eye_o = np.eye(hyper.n_object)
        self.onehot_s = eye_s[data.subject]
        self.onehot_o = eye_o[data.object]


def _site_block(theta: ParamsConstrained, cache: DataCache, site: str) -> np.ndarray:
    """(N, C) matrix of log p(observed site value | class) for one site."""
    if site == "subject":
        return np.log(theta.pi_s.T)[cache.subject]
    if site == "object":
        return np.log(theta.pi_o.T)[cache.object]
    if site == "predicate":
        alpha, beta = dists.beta_shapes(theta.omega, theta.kappa)
        log_norm = gammaln(alpha) + gammaln(beta) - gammaln(theta.kappa)
        return (
            np.outer(cache.log_p, alpha - 1.0)
            + np.outer(cache.log_1mp, beta - 1.0)
            - log_norm
        )
    if site == "quantifier":
        log_geom = (
            np.outer(cache.q, np.log1p(-theta.b))
            + np.log1p(-theta.delta)
            + np.log(theta.b)
        )
        log_geom[cache.zero] = np.log(theta.delta + (1.0 - theta.delta) * theta.b)
        return log_geom
    raise ValueError(f"unknown site {site!r}")


def _class_log_weights(theta: ParamsConstrained, cache: DataCache, sites) -> np.ndarray:
    """(N, C) matrix of log pi_c + sum over observed sites of log p(site | c)."""
    weights = np.tile(np.log(theta.pi_z), (cache.n, 1))
    for site in sites:
        weights += _site_block(theta, cache, site)
    return weights


def site_log_likelihood(
    theta: ParamsConstrained, data: EventArrays | DataCache, site: str, hyper=None
) -> np.ndarray:
    """(N, C) log likelihood of one site's observed values under each class."""
    if site not in ALL_SITES:
        raise ValueError(f"unknown site {site!r}")
    cache = (
        data
        if isinstance(data, DataCache)
        else DataCache(data, hyper or Hyperparams(n_classes=theta.n_classes))
    )
    return _site_block(theta, cache, site)


def class_log_weights(theta: ParamsConstrained, data: EventArrays, sites=ALL_SITES, hyper=None) -> np.ndarray:
    hyper = hyper or Hyperparams(n_classes=theta.n_classes)
    return _class_log_weights(theta, DataCache(data, hyper), sites)


def responsibilities_batch(
    theta: ParamsConstrained, data: EventArrays, sites=ALL_SITES, hyper=None
) -> np.ndarray:
    """(N, C) posterior class masses given the observed sites in ``sites``."""
    weights = class_log_weights(theta, data, sites, hyper)
    weights -= weights.max(axis=1, keepdims=True)
    np.exp(weights, out=weights)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights


def responsibilities(theta: ParamsConstrained, event, sites=ALL_SITES) -> np.ndarray:
    """Posterior over classes for a single event tuple."""
    data = EventArrays.from_tuples([event])
    return responsibilities_batch(theta, data, sites)[0]


def event_log_marginal(
    theta: ParamsConstrained, data: EventArrays, sites=ALL_SITES, hyper=None
) -> np.ndarray:
    """(N,) log of the per-event marginal likelihood, classes summed out."""
    return logsumexp(class_log_weights(theta, data, sites, hyper), axis=1)


def _prior_logdensity_and_grad(x: np.ndarray, hyper: Hyperparams):
    """Prior on the unconstrained coordinates, including transform Jacobians.

    Ordered blocks carry iid Normal(mu, sigma) densities directly on the
    pre-transform coordinates (the generative definition, so no ordering
    Jacobian).  Simplex blocks carry Dirichlet mass plus the stick-breaking
    Jacobian, which combine into sum(alpha * log pi).  kappa carries a shifted
    Gamma on exp(u) plus the log-transform Jacobian u.
    """
    layout = ParamLayout(hyper)
    c, s, o = layout.n_classes, layout.n_subject, layout.n_object
    grad = np.zeros(layout.size)
    lp = 0.0

    for sl in (layout.x_omega, layout.x_delta, layout.x_b):
        xv = x[sl]
        lp += float(dists.normal_logpdf(xv, hyper.mu, hyper.sigma).sum())
        grad[sl] += -(xv - hyper.mu) / hyper.sigma**2

    u = x[layout.u_kappa]
    t = np.exp(u)
    lp += float(np.sum(dists.gamma_logpdf(t, hyper.gamma_shape, hyper.gamma_rate) + u))
    grad[layout.u_kappa] += hyper.gamma_shape - hyper.gamma_rate * t

    alpha_z = np.full(c, hyper.alpha_z)
    y = x[layout.pi_z]
    lp += float(gammaln(alpha_z.sum()) - gammaln(alpha_z).sum())
    lp += float((alpha_z * dists.stick_breaking_log(y)).sum())
    grad[layout.pi_z] += dists.stick_breaking_vjp(y, alpha_z)

    for sl, k in ((layout.pi_s, s), (layout.pi_o, o)):
        rows = x[sl].reshape(c, k - 1)
        lp += c * float(gammaln(k))  # flat Dirichlet normalizer per row
        lp += float(dists.stick_breaking_log(rows).sum())
        grad[sl] += dists.stick_breaking_vjp(rows, np.ones((c, k))).ravel()
    return lp, grad


def prior_logdensity(x: np.ndarray, hyper: Hyperparams) -> float:
    """Log prior density on the unconstrained vector (Jacobians included)."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite entries in unconstrained vector")
    return _prior_logdensity_and_grad(x, hyper)[0]


def log_joint(
    x: np.ndarray,
    data: EventArrays | None,
    hyper: Hyperparams,
    sites=ALL_SITES,
    cache: DataCache | None = None,
):
    """Marginal log joint density and its gradient on unconstrained coordinates.

    Returns ``(value, gradient)``.  The discrete class of every event is
    summed out with a log-sum-exp; the gradient is assembled from per-class
    responsibilities chained through the stick-breaking, ordering, sigmoid and
    exponential transforms.  With no events this reduces to the prior.
    """
    x = np.asarray(x, dtype=np.float64)
    layout = ParamLayout(hyper)
    if cache is None:
        cache = DataCache(data, hyper) if data is not None and len(data) else None

    lp, grad = _prior_logdensity_and_grad(x, hyper)
    if cache is None:
        return lp, grad

    theta = constrain(x, hyper)
    c = layout.n_classes
    weights = _class_log_weights(theta, cache, sites)
    w_max = weights.max(axis=1, keepdims=True)
    np.exp(weights - w_max, out=weights)
    totals = weights.sum(axis=1)
    lp += float(np.log(totals).sum() + w_max.sum())
    resp = weights / totals[:, None]

    n_c = resp.sum(axis=0)

    # class-weight block: likelihood counts join the Dirichlet alpha weights
    grad[layout.pi_z] += dists.stick_breaking_vjp(x[layout.pi_z], n_c)

    if "subject" in sites:
        counts = resp.T @ cache.onehot_s
        rows = x[layout.pi_s].reshape(c, layout.n_subject - 1)
        grad[layout.pi_s] += dists.stick_breaking_vjp(rows, counts).ravel()
    if "object" in sites:
        counts = resp.T @ cache.onehot_o
        rows = x[layout.pi_o].reshape(c, layout.n_object - 1)
        grad[layout.pi_o] += dists.stick_breaking_vjp(rows, counts).ravel()

    if "predicate" in sites:
        alpha, beta = dists.beta_shapes(theta.omega, theta.kappa)
        a_sum = resp.T @ cache.log_p
        b_sum = resp.T @ cache.log_1mp
        psi_a, psi_b, psi_k = digamma(alpha), digamma(beta), digamma(theta.kappa)
        g_omega = (theta.kappa - 2.0) * (a_sum - b_sum - n_c * (psi_a - psi_b))
        g_kappa = (
            theta.omega * a_sum
            + (1.0 - theta.omega) * b_sum
            + n_c * (psi_k - theta.omega * psi_a - (1.0 - theta.omega) * psi_b)
        )
        g_lam = g_omega * theta.omega * (1.0 - theta.omega)
        grad[layout.x_omega] += ordered.ordered_vjp(x[layout.x_omega], g_lam)
        grad[layout.u_kappa] += g_kappa * np.exp(x[layout.u_kappa])

    if "quantifier" in sites:
        z_c = resp[cache.zero].sum(axis=0)
        p_c = n_c - z_c
        q_c = resp[cache.nonzero].T @ cache.q_nonzero
        p0 = theta.delta + (1.0 - theta.delta) * theta.b
        g_delta = z_c * (1.0 - theta.b) / p0 - p_c / (1.0 - theta.delta)
        g_b = z_c * (1.0 - theta.delta) / p0 + p_c / theta.b - q_c / (1.0 - theta.b)
        for sl, vec, g_con in (
            (layout.x_delta, theta.delta, g_delta),
            (layout.x_b, theta.b, g_b),
        ):
            g_lam = (g_con * vec * (1.0 - vec))[::-1]
            grad[sl] += ordered.ordered_vjp(x[sl], g_lam)

    return lp, grad


def generate(
    theta: ParamsConstrained,
    n: int,
    rng: np.random.Generator,
    locations=("loc-0",),
    month_range: tuple[int, int] = (24000, 24024),
):
    """Sample n event tuples from the generative story.

    Returns ``(EventArrays, labels)`` where labels are the true class indices
    (0-based).  Locations and months are tagged uniformly at random; they play
    no role in the generative model itself.  Predicates are clamped to the
    same interior range used by the data pipeline.
    """
    theta.validate()
    z = dists.sample_categorical(theta.pi_z, n, rng)
    subject = np.empty(n, dtype=np.int64)
    object_ = np.empty(n, dtype=np.int64)
    for c in range(theta.n_classes):
        idx = np.flatnonzero(z == c)
        if idx.size == 0:
            continue
        subject[idx] = dists.sample_categorical(theta.pi_s[c], idx.size, rng)
        object_[idx] = dists.sample_categorical(theta.pi_o[c], idx.size, rng)
    predicate = dists.sample_beta(theta.omega[z], theta.kappa[z], n, rng)
    predicate = np.clip(predicate, 1e-3, 1.0 - 1e-3)
    quantifier = dists.sample_zig(theta.delta[z], theta.b[z], n, rng)
    locations = np.asarray(locations, dtype=object)
    data = EventArrays(
        subject=subject,
        predicate=predicate,
        quantifier=quantifier,
        object=object_,
        location=locations[rng.integers(0, len(locations), size=n)],
        month=rng.integers(month_range[0], month_range[1], size=n),
    )
    return data, z


def sample_prior(hyper: Hyperparams, rng: np.random.Generator) -> ParamsConstrained:
    """One parameter pack drawn from the generative prior."""
    c = hyper.n_classes
    x_omega = rng.normal(hyper.mu, hyper.sigma, size=c)
    x_delta = rng.normal(hyper.mu, hyper.sigma, size=c)
    x_b = rng.normal(hyper.mu, hyper.sigma, size=c)
    return ParamsConstrained(
        pi_z=dists.sample_dirichlet(np.full(c, hyper.alpha_z), rng),
        pi_s=np.vstack([dists.sample_dirichlet(np.ones(hyper.n_subject), rng) for _ in range(c)]),
        pi_o=np.vstack([dists.sample_dirichlet(np.ones(hyper.n_object), rng) for _ in range(c)]),
        omega=ordered.sigmoid_ordered(x_omega),
        kappa=2.0 + rng.gamma(hyper.gamma_shape, 1.0 / hyper.gamma_rate, size=c),
        delta=ordered.sigmoid_ordered(x_delta, reverse=True),
        b=ordered.sigmoid_ordered(x_b, reverse=True),
    )


def initial_point(hyper: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    """Prior-consistent sampler start: Normal draws on pre-ordering coordinates,
    flat simplexes, kappa at 3."""
    layout = ParamLayout(hyper)
    x = np.zeros(layout.size)
    for sl in (layout.x_omega, layout.x_delta, layout.x_b):
        x[sl] = rng.normal(hyper.mu, hyper.sigma, size=hyper.n_classes)
    return x
