"""Distribution kernels: log densities/masses, samplers, analytic gradients.

Only the families the model needs: a mode/concentration Beta, a zero-inflated
Geometric on counts, Categorical, plus Normal/Gamma/Dirichlet priors and the
centered stick-breaking simplex transform used for unconstrained simplex
coordinates.

Conventions
-----------
* Beta(mode w, concentration k) maps to shapes a = w(k-2)+1, b = (1-w)(k-2)+1;
  k > 2 keeps the density unimodal around w.
* The Geometric counts failures before the first success: support {0, 1, ...}
  with P(0) = b, so larger gate/success parameters mean smaller counts.
* Stick-breaking is the centered logistic variant (zero coordinates map to the
  uniform simplex); its log-Jacobian equals sum(log pi).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, expit, gammaln, log_expit

SIMPLEX_ATOL = 1e-9


@dataclass(frozen=True)
class BetaModeConc:
    """Beta distribution parameterized by mode in (0,1) and concentration > 2."""

    mode: float
    concentration: float

    def __post_init__(self):
        if not 0.0 < self.mode < 1.0:
            raise ValueError("mode must lie strictly inside (0, 1)")
        if not self.concentration > 2.0:
            raise ValueError("concentration must exceed 2 (unimodality)")

    @property
    def shapes(self) -> tuple[float, float]:
        a, b = beta_shapes(self.mode, self.concentration)
        return float(a), float(b)


@dataclass(frozen=True)
class ZeroInflGeom:
    """Zero-inflated Geometric with gate (extra zero mass) and success prob."""

    gate: float
    success: float

    def __post_init__(self):
        if not 0.0 < self.gate < 1.0:
            raise ValueError("gate must lie strictly inside (0, 1)")
        if not 0.0 < self.success < 1.0:
            raise ValueError("success must lie strictly inside (0, 1)")

    @property
    def mean(self) -> float:
        return float(zig_mean(self.gate, self.success))


def beta_shapes(omega, kappa):
    omega = np.asarray(omega, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.float64)
    return omega * (kappa - 2.0) + 1.0, (1.0 - omega) * (kappa - 2.0) + 1.0


def beta_mean(omega, kappa):
    alpha, beta = beta_shapes(omega, kappa)
    return alpha / (alpha + beta)


def beta_logpdf(p, params_or_omega, kappa=None):
    """Log density of Beta(mode, concentration) at p in (0, 1); broadcasts."""
    if kappa is None:
        omega, kappa = params_or_omega.mode, params_or_omega.concentration
    else:
        omega = params_or_omega
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("p must lie strictly inside (0, 1)")
    alpha, beta = beta_shapes(omega, kappa)
    out = (
        (alpha - 1.0) * np.log(p)
        + (beta - 1.0) * np.log1p(-p)
        - gammaln(alpha)
        - gammaln(beta)
        + gammaln(alpha + beta)
    )
    return out if out.ndim else float(out)


def beta_logpdf_grad(p, omega, kappa):
    """Log density plus its partials w.r.t. mode and concentration."""
    p = np.asarray(p, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.float64)
    alpha, beta = beta_shapes(omega, kappa)
    logp, log1mp = np.log(p), np.log1p(-p)
    d_alpha = logp - digamma(alpha) + digamma(kappa)
    d_beta = log1mp - digamma(beta) + digamma(kappa)
    lp = (alpha - 1.0) * logp + (beta - 1.0) * log1mp \
        - gammaln(alpha) - gammaln(beta) + gammaln(kappa)
    d_omega = (kappa - 2.0) * (d_alpha - d_beta)
    d_kappa = omega * d_alpha + (1.0 - omega) * d_beta
    return lp, d_omega, d_kappa


def zig_mean(gate, success):
    gate = np.asarray(gate, dtype=np.float64)
    success = np.asarray(success, dtype=np.float64)
    return (1.0 - gate) * (1.0 - success) / success


def zig_logpmf(q, params_or_gate, success=None):
    """Log mass of the zero-inflated Geometric at integer q >= 0; broadcasts."""
    if success is None:
        gate, success = params_or_gate.gate, params_or_gate.success
    else:
        gate = params_or_gate
    q = np.asarray(q)
    if np.any(q < 0):
        raise ValueError("q must be non-negative")
    qf = q.astype(np.float64)
    gate = np.asarray(gate, dtype=np.float64)
    success = np.asarray(success, dtype=np.float64)
    geom = np.log1p(-gate) + qf * np.log1p(-success) + np.log(success)
    at_zero = np.log(gate + (1.0 - gate) * success)
    out = np.where(q == 0, at_zero, geom)
    return out if out.ndim else float(out)


def zig_logpmf_grad(q, gate, success):
    """Log mass plus its partials w.r.t. gate and success."""
    q = np.asarray(q)
    qf = q.astype(np.float64)
    gate = np.asarray(gate, dtype=np.float64)
    success = np.asarray(success, dtype=np.float64)
    zero = q == 0
    p0 = gate + (1.0 - gate) * success
    lp = np.where(
        zero,
        np.log(p0),
        np.log1p(-gate) + qf * np.log1p(-success) + np.log(success),
    )
    d_gate = np.where(zero, (1.0 - success) / p0, -1.0 / (1.0 - gate))
    d_success = np.where(zero, (1.0 - gate) / p0, 1.0 / success - qf / (1.0 - success))
    return lp, d_gate, d_success


def categorical_logpmf(k: int, probs) -> float:
    """Log mass of class k under a probability vector (sum checked to 1e-9)."""
    probs = np.asarray(probs, dtype=np.float64)
    if abs(float(probs.sum()) - 1.0) > SIMPLEX_ATOL:
        raise ValueError("probs must sum to 1")
    if not 0 <= k < probs.size:
        raise IndexError(f"class index {k} out of range for {probs.size} classes")
    p = probs[k]
    return float(np.log(p)) if p > 0.0 else float("-inf")


def normal_logpdf(x, mu, sigma):
    x = np.asarray(x, dtype=np.float64)
    z = (x - mu) / sigma
    return -0.5 * z * z - np.log(sigma) - 0.5 * np.log(2.0 * np.pi)


def gamma_logpdf(t, shape, rate):
    t = np.asarray(t, dtype=np.float64)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(t) - rate * t


def dirichlet_logpdf(pi, alpha) -> float:
    pi = np.asarray(pi, dtype=np.float64)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), pi.shape)
    return float(
        gammaln(alpha.sum()) - gammaln(alpha).sum() + ((alpha - 1.0) * np.log(pi)).sum()
    )


# -- centered stick-breaking simplex transform -------------------------------

_STICK_OFFSETS: dict[int, np.ndarray] = {}


def _stick_offsets(k: int) -> np.ndarray:
    # log(1 / (K - k)) for k = 1..K-1 centers zero at the uniform simplex
    out = _STICK_OFFSETS.get(k)
    if out is None:
        out = -np.log(np.arange(k - 1, 0, -1, dtype=np.float64))
        _STICK_OFFSETS[k] = out
    return out


def stick_breaking(y) -> np.ndarray:
    """Map K-1 unconstrained coordinates to an interior K-simplex point.

    Batches over leading axes: input (..., K-1) gives output (..., K).
    """
    log_pi = stick_breaking_log(y)
    return np.exp(log_pi)


def stick_breaking_log(y) -> np.ndarray:
    """log pi for the centered stick-breaking map (numerically stable)."""
    y = np.asarray(y, dtype=np.float64)
    k = y.shape[-1] + 1
    if k == 1:
        return np.zeros(y.shape[:-1] + (1,))
    t = y + _stick_offsets(k)
    log_z = log_expit(t)
    log_1mz = log_expit(-t)
    cum = np.cumsum(log_1mz, axis=-1)
    shifted = np.concatenate([np.zeros_like(cum[..., :1]), cum[..., :-1]], axis=-1)
    return np.concatenate([log_z + shifted, cum[..., -1:]], axis=-1)


def stick_breaking_inverse(pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    k = pi.size
    remaining = 1.0 - np.concatenate(([0.0], np.cumsum(pi[:-1])))
    z = pi[:-1] / remaining[:-1]
    return np.log(z) - np.log1p(-z) - _stick_offsets(k)


def stick_breaking_log_jacobian(y) -> float:
    """log |det| of the K-1 -> first K-1 simplex coordinates map.

    Equals sum(log pi) over all K components, which makes the combined
    Dirichlet(alpha) prior plus Jacobian term simply sum(alpha * log pi).
    """
    return float(stick_breaking_log(y).sum())


def stick_breaking_vjp(y, weights) -> np.ndarray:
    """Gradient w.r.t. y of sum_i weights_i * log pi_i(y).

    Covers both the Dirichlet-with-Jacobian prior term (weights = alpha) and
    responsibility-weighted Categorical likelihood terms in one formula:
    g_k = w_k - z_k * suffix_sum(w)_k.  Batches over leading axes.
    """
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    z = expit(y + _stick_offsets(y.shape[-1] + 1))
    suffix = np.cumsum(w[..., ::-1], axis=-1)[..., ::-1]
    return w[..., :-1] - z * suffix[..., :-1]


# -- samplers -----------------------------------------------------------------

def sample_beta(omega, kappa, size, rng: np.random.Generator):
    alpha, beta = beta_shapes(omega, kappa)
    return rng.beta(alpha, beta, size=size)


def sample_zig(gate, success, size, rng: np.random.Generator):
    """Zero-inflated Geometric draws on {0, 1, ...}."""
    inflated = rng.random(size) < gate
    counts = rng.geometric(success, size=size) - 1  # numpy's support is {1, ...}
    return np.where(inflated, 0, counts)


def sample_categorical(probs, size, rng: np.random.Generator):
    probs = np.asarray(probs, dtype=np.float64)
    return rng.choice(probs.size, size=size, p=probs / probs.sum())


def sample_dirichlet(alpha, rng: np.random.Generator):
    return rng.dirichlet(np.asarray(alpha, dtype=np.float64))
