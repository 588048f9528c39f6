"""Strictly ordered vector transforms.

The forward map sends an unconstrained vector x to a strictly increasing one
by accumulating exponentials,

    lam_1 = x_1,    lam_c = x_1 + sum_{i=2..c} exp(x_i),

and is a smooth bijection whose inverse takes logs of consecutive gaps.  The
reversed variant flips the output to get a strictly decreasing vector, and the
sigmoid composition lands in (0, 1) while preserving monotonicity.  Priors on
ordered parameters are placed on the pre-transform coordinates, so samplers
need no Jacobian correction here; the log-determinant is still exposed for
testing (the Jacobian is lower triangular with diagonal 1, exp(x_2), ...).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def _check_finite(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("expected a non-empty 1-d vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite entries in input vector")
    return x


def to_ordered(x) -> np.ndarray:
    """Map unconstrained x to a strictly increasing vector."""
    x = _check_finite(x)
    out = np.empty_like(x)
    out[0] = x[0]
    if x.size > 1:
        out[1:] = x[0] + np.cumsum(np.exp(x[1:]))
    return out


def from_ordered(lam) -> np.ndarray:
    """Invert to_ordered; requires strictly increasing input."""
    lam = _check_finite(lam)
    if lam.size > 1 and not np.all(np.diff(lam) > 0.0):
        raise ValueError("input is not strictly increasing")
    out = np.empty_like(lam)
    out[0] = lam[0]
    if lam.size > 1:
        out[1:] = np.log(np.diff(lam))
    return out


def to_ordered_reversed(x) -> np.ndarray:
    """Map unconstrained x to a strictly decreasing vector (flipped forward map)."""
    return to_ordered(x)[::-1].copy()


def sigmoid_ordered(x, reverse: bool = False) -> np.ndarray:
    """Element-wise sigmoid of the (possibly reversed) ordered transform.

    Output lies in (0, 1), strictly increasing, or strictly decreasing when
    ``reverse`` is set.
    """
    lam = to_ordered_reversed(x) if reverse else to_ordered(x)
    return expit(lam)


def ordered_vjp(x, grad_out) -> np.ndarray:
    """Pull a gradient w.r.t. to_ordered(x) back to x.

    The transpose-Jacobian action: g_x[0] = sum(g), g_x[i] = exp(x_i) *
    suffix-sum(g)[i] for i >= 1.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    out = np.empty_like(x)
    suffix = np.cumsum(g[::-1])[::-1]
    out[0] = suffix[0]
    if x.size > 1:
        out[1:] = np.exp(x[1:]) * suffix[1:]
    return out


def log_det_jacobian(x) -> float:
    """log |det d to_ordered / dx| = sum of x_2..x_C."""
    x = _check_finite(x)
    return float(np.sum(x[1:]))
