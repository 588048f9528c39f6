"""Convergence diagnostics for posterior chains.

Split-chain R-hat (each chain halved before the between/within comparison)
and bulk effective sample size on rank-normalized draws with Geyer's initial
monotone sequence estimator for the autocorrelation time.  Degenerate inputs
(constant chains, single chains) are flagged rather than reported as healthy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

RHAT_WARN = 1.05


def _split_chains(draws: np.ndarray) -> np.ndarray:
    """(chains, T) -> (2*chains, T//2), dropping the middle draw if T is odd."""
    _, t = draws.shape
    half = t // 2
    return np.vstack((draws[:, :half], draws[:, t - half:]))


def _rank_normalize(draws: np.ndarray) -> np.ndarray:
    """Map pooled draws to normal scores via fractional ranks."""
    ranks = stats.rankdata(draws, method="average").reshape(draws.shape)
    return stats.norm.ppf((ranks - 0.375) / (draws.size + 0.25))


def split_rhat(draws: np.ndarray) -> float:
    """Split-chain potential scale reduction factor.

    Returns NaN for degenerate (zero within-chain variance) inputs.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    chains = _split_chains(draws)
    _, t = chains.shape
    if t < 2:
        return float("nan")
    chain_means = chains.mean(axis=1)
    within = chains.var(axis=1, ddof=1).mean()
    between = t * np.var(chain_means, ddof=1)
    if within == 0.0 or not np.isfinite(within):
        return float("nan")
    var_est = (t - 1.0) / t * within + between / t
    return float(np.sqrt(var_est / within))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    return np.fft.irfft(f * np.conj(f), size)[:n].real / n


def _ess(chains: np.ndarray) -> float:
    """Effective sample size of (chains, T) draws via paired autocorrelations."""
    m, t = chains.shape
    if t < 4:
        return float("nan")
    acov = np.asarray([_autocov(chains[i]) for i in range(m)])
    chain_means = chains.mean(axis=1)
    mean_var = acov[:, 0].mean() * t / (t - 1.0)
    var_plus = mean_var * (t - 1.0) / t
    if m > 1:
        var_plus += np.var(chain_means, ddof=1)
    if var_plus == 0.0 or not np.isfinite(var_plus):
        return float("nan")

    rho = np.zeros(t)
    rho[0] = 1.0
    rho[1] = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho_even, rho_odd = rho[0], rho[1]
    k = 1
    while k < t - 2 and (rho_even + rho_odd) >= 0.0:
        rho_even = 1.0 - (mean_var - acov[:, k + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, k + 2].mean()) / var_plus
        rho[k + 1] = rho_even
        if rho_even + rho_odd >= 0.0:
            rho[k + 2] = rho_odd
        k += 2
    max_k = k
    # enforce monotone decrease of paired sums
    k = 1
    while k <= max_k - 2:
        if rho[k + 1] + rho[k + 2] > rho[k - 1] + rho[k]:
            rho[k + 1] = (rho[k - 1] + rho[k]) / 2.0
            rho[k + 2] = rho[k + 1]
        k += 2
    tau = -1.0 + 2.0 * rho[:max_k].sum() + rho[max_k + 1: max_k + 2].sum()
    if not np.isfinite(tau) or tau <= 0.0:
        return float("nan")
    return float(m * t / tau)


def bulk_ess(draws: np.ndarray) -> float:
    """Bulk effective sample size: split chains, rank-normalized."""
    draws = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    chains = _split_chains(draws)
    if np.allclose(chains, chains.flat[0]):
        return float("nan")
    return _ess(_rank_normalize(chains))


@dataclass
class ParameterDiagnostics:
    name: str
    rhat: float | None
    ess_bulk: float
    mean: float
    sd: float
    q05: float
    q50: float
    q95: float


@dataclass
class DiagnosticsReport:
    parameters: list[ParameterDiagnostics]
    divergences: int
    notices: list[str] = field(default_factory=list)

    @property
    def max_rhat(self) -> float | None:
        values = [p.rhat for p in self.parameters if p.rhat is not None and np.isfinite(p.rhat)]
        return max(values) if values else None

    @property
    def min_ess(self) -> float:
        values = [p.ess_bulk for p in self.parameters if np.isfinite(p.ess_bulk)]
        return min(values) if values else float("nan")

    def as_dict(self) -> dict:
        return {
            "divergences": self.divergences,
            "max_rhat": self.max_rhat,
            "min_ess_bulk": self.min_ess if np.isfinite(self.min_ess) else None,
            "notices": self.notices,
            "parameters": [
                {
                    "name": p.name,
                    "rhat": None if p.rhat is None or not np.isfinite(p.rhat) else p.rhat,
                    "ess_bulk": None if not np.isfinite(p.ess_bulk) else p.ess_bulk,
                    "mean": p.mean,
                    "sd": p.sd,
                    "q05": p.q05,
                    "q50": p.q50,
                    "q95": p.q95,
                }
                for p in self.parameters
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def diagnostics(samples) -> DiagnosticsReport:
    """Per-parameter R-hat/ESS and trace summaries for PosteriorSamples.

    R-hat needs at least two chains; with one chain it is omitted with a
    notice.  Constant traces get flagged instead of silently passing.
    """
    matrix, names = samples.constrained_matrix()
    n_chains = matrix.shape[0]
    notices = []
    single_chain = n_chains < 2
    if single_chain:
        notices.append("single chain: R-hat omitted (needs >= 2 chains)")

    params = []
    flagged_constant = False
    flagged_rhat = False
    for j, name in enumerate(names):
        trace = matrix[:, :, j]
        pooled = trace.ravel()
        rhat = None if single_chain else split_rhat(trace)
        ess = bulk_ess(trace)
        if (rhat is not None and not np.isfinite(rhat)) or not np.isfinite(ess):
            flagged_constant = True
        if rhat is not None and np.isfinite(rhat) and rhat > RHAT_WARN:
            flagged_rhat = True
        q05, q50, q95 = np.quantile(pooled, [0.05, 0.5, 0.95])
        params.append(
            ParameterDiagnostics(
                name=name,
                rhat=rhat,
                ess_bulk=ess,
                mean=float(pooled.mean()),
                sd=float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0,
                q05=float(q05),
                q50=float(q50),
                q95=float(q95),
            )
        )
    if flagged_constant:
        notices.append("degenerate traces detected: R-hat/ESS undefined for some parameters")
    if flagged_rhat:
        notices.append(f"some parameters have R-hat > {RHAT_WARN}: chains have not mixed")
    total_div = int(np.asarray(samples.divergences).sum())
    if total_div:
        notices.append(f"{total_div} divergent transitions after warmup")
    return DiagnosticsReport(parameters=params, divergences=total_div, notices=notices)
