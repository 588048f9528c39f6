"""Gradient-based MCMC over the unconstrained parameter vector.

Adaptive Hamiltonian Monte Carlo with dynamic trajectory doubling.  The exact
variant implemented here: multinomial selection of the proposal among tree
leaves, the standard inner-product U-turn criterion evaluated with
metric-scaled momenta, divergence declared when the Hamiltonian error exceeds
1000, and Stan-style windowed warmup (dual-averaging step size toward a target
acceptance rate; diagonal mass matrix re-estimated over expanding middle
windows; everything frozen for the final stretch of warmup).

Chains run with isolated RNG streams spawned from the seed, so results are
reproducible for a fixed (seed, chain count) regardless of worker layout.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .data import ALL_SITES, EventArrays
from .model import (
    DataCache,
    Hyperparams,
    ParamsConstrained,
    constrain,
    initial_point,
    log_joint,
)

DIVERGENCE_THRESHOLD = 1000.0
MAX_DIVERGENCE_RATE = 0.10


class SamplerError(Exception):
    """Raised when sampling cannot proceed (bad config, non-finite start)."""


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings; draw/warmup defaults follow the evaluation protocol,
    the rest are conventional values the source experiments leave unstated."""

    draws: int = 1000
    warmup: int = 200
    chains: int = 4
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError("draws must be at least 1")
        if self.warmup < 0:
            raise ValueError("warmup cannot be negative")
        if self.chains < 1:
            raise ValueError("chains must be at least 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be at least 1")


class _Potential:
    """Picklable log-density-and-gradient callable on unconstrained coords."""

    def __init__(self, data: EventArrays | None, hyper: Hyperparams, sites=ALL_SITES):
        self.hyper = hyper
        self.sites = tuple(sites)
        self.cache = DataCache(data, hyper) if data is not None and len(data) else None

    def __call__(self, x: np.ndarray):
        if not np.all(np.isfinite(x)):
            return -np.inf, np.zeros_like(x)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            lp, grad = log_joint(x, None, self.hyper, self.sites, cache=self.cache)
        if not np.isfinite(lp) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros_like(x)
        return lp, grad


def _leapfrog(potential, x, r, grad, eps, inv_mass):
    r_half = r + 0.5 * eps * grad
    x_new = x + eps * inv_mass * r_half
    lp_new, grad_new = potential(x_new)
    r_new = r_half + 0.5 * eps * grad_new
    return x_new, r_new, lp_new, grad_new


def _kinetic(r, inv_mass) -> float:
    return 0.5 * float(np.dot(r, inv_mass * r))


class _Tree:
    """End points, proposal and bookkeeping for one trajectory subtree."""

    __slots__ = (
        "x_minus", "r_minus", "grad_minus",
        "x_plus", "r_plus", "grad_plus",
        "x", "lp", "grad", "log_weight",
        "turning", "divergent", "n_div", "sum_alpha", "n_alpha",
    )

    def __init__(self, x, r, lp, grad, log_weight, divergent, alpha):
        self.x_minus = self.x_plus = self.x = x
        self.r_minus = self.r_plus = r
        self.grad_minus = self.grad_plus = self.grad = grad
        self.lp = lp
        self.log_weight = log_weight
        self.turning = False
        self.divergent = divergent
        self.n_div = int(divergent)
        self.sum_alpha = alpha
        self.n_alpha = 1

    @property
    def ok(self) -> bool:
        return not (self.turning or self.divergent)


def _no_uturn(x_plus, x_minus, r_plus, r_minus, inv_mass) -> bool:
    dx = x_plus - x_minus
    return (
        float(np.dot(dx, inv_mass * r_minus)) >= 0.0
        and float(np.dot(dx, inv_mass * r_plus)) >= 0.0
    )


def _build_tree(potential, x, r, grad, direction, depth, eps, inv_mass, h0, rng):
    if depth == 0:
        x1, r1, lp1, grad1 = _leapfrog(potential, x, r, grad, direction * eps, inv_mass)
        h1 = np.inf if not np.isfinite(lp1) else -lp1 + _kinetic(r1, inv_mass)
        energy_error = h1 - h0
        divergent = (not np.isfinite(h1)) or energy_error > DIVERGENCE_THRESHOLD
        log_weight = -np.inf if divergent else -energy_error
        alpha = 0.0 if divergent else min(1.0, float(np.exp(min(0.0, -energy_error))))
        return _Tree(x1, r1, lp1, grad1, log_weight, divergent, alpha)

    inner = _build_tree(potential, x, r, grad, direction, depth - 1, eps, inv_mass, h0, rng)
    if not inner.ok:
        return inner
    if direction == 1:
        x2, r2, grad2 = inner.x_plus, inner.r_plus, inner.grad_plus
    else:
        x2, r2, grad2 = inner.x_minus, inner.r_minus, inner.grad_minus
    outer = _build_tree(potential, x2, r2, grad2, direction, depth - 1, eps, inv_mass, h0, rng)

    inner.sum_alpha += outer.sum_alpha
    inner.n_alpha += outer.n_alpha
    inner.n_div += outer.n_div
    inner.divergent |= outer.divergent
    if not outer.ok:
        inner.turning |= outer.turning
        return inner

    total = np.logaddexp(inner.log_weight, outer.log_weight)
    if np.log(rng.random()) < outer.log_weight - total:
        inner.x, inner.lp, inner.grad = outer.x, outer.lp, outer.grad
    inner.log_weight = total
    if direction == 1:
        inner.x_plus, inner.r_plus, inner.grad_plus = outer.x_plus, outer.r_plus, outer.grad_plus
    else:
        inner.x_minus, inner.r_minus, inner.grad_minus = outer.x_minus, outer.r_minus, outer.grad_minus
    inner.turning = not _no_uturn(
        inner.x_plus, inner.x_minus, inner.r_plus, inner.r_minus, inv_mass
    )
    return inner


@dataclass
class _StepStats:
    accept_stat: float
    depth: int
    divergent: bool
    n_steps: int


def _nuts_step(potential, x, lp, grad, eps, inv_mass, mass_std, max_depth, rng):
    r0 = rng.normal(size=x.size) * mass_std
    h0 = -lp + _kinetic(r0, inv_mass)

    x_minus = x_plus = prop_x = x
    r_minus = r_plus = r0
    grad_minus = grad_plus = prop_grad = grad
    prop_lp = lp
    log_weight = 0.0

    depth = 0
    n_steps = 0
    sum_alpha = 0.0
    n_alpha = 0
    n_div = 0
    while depth < max_depth:
        direction = 1 if rng.random() < 0.5 else -1
        if direction == 1:
            tree = _build_tree(
                potential, x_plus, r_plus, grad_plus, 1, depth, eps, inv_mass, h0, rng
            )
        else:
            tree = _build_tree(
                potential, x_minus, r_minus, grad_minus, -1, depth, eps, inv_mass, h0, rng
            )
        n_steps += 2**depth
        sum_alpha += tree.sum_alpha
        n_alpha += tree.n_alpha
        n_div += tree.n_div
        if not tree.ok:
            break
        # biased progressive sampling toward the fresh subtree
        if np.log(rng.random()) < tree.log_weight - log_weight:
            prop_x, prop_lp, prop_grad = tree.x, tree.lp, tree.grad
        log_weight = np.logaddexp(log_weight, tree.log_weight)
        if direction == 1:
            x_plus, r_plus, grad_plus = tree.x_plus, tree.r_plus, tree.grad_plus
        else:
            x_minus, r_minus, grad_minus = tree.x_minus, tree.r_minus, tree.grad_minus
        depth += 1
        if not _no_uturn(x_plus, x_minus, r_plus, r_minus, inv_mass):
            break

    accept = sum_alpha / max(n_alpha, 1)
    return prop_x, prop_lp, prop_grad, _StepStats(accept, depth, n_div > 0, n_steps)


def _find_reasonable_eps(potential, x, lp, grad, inv_mass, mass_std, rng) -> float:
    """Doubling/halving heuristic for the initial step size."""
    eps = 1.0
    r = rng.normal(size=x.size) * mass_std
    h0 = -lp + _kinetic(r, inv_mass)

    def log_ratio(eps):
        _, r1, lp1, _ = _leapfrog(potential, x, r, grad, eps, inv_mass)
        if not np.isfinite(lp1):
            return -np.inf
        return h0 - (-lp1 + _kinetic(r1, inv_mass))

    ratio = log_ratio(eps)
    for _ in range(60):
        if np.isfinite(ratio):
            break
        eps *= 0.5
        ratio = log_ratio(eps)
    direction = 1.0 if ratio > np.log(0.5) else -1.0
    for _ in range(100):
        if direction * ratio <= -direction * np.log(2.0):
            break
        eps *= 2.0**direction
        if not 1e-10 < eps < 1e7:
            break
        ratio = log_ratio(eps)
    return float(np.clip(eps, 1e-10, 1e7))


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, eps0, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.log(10.0 * eps0)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.m = 0

    def update(self, accept_stat: float) -> float:
        self.m += 1
        eta = 1.0 / (self.m + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat)
        log_eps = self.mu - np.sqrt(self.m) / self.gamma * self.h_bar
        w = self.m ** -self.kappa
        self.log_eps_bar = w * log_eps + (1.0 - w) * self.log_eps_bar
        return float(np.exp(log_eps))

    def adapted(self) -> float:
        return float(np.exp(self.log_eps_bar))


def _warmup_windows(warmup: int) -> tuple[int, list[int], int]:
    """(fast phase end, mass-update iterations, freeze iteration).

    Step-size-only adaptation for the first 15%, joint step-size plus
    diagonal-mass over expanding windows for the middle 75%, frozen final 10%.
    The last mass update is pulled forward so dual averaging has a stretch to
    re-adapt the step size to the final metric before freezing.
    """
    if warmup == 0:
        return 0, [], 0
    fast = max(1, int(0.15 * warmup))
    final = max(1, int(0.10 * warmup))
    middle_start, middle_end = fast, warmup - final
    if middle_end - middle_start < 20:
        return warmup, [], warmup
    tail = max(10, (middle_end - middle_start) // 5)
    last_update = middle_end - tail
    points = []
    size = 25
    cur = middle_start
    while True:
        end = cur + size
        if end + size > last_update:
            end = last_update
        points.append(end)
        if end >= last_update:
            break
        cur = end
        size *= 2
    return fast, points, middle_end


@dataclass
class _ChainResult:
    draws: np.ndarray          # (T, D) unconstrained
    accept_rate: float
    divergences: int
    step_size: float
    mean_depth: float


def _run_chain(potential, x0, config: SamplerConfig, seed_seq) -> _ChainResult:
    rng = np.random.default_rng(seed_seq)
    x = np.asarray(x0, dtype=np.float64)
    lp, grad = potential(x)
    if not np.isfinite(lp):
        raise SamplerError("non-finite log density at the initial point")
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise SamplerError(f"non-finite gradient at coordinate {int(bad[0])}")

    inv_mass = np.ones(x.size)
    mass_std = np.ones(x.size)
    eps = _find_reasonable_eps(potential, x, lp, grad, inv_mass, mass_std, rng)
    da = _DualAveraging(eps, config.target_accept)
    fast_end, mass_points, freeze_at = _warmup_windows(config.warmup)
    mass_points_set = set(mass_points)

    window: list[np.ndarray] = []
    draws = np.empty((config.draws, x.size))
    divergences = 0
    depths = 0.0
    accepts = 0.0

    # under the unadapted identity metric, badly conditioned posteriors force
    # maximum-depth trajectories; keep them short until the first mass update
    warm_cap = min(config.max_tree_depth, 6)
    mass_adapted = False

    for m in range(config.warmup + config.draws):
        depth_cap = warm_cap if (m < config.warmup and not mass_adapted) else config.max_tree_depth
        x, lp, grad, st = _nuts_step(
            potential, x, lp, grad, eps, inv_mass, mass_std, depth_cap, rng
        )
        if m < config.warmup:
            if m < freeze_at:
                eps = da.update(st.accept_stat)
            if fast_end <= m < freeze_at:
                window.append(x)
            if (m + 1) in mass_points_set:
                if len(window) >= 5:
                    var = np.var(np.asarray(window), axis=0, ddof=1)
                    n = len(window)
                    inv_mass = n / (n + 5.0) * var + 1e-3 * (5.0 / (n + 5.0))
                    inv_mass = np.maximum(inv_mass, 1e-10)
                    mass_std = 1.0 / np.sqrt(inv_mass)
                    mass_adapted = True
                window = []
                eps = _find_reasonable_eps(potential, x, lp, grad, inv_mass, mass_std, rng)
                da = _DualAveraging(eps, config.target_accept)
            if m + 1 == freeze_at:
                eps = da.adapted()
        else:
            i = m - config.warmup
            draws[i] = x
            divergences += int(st.divergent)
            depths += st.depth
            accepts += st.accept_stat

    return _ChainResult(
        draws=draws,
        accept_rate=accepts / config.draws,
        divergences=divergences,
        step_size=eps,
        mean_depth=depths / config.draws,
    )


@dataclass
class PosteriorSamples:
    """Retained draws (chains kept separate) plus sampler statistics."""

    hyper: Hyperparams
    config: SamplerConfig
    sites: tuple
    unconstrained: np.ndarray       # (chains, T, D)
    accept_rate: np.ndarray         # (chains,)
    divergences: np.ndarray         # (chains,)
    step_size: np.ndarray           # (chains,)
    mean_tree_depth: np.ndarray     # (chains,)
    _thetas: list = field(default=None, repr=False)

    @property
    def n_chains(self) -> int:
        return self.unconstrained.shape[0]

    @property
    def n_draws(self) -> int:
        return self.unconstrained.shape[1]

    @property
    def chain_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_chains), self.n_draws)

    @property
    def thetas(self) -> list[ParamsConstrained]:
        """Constrained parameter packs, chains concatenated in order."""
        if self._thetas is None:
            flat = self.unconstrained.reshape(-1, self.unconstrained.shape[2])
            self._thetas = [constrain(x, self.hyper) for x in flat]
        return self._thetas

    def constrained_matrix(self) -> tuple[np.ndarray, list[str]]:
        """(chains, T, P) matrix of constrained scalars plus their names."""
        thetas = self.thetas
        names = thetas[0].param_names()
        mat = np.asarray([t.flatten() for t in thetas])
        return mat.reshape(self.n_chains, self.n_draws, -1), names

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            header = {
                "version": 1,
                "hyper": self.hyper.as_dict(),
                "config": {
                    "draws": self.config.draws,
                    "warmup": self.config.warmup,
                    "chains": self.config.chains,
                    "target_accept": self.config.target_accept,
                    "max_tree_depth": self.config.max_tree_depth,
                    "seed": self.config.seed,
                },
                "sites": list(self.sites),
                "accept_rate": self.accept_rate.tolist(),
                "divergences": self.divergences.tolist(),
                "step_size": self.step_size.tolist(),
                "mean_tree_depth": self.mean_tree_depth.tolist(),
            }
            fh.write(json.dumps(header) + "\n")
            for chain in range(self.n_chains):
                for t in range(self.n_draws):
                    row = {
                        "chain": chain,
                        "draw": t,
                        "x": self.unconstrained[chain, t].tolist(),
                    }
                    fh.write(json.dumps(row) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "PosteriorSamples":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            hyper = Hyperparams.from_dict(header["hyper"])
            cfg = SamplerConfig(**header["config"])
            rows = [json.loads(line) for line in fh if line.strip()]
        n_chains = max(r["chain"] for r in rows) + 1
        n_draws = max(r["draw"] for r in rows) + 1
        dim = len(rows[0]["x"])
        un = np.empty((n_chains, n_draws, dim))
        for r in rows:
            un[r["chain"], r["draw"]] = r["x"]
        return cls(
            hyper=hyper,
            config=cfg,
            sites=tuple(header["sites"]),
            unconstrained=un,
            accept_rate=np.asarray(header["accept_rate"]),
            divergences=np.asarray(header["divergences"]),
            step_size=np.asarray(header["step_size"]),
            mean_tree_depth=np.asarray(header["mean_tree_depth"]),
        )


def sample_posterior(
    data: EventArrays | None,
    hyper: Hyperparams,
    config: SamplerConfig,
    sites=ALL_SITES,
) -> PosteriorSamples:
    """Run adaptive NUTS chains over the model's unconstrained parameters.

    ``data`` may be empty or None, in which case chains target the prior.
    Raises SamplerError for non-finite starts; warns when the post-warmup
    divergence rate exceeds 10%.
    """
    potential = _Potential(data, hyper, sites)
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)

    def start(seed_seq):
        init_rng = np.random.default_rng(seed_seq.spawn(1)[0])
        return initial_point(hyper, init_rng)

    if config.n_jobs == 1 or config.chains == 1:
        results = [_run_chain(potential, start(s), config, s) for s in seeds]
    else:
        results = Parallel(n_jobs=config.n_jobs)(
            delayed(_run_chain)(potential, start(s), config, s) for s in seeds
        )

    samples = PosteriorSamples(
        hyper=hyper,
        config=config,
        sites=tuple(sites),
        unconstrained=np.stack([r.draws for r in results]),
        accept_rate=np.asarray([r.accept_rate for r in results]),
        divergences=np.asarray([r.divergences for r in results], dtype=np.int64),
        step_size=np.asarray([r.step_size for r in results]),
        mean_tree_depth=np.asarray([r.mean_depth for r in results]),
    )
    total_div = int(samples.divergences.sum())
    total_draws = config.draws * config.chains
    if total_div > MAX_DIVERGENCE_RATE * total_draws:
        warnings.warn(
            f"{total_div} of {total_draws} post-warmup draws diverged; "
            "posterior results are unreliable",
            stacklevel=2,
        )
    return samples


@dataclass(frozen=True)
class IntensityEstimate:
    """Point estimates of one event's ordinal intensity (classes are 1-based)."""

    mean: float
    mode: int
    mass: np.ndarray

    def __post_init__(self):
        if abs(float(self.mass.sum()) - 1.0) > 1e-9:
            raise ValueError("class mass must sum to 1")


class IntensityScores:
    """Per-event intensity summaries: draw-averaged class masses and the
    derived mean and modal class (ties resolve to the smallest class)."""

    def __init__(self, mass: np.ndarray):
        self.mass = mass / mass.sum(axis=1, keepdims=True)
        classes = np.arange(1, mass.shape[1] + 1, dtype=np.float64)
        self.mean = np.clip(self.mass @ classes, 1.0, float(mass.shape[1]))
        self.mode = np.argmax(mass, axis=1) + 1

    def __len__(self) -> int:
        return self.mass.shape[0]

    def __getitem__(self, i: int) -> IntensityEstimate:
        return IntensityEstimate(
            mean=float(self.mean[i]), mode=int(self.mode[i]), mass=self.mass[i]
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def score_events(
    samples: PosteriorSamples, data: EventArrays, sites=ALL_SITES, thin: int = 1
) -> IntensityScores:
    """Average per-event class responsibilities over posterior draws.

    The ordering constraints make class identities stable across draws, so
    averaging masses (and reading off mean/mode) is meaningful.
    """
    from .model import _class_log_weights

    cache = DataCache(data, samples.hyper)
    thetas = samples.thetas[::thin]
    mass = np.zeros((len(data), samples.hyper.n_classes))
    for theta in thetas:
        w = _class_log_weights(theta, cache, sites)
        w -= w.max(axis=1, keepdims=True)
        np.exp(w, out=w)
        w /= w.sum(axis=1, keepdims=True)
        mass += w
    mass /= len(thetas)
    return IntensityScores(mass)
