"""Stochastic gradient Riemannian Langevin dynamics over the expanded-mean latents.

Each iteration moves every coordinate of ``z`` by::

    z <- z + eps/2 * (z * grad log p(z | data) + 1) + sqrt(z) * N(0, eps)

with the log-likelihood gradient estimated from a few uniformly drawn
periods per store.  Negative expanded-mean proposals are mirrored about 0
and rate parameters are reflected back into their prior box.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize

from .domain import Dataset
from .likelihood import (
    Hyperparameters,
    LikelihoodEvaluator,
    Model,
    ModelParams,
    transform,
    untransform,
)

log = logging.getLogger(__name__)

__all__ = [
    "DegenerateVarianceError",
    "MapResult",
    "PosteriorSamples",
    "SamplerConfig",
    "align_segments",
    "gelman_rubin",
    "holdout_perplexity",
    "map_estimate",
    "run_chain",
    "run_chains",
    "sample_prior",
    "sgrld_step",
    "step_size",
    "transform",
    "tune_schedule",
    "untransform",
]

RHAT_THRESHOLD = 1.1
DEFAULT_GRID = {
    "a": (1e-3, 1e-2, 1e-1),
    "b": (1e2, 1e3, 1e4),
    "c": (0.51, 0.6, 0.8),
}


class DegenerateVarianceError(ValueError):
    """Every chain is constant, so the within-chain variance is zero."""


@dataclass(frozen=True)
class SamplerConfig:
    """Step schedule, minibatching and chain settings.

    The step size is ``a (1 + w/b)^-c``.  When ``a`` is None it is set to
    ``a_rel / M`` with ``M`` the number of training purchases, which keeps
    the drift term of order ``a_rel`` regardless of dataset size.
    """

    a: float | None = None
    a_rel: float = 1.0
    b: float = 1000.0
    c: float = 0.6
    minibatch: int = 3
    iterations: int = 10000
    chains: int = 3
    burn_in: float = 0.5
    seed: int = 0
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    theta_mass: float | None = None
    phi_mass: float | None = None
    map_max_iter: int = 3000
    map_retries: int = 10
    map_restarts: int = 20
    map_starts: int = 3
    n_jobs: int = 1

    def __post_init__(self):
        if self.a is not None and self.a <= 0:
            raise ValueError("step scale a must be positive")
        if self.a_rel <= 0 or self.b <= 0 or self.c <= 0:
            raise ValueError("step schedule constants must be positive")
        if self.minibatch < 1 or self.iterations < 1 or self.chains < 1:
            raise ValueError("minibatch, iterations and chains must be positive")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn-in fraction must lie in [0, 1)")

    def resolve_a(self, n_purchases: int) -> float:
        if self.a is not None:
            return self.a
        return self.a_rel / max(n_purchases, 1)

    @property
    def n_burn(self) -> int:
        return int(self.burn_in * self.iterations)


def step_size(config: SamplerConfig, w, n_purchases: int = 1):
    """``a (1 + w/b)^-c`` at iteration ``w`` (0-based)."""
    return config.resolve_a(n_purchases) * (1.0 + np.asarray(w, dtype=float) / config.b) ** (-config.c)


def _reflect(x, lo, hi):
    width = hi - lo
    y = x - lo
    finite = np.isfinite(width)
    safe = np.where(finite & (width > 0), width, 1.0)
    y = np.where(finite, np.mod(y, 2.0 * safe), np.abs(y))
    y = np.where(finite & (y > safe), 2.0 * safe - y, y)
    return lo + np.where(finite & (width <= 0), 0.0, y)


_FLOOR = np.finfo(float).tiny


def sgrld_step(z, grad, eps: float, rng: np.random.Generator | None = None, *,
               noise=None, lower=None, upper=None) -> np.ndarray:
    """One Langevin move in the ``diag(z)^-1`` metric.

    Parameters
    ----------
    z : current state, all coordinates nonnegative
    grad : gradient of the log posterior at ``z``
    eps : step size
    rng : source of the Gaussian noise, unless ``noise`` (standard normal
        draws, one per coordinate) is given
    lower, upper : per-coordinate reflection bounds; default ``[0, inf)``,
        i.e. mirroring about 0
    """
    z = np.asarray(z, dtype=float)
    if noise is None:
        noise = rng.standard_normal(z.shape)
    proposal = z + 0.5 * eps * (z * grad + 1.0) + np.sqrt(z * eps) * noise
    lo = np.zeros_like(z) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full_like(z, np.inf) if upper is None else np.asarray(upper, dtype=float)
    out = _reflect(proposal, lo, hi)
    return np.maximum(out, np.maximum(lo, _FLOOR))


# -- prior draws and MAP -----------------------------------------------------


def _bounds(model: Model, ev: LikelihoodEvaluator) -> tuple[np.ndarray, np.ndarray]:
    lay = model.layout
    lower = np.zeros(lay.size)
    upper = np.full(lay.size, np.inf)
    lower[lay.eta] = ev.eta_bounds[:, 0]
    upper[lay.eta] = ev.eta_bounds[:, 1]
    return lower, upper


def sample_prior(model: Model, hyper: Hyperparameters, horizon: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Latent vector drawn from the prior: Gamma(shape, 1) coordinates, uniform rates."""
    lay = model.layout
    z = np.empty(lay.size)
    b = hyper.bounds(model, horizon)
    z[lay.eta] = rng.uniform(b[:, 0], b[:, 1], size=lay.eta.shape)
    exp = lay.expanded
    z[exp] = np.maximum(rng.gamma(hyper.shapes(model)[exp]), _FLOOR)
    return z


# lower bound of expanded coordinates during the MAP search
_ZMIN = 1e-12


@dataclass(frozen=True)
class MapResult:
    state: np.ndarray
    log_posterior: float
    grad_norm: float
    converged: bool
    n_iter: int


def _blocks(model: Model) -> list[np.ndarray]:
    lay = model.layout
    out = list(lay.theta)
    if lay.phi is not None:
        out += list(lay.phi)
    if lay.tau is not None:
        out += list(lay.tau)
    return out


def map_estimate(data: Dataset | LikelihoodEvaluator, model: Model, config: SamplerConfig,
                 rng: np.random.Generator | None = None, init=None) -> MapResult:
    """Best of ``config.map_starts`` local MAP searches from independent prior draws.

    ``init``, when given, replaces the first prior draw.
    """
    ev = data if isinstance(data, LikelihoodEvaluator) else LikelihoodEvaluator(model, data, config.hyper)
    rng = rng or np.random.default_rng(config.seed)
    best = None
    for k in range(config.map_starts):
        res = _local_map(ev, model, config, rng, init if k == 0 else None)
        if best is None or res.log_posterior > best.log_posterior:
            best = res
    return best


def _local_map(ev: LikelihoodEvaluator, model: Model, config: SamplerConfig,
               rng: np.random.Generator, init=None) -> MapResult:
    """Local maximum of the log posterior in probability space.

    The objective is the log-likelihood plus the Dirichlet/Beta
    log-densities of the normalized blocks (see :func:`log_posterior_prob`).
    L-BFGS-B maximizes it over ``log eta`` within the rate box and over the
    raw expanded coordinates, bounded away from 0; a quadratic penalty on
    the log of each block total removes the scale direction without moving
    the optimum.  The start is a prior draw, redrawn up to
    ``config.map_retries`` times while the posterior is not finite there.
    """
    lay = model.layout
    exp = lay.expanded
    eta_idx = lay.eta.ravel()
    shapes = config.hyper.shapes(model)
    blocks = _blocks(model)
    lo, hi = _bounds(model, ev)
    x_lo = np.where(exp, _ZMIN, 0.0)
    x_hi = np.full(lay.size, np.inf)
    with np.errstate(divide="ignore"):
        x_lo[eta_idx] = np.maximum(np.log(lo[eta_idx]), np.log(_ZMIN))
        x_hi[eta_idx] = np.log(hi[eta_idx])

    def to_z(x):
        z = x.copy()
        z[eta_idx] = np.exp(x[eta_idx])
        return z

    def objective(x, penalty=True):
        z = to_z(x)
        try:
            r = ev.grad(z)
        except (ArithmeticError, ValueError):
            return np.inf, np.zeros_like(x)
        if not np.isfinite(r.value):
            return np.inf, np.zeros_like(x)
        value = r.value
        g = r.gradient.copy()
        g[eta_idx] *= z[eta_idx]
        for idx in blocks:
            a = shapes[idx] - 1.0
            zb = z[idx]
            tot = zb.sum()
            value += float(np.sum(a * np.log(zb / tot)))
            g[idx] += a / zb - a.sum() / tot
            if penalty:
                value -= 0.5 * math.log(tot) ** 2
                g[idx] -= math.log(tot) / tot
        return -value, -g

    for attempt in range(config.map_retries):
        z0 = sample_prior(model, config.hyper, ev.horizon, rng) if init is None or attempt else np.asarray(init, float)
        x0 = z0.copy()
        x0[eta_idx] = np.log(np.maximum(z0[eta_idx], _ZMIN))
        x0 = np.clip(x0, x_lo, x_hi)
        if np.isfinite(objective(x0)[0]):
            break
        log.warning("non-finite posterior at initialization (attempt %d); redrawing", attempt + 1)
    else:
        raise FloatingPointError("log posterior not finite at any prior draw")
    # the objective is scaled per purchase; L-BFGS-B restarts from its last
    # point while that still improves, which discards a curvature memory
    # spoiled by the first steps from a far-off prior draw
    scale = 1.0 / max(ev.total_purchases, 1)

    def scaled(x):
        f, g = objective(x)
        return f * scale, g * scale

    best = None
    for _ in range(config.map_restarts):
        res = minimize(
            scaled, x0, jac=True, method="L-BFGS-B",
            bounds=list(zip(x_lo, x_hi)),
            options={"maxiter": config.map_max_iter, "ftol": 1e-14, "gtol": 1e-10, "maxcor": 20},
        )
        improved = best is None or res.fun < best.fun - 1e-12 * max(1.0, abs(best.fun))
        if best is None or res.fun < best.fun:
            best = res
        if not improved:
            break
        x0 = res.x
    log.debug("MAP search: %s", best.message)
    params = untransform(to_z(best.x), model)
    z = transform(params, config.theta_mass, config.phi_mass)
    z[lay.eta] = np.clip(z[lay.eta], lo[lay.eta], hi[lay.eta])
    f, g = objective(best.x, penalty=False)
    free = (best.x > x_lo + 1e-9) & (best.x < x_hi - 1e-9) & ~exp
    gnorm = float(np.max(np.abs(g[free] / to_z(best.x)[free]))) if free.any() else 0.0
    return MapResult(z, float(-f), gnorm, bool(best.success), int(best.nit))


def log_posterior_prob(ev: LikelihoodEvaluator, params: ModelParams) -> float:
    """Log-likelihood plus Dirichlet log-densities (without constants) of the probability blocks.

    This is the quantity :func:`map_estimate` maximizes; with unit shapes it
    equals the log-likelihood.
    """
    z = transform(params)
    shapes = ev.hyper.shapes(ev.model)
    value = ev.log_likelihood(params)
    for idx in _blocks(ev.model):
        zb = z[idx]
        value += float(np.sum((shapes[idx] - 1.0) * np.log(zb / zb.sum())))
    return value


# -- chains ------------------------------------------------------------------


@dataclass
class ChainResult:
    samples: np.ndarray  # (draws, dim)
    iterations: np.ndarray
    map: MapResult


def _minibatch(rng: np.random.Generator, counts: Sequence[int], size: int) -> list[np.ndarray]:
    out = []
    for L in counts:
        if size >= L:
            out.append(np.arange(L))
        else:
            out.append(np.sort(rng.choice(L, size=size, replace=False)))
    return out


def run_chain(ev: LikelihoodEvaluator, config: SamplerConfig, seed, init=None) -> ChainResult:
    """A single chain: MAP start from a prior draw, then ``config.iterations`` SGRLD steps.

    Deterministic for a given ``seed``.
    """
    model = ev.model
    rng = np.random.default_rng(seed)
    start = map_estimate(ev, model, config, rng, init=init)
    lower, upper = _bounds(model, ev)
    z = start.state.copy()
    a = config.resolve_a(ev.total_purchases)
    n_burn = config.n_burn
    keep = config.iterations - n_burn
    samples = np.empty((keep, z.size))
    counts = ev.period_counts
    for w in range(config.iterations):
        batch = _minibatch(rng, counts, config.minibatch)
        g = ev.log_posterior_grad(z, batch).gradient
        eps = a * (1.0 + w / config.b) ** (-config.c)
        z = sgrld_step(z, g, eps, rng, lower=lower, upper=upper)
        if w >= n_burn:
            samples[w - n_burn] = z
    return ChainResult(samples, np.arange(n_burn, config.iterations), start)


def permute_segments(z, model: Model, order) -> np.ndarray:
    """Relabel segments of latent vectors ``z`` (last axis) so that new segment ``k`` is old ``order[k]``."""
    lay = model.layout
    order = np.asarray(order)
    src = np.arange(lay.size)
    dst = src.copy()
    dst[lay.theta] = lay.theta[:, order]
    if lay.phi is not None:
        dst[lay.phi] = lay.phi[order]
    if lay.tau is not None:
        dst[lay.tau] = lay.tau[order]
    return np.asarray(z)[..., dst]


def align_segments(z, model: Model, reference=None) -> np.ndarray:
    """Undo label switching between chains.

    ``z`` has shape ``(chains, draws, dim)``.  Each chain's segments are
    permuted to best match ``reference`` (``(K, n)`` preference vectors;
    default: the first chain's posterior mean) in squared distance of the
    mean preference and substitution parameters.  Nonparametric segments
    are tied to their rankings and are returned unchanged.
    """
    z = np.asarray(z, dtype=float)
    lay = model.layout
    if lay.phi is None or model.n_segments == 1:
        return z

    def signature(chain):
        phi = chain[:, lay.phi]
        phi = phi / phi.sum(axis=-1, keepdims=True)
        sig = phi.mean(axis=0)
        if lay.tau is not None:
            tau = chain[:, lay.tau]
            sig = np.column_stack([sig, (tau[..., 0] / tau.sum(axis=-1)).mean(axis=0)])
        return sig

    ref = signature(z[0]) if reference is None else np.asarray(reference, dtype=float)
    out = z.copy()
    for c in range(z.shape[0]):
        sig = signature(z[c])[:, : ref.shape[1]]
        cost = ((ref[:, None, :] - sig[None, :, :]) ** 2).sum(axis=-1)
        _, order = linear_sum_assignment(cost)
        out[c] = permute_segments(z[c], model, order)
    return out


def chain_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _chain_job(args):
    model, data, config, seed = args
    return run_chain(LikelihoodEvaluator(model, data, config.hyper), config, seed)


def run_chains(data: Dataset, model: Model, config: SamplerConfig) -> "PosteriorSamples":
    """Run ``config.chains`` independent chains and compute R-hat per scalar parameter."""
    seeds = chain_seeds(config.seed, config.chains)
    if config.n_jobs > 1:
        with ProcessPoolExecutor(config.n_jobs) as pool:
            chains = list(pool.map(_chain_job, [(model, data, config, s) for s in seeds]))
    else:
        ev = LikelihoodEvaluator(model, data, config.hyper)
        chains = [run_chain(ev, config, s) for s in seeds]
    z = align_segments(np.stack([c.samples for c in chains]), model)
    post = PosteriorSamples.from_latent(model, z, chains[0].iterations)
    post.meta.update(seed=config.seed, chain_seeds=seeds, horizon=data.horizon,
                     map_log_posterior=[c.map.log_posterior for c in chains])
    return post


# -- posterior container -----------------------------------------------------


@dataclass
class PosteriorSamples:
    """Post-burn-in draws in probability space, arrays shaped ``(chains, draws, ...)``."""

    model: Model
    eta: np.ndarray
    theta: np.ndarray
    phi: np.ndarray | None = None
    tau: np.ndarray | None = None
    iterations: np.ndarray | None = None
    z: np.ndarray | None = None
    rhat: dict[str, float] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_latent(cls, model: Model, z: np.ndarray, iterations=None, diagnose=True) -> "PosteriorSamples":
        lay = model.layout
        norm = lambda b: b / b.sum(axis=-1, keepdims=True)  # noqa: E731
        eta = z[..., lay.eta]
        theta = norm(z[..., lay.theta])
        phi = norm(z[..., lay.phi]) if lay.phi is not None else None
        if lay.tau is not None:
            tau = norm(z[..., lay.tau])[..., 0]
        elif model.mnl_tau is not None:
            tau = np.full(z.shape[:2] + (model.n_segments,), float(model.mnl_tau))
        else:
            tau = None
        out = cls(model, eta, theta, phi, tau, iterations, z)
        if diagnose:
            out.rhat = rhat_table(out)
        return out

    @classmethod
    def point(cls, params: ModelParams) -> "PosteriorSamples":
        """A single draw, e.g. a maximum-likelihood point estimate."""
        add = lambda a: None if a is None else np.asarray(a)[None, None]  # noqa: E731
        return cls(params.model, add(params.eta), add(params.theta), add(params.phi), add(params.tau))

    @property
    def n_chains(self) -> int:
        return self.eta.shape[0]

    @property
    def n_draws(self) -> int:
        return self.eta.shape[1]

    @property
    def converged(self) -> bool:
        vals = [v for v in self.rhat.values() if np.isfinite(v)]
        return bool(vals) and max(vals) <= RHAT_THRESHOLD

    def draws(self) -> Iterator[ModelParams]:
        """Merged draws from all chains as parameter objects."""
        for c, d in itertools.product(range(self.n_chains), range(self.n_draws)):
            yield ModelParams(
                self.model, self.eta[c, d], self.theta[c, d],
                None if self.phi is None else self.phi[c, d],
                None if self.tau is None else self.tau[c, d],
            )

    def columns(self) -> tuple[list[str], np.ndarray]:
        """Scalar parameter names and values with shape ``(chains, draws, columns)``."""
        names, cols = [], []
        m = self.model
        for s in range(m.n_stores):
            for v in range(m.rate.n_params):
                names.append(f"eta[{s + 1}][{v + 1}]")
                cols.append(self.eta[:, :, s, v])
        for s in range(m.n_stores):
            for k in range(m.n_segments):
                names.append(f"theta[{s + 1}][{k + 1}]")
                cols.append(self.theta[:, :, s, k])
        if self.phi is not None:
            for k in range(m.n_segments):
                for i in range(m.n_items):
                    names.append(f"phi[{k + 1}][{i + 1}]")
                    cols.append(self.phi[:, :, k, i])
        if self.tau is not None and m.layout.tau is not None:
            for k in range(m.n_segments):
                names.append(f"tau[{k + 1}]")
                cols.append(self.tau[:, :, k])
        return names, np.stack(cols, axis=-1)

    def mean(self) -> ModelParams:
        """Posterior mean over all merged draws."""
        avg = lambda a: None if a is None else a.mean(axis=(0, 1))  # noqa: E731
        return ModelParams(self.model, avg(self.eta), avg(self.theta), avg(self.phi), avg(self.tau))

    def thin(self, max_draws: int) -> "PosteriorSamples":
        """Evenly spaced subset of at most ``max_draws`` draws per chain."""
        if self.n_draws <= max_draws:
            return self
        idx = np.linspace(0, self.n_draws - 1, max_draws).round().astype(int)
        take = lambda a: None if a is None else a[:, idx]  # noqa: E731
        return replace(self, eta=take(self.eta), theta=take(self.theta), phi=take(self.phi),
                       tau=take(self.tau), z=take(self.z),
                       iterations=None if self.iterations is None else self.iterations[idx])

    def write_csv(self, path, header: dict | None = None) -> None:
        names, vals = self.columns()
        iters = self.iterations if self.iterations is not None else np.arange(self.n_draws)
        with open(path, "w", newline="", encoding="utf-8") as f:
            for k, v in (header or {}).items():
                f.write(f"# {k}={v}\n")
            w = csv.writer(f)
            w.writerow(["chain", "iteration"] + names)
            for c in range(self.n_chains):
                for d in range(self.n_draws):
                    w.writerow([c + 1, int(iters[d])] + [repr(float(x)) for x in vals[c, d]])

    @classmethod
    def read_csv(cls, path, model: Model) -> "PosteriorSamples":
        with open(path, encoding="utf-8") as f:
            rows = [r for r in csv.reader(line for line in f if not line.startswith("#"))]
        header, body = rows[0], np.array(rows[1:], dtype=float)
        chains = body[:, 0].astype(int)
        C = int(chains.max())
        D = int(np.sum(chains == 1))
        col = {name: j for j, name in enumerate(header)}
        grab = lambda name: body[:, col[name]].reshape(C, D)  # noqa: E731
        m = model
        eta = np.stack([np.stack([grab(f"eta[{s + 1}][{v + 1}]") for v in range(m.rate.n_params)], -1)
                        for s in range(m.n_stores)], axis=2)
        theta = np.stack([np.stack([grab(f"theta[{s + 1}][{k + 1}]") for k in range(m.n_segments)], -1)
                          for s in range(m.n_stores)], axis=2)
        phi = tau = None
        if m.layout.phi is not None:
            phi = np.stack([np.stack([grab(f"phi[{k + 1}][{i + 1}]") for i in range(m.n_items)], -1)
                            for k in range(m.n_segments)], axis=2)
        if m.layout.tau is not None:
            tau = np.stack([grab(f"tau[{k + 1}]") for k in range(m.n_segments)], axis=-1)
        elif m.mnl_tau is not None:
            tau = np.full((C, D, m.n_segments), float(m.mnl_tau))
        out = cls(m, eta, theta, phi, tau, body[:D, 1].astype(int))
        out.rhat = rhat_table(out)
        return out


# -- diagnostics -------------------------------------------------------------


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor of one scalar from ``(n_chains, n_draws)`` draws."""
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need at least two chains of at least two draws each")
    n = x.shape[1]
    W = float(np.mean(np.var(x, axis=1, ddof=1)))
    if W == 0.0:
        raise DegenerateVarianceError("within-chain variance is zero")
    B = n * float(np.var(np.mean(x, axis=1), ddof=1))
    return math.sqrt(((n - 1) / n * W + B / n) / W)


def rhat_table(samples: PosteriorSamples) -> dict[str, float]:
    if samples.n_chains < 2 or samples.n_draws < 2:
        return {}
    names, vals = samples.columns()
    out = {}
    for j, name in enumerate(names):
        try:
            out[name] = gelman_rubin(vals[:, :, j])
        except DegenerateVarianceError:
            out[name] = float("nan")
    return out


def holdout_perplexity(samples: PosteriorSamples, holdout: Dataset, max_draws: int | None = None) -> float:
    """``exp(-mean log-likelihood / number of held-out purchases)`` over posterior draws."""
    ev = LikelihoodEvaluator(samples.model, holdout)
    m = ev.total_purchases
    if m == 0:
        raise ValueError("holdout contains no purchases")
    if max_draws is not None:
        samples = samples.thin(max_draws)
    lls = [ev.log_likelihood(p) for p in samples.draws()]
    return float(np.exp(-np.mean(lls) / m))


def tune_schedule(train: Dataset, holdout: Dataset, model: Model, config: SamplerConfig,
                  grid: dict | None = None, max_draws: int = 200):
    """Pick the step schedule ``(a, b, c)`` from a grid by held-out perplexity.

    Grid keys are ``"a"`` (absolute scale) or ``"a_rel"`` (scale per
    training purchase), ``"b"`` and ``"c"``.  Returns the best config and
    rows ``(scale, b, c, perplexity)``.
    """
    grid = grid or DEFAULT_GRID
    key = "a" if "a" in grid else "a_rel"
    table = []
    for scale, b, c in itertools.product(grid[key], grid["b"], grid["c"]):
        cfg = replace(config, a=scale if key == "a" else None,
                      a_rel=scale if key == "a_rel" else config.a_rel, b=b, c=c)
        try:
            post = run_chains(train, model, cfg)
            perp = holdout_perplexity(post, holdout, max_draws)
        except (ValueError, FloatingPointError):
            perp = float("inf")
        if not np.isfinite(perp):
            perp = float("inf")
        table.append((scale, b, c, perp))
        log.info("%s=%g b=%g c=%g perplexity=%.6g", key, scale, b, c, perp)
    best = min(table, key=lambda r: r[3])
    cfg = replace(config, a=best[0] if key == "a" else None,
                  a_rel=best[0] if key == "a_rel" else config.a_rel, b=best[1], c=best[2])
    return cfg, table
