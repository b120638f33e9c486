"""Observed purchase rates, their exact mean functions and the log-likelihood.

The purchases of each item in a period behave, for likelihood purposes, like
an NHPP with rate ``lambda(t) * pi_i(s(t))``.  Since the stock ``s(t)`` is
constant between stockouts, the mean function is a finite sum over those
intervals of ``pi_i(s) * Lambda(q_r, q_{r+1})``.

Latent vector layout
--------------------
Gradients refer to the flat latent vector ``z`` laid out as::

    [eta^1, ..., eta^S,                    rate parameters per store
     theta~^1, ..., theta~^S,              unnormalized segment weights per store
     phi~^1, tau~^1, ..., phi~^K, tau~^K]  unnormalized choice parameters per segment

``phi~`` blocks are present for MNL and exogenous choice, ``tau~`` pairs only
for exogenous choice (the MNL no-purchase weight is fixed).  Probability
vectors are recovered by normalizing each block; ``tau = tau~_1 / (tau~_1 + tau~_2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .choice_model import ChoiceKind, Ranking, SegmentMixture, SegmentParams, choice_table
from .domain import Dataset, StockTrajectory, build_stock_trajectory, stock_at
from .rate_model import RateFamily, RateKind, default_eta_bounds


@dataclass(frozen=True)
class Model:
    """Structure of a model: dimensions and families, no parameter values."""

    n_stores: int
    n_items: int
    rate: RateFamily
    choice: ChoiceKind
    n_segments: int = 1
    rankings: tuple[Ranking, ...] | None = None
    mnl_tau: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "choice", ChoiceKind(self.choice))
        if self.choice is ChoiceKind.NONPARAMETRIC:
            if not self.rankings:
                raise ValueError("nonparametric choice needs rankings")
            rankings = tuple(tuple(int(i) for i in r) for r in self.rankings)
            object.__setattr__(self, "rankings", rankings)
            object.__setattr__(self, "n_segments", len(rankings))
        if self.choice is ChoiceKind.MNL:
            if self.mnl_tau is None or self.mnl_tau < 0:
                raise ValueError("MNL choice needs a fixed nonnegative no-purchase weight")
        if self.choice is ChoiceKind.EXOGENOUS and self.n_items < 2:
            raise ValueError("exogenous choice needs at least two items")
        if self.n_segments < 1 or self.n_stores < 1 or self.n_items < 1:
            raise ValueError("model dimensions must be positive")

    @property
    def layout(self) -> "ParamLayout":
        return ParamLayout.for_model(self)


@dataclass(frozen=True)
class ParamLayout:
    eta: np.ndarray  # (S, p) indices into z
    theta: np.ndarray  # (S, K)
    phi: np.ndarray | None  # (K, n)
    tau: np.ndarray | None  # (K, 2)
    size: int

    @classmethod
    def for_model(cls, model: Model) -> "ParamLayout":
        S, K, n, p = model.n_stores, model.n_segments, model.n_items, model.rate.n_params
        pos = 0
        eta = np.arange(pos, pos + S * p).reshape(S, p)
        pos += S * p
        theta = np.arange(pos, pos + S * K).reshape(S, K)
        pos += S * K
        phi = tau = None
        if model.choice is not ChoiceKind.NONPARAMETRIC:
            width = n + (2 if model.choice is ChoiceKind.EXOGENOUS else 0)
            block = np.arange(pos, pos + K * width).reshape(K, width)
            pos += K * width
            phi = block[:, :n]
            if model.choice is ChoiceKind.EXOGENOUS:
                tau = block[:, n:]
        return cls(eta, theta, phi, tau, pos)

    @property
    def expanded(self) -> np.ndarray:
        """Mask of the expanded-mean (strictly positive, unnormalized) coordinates."""
        mask = np.ones(self.size, dtype=bool)
        mask[self.eta.ravel()] = False
        return mask

    def names(self) -> list[str]:
        out = [""] * self.size
        for s, row in enumerate(self.eta, start=1):
            for v, j in enumerate(row, start=1):
                out[j] = f"eta[{s}][{v}]"
        for s, row in enumerate(self.theta, start=1):
            for k, j in enumerate(row, start=1):
                out[j] = f"theta~[{s}][{k}]"
        if self.phi is not None:
            for k, row in enumerate(self.phi, start=1):
                for i, j in enumerate(row, start=1):
                    out[j] = f"phi~[{k}][{i}]"
        if self.tau is not None:
            for k, row in enumerate(self.tau, start=1):
                out[row[0]] = f"tau~[{k}][1]"
                out[row[1]] = f"tau~[{k}][2]"
        return out


@dataclass(frozen=True)
class ModelParams:
    """Parameter values in probability space."""

    model: Model
    eta: np.ndarray  # (S, p)
    theta: np.ndarray  # (S, K)
    phi: np.ndarray | None = None  # (K, n)
    tau: np.ndarray | None = None  # (K,)

    def __post_init__(self):
        m = self.model
        eta = np.array(self.eta, dtype=float).reshape(m.n_stores, m.rate.n_params)
        for row in eta:
            m.rate.validate(row)
        theta = np.array(self.theta, dtype=float).reshape(m.n_stores, m.n_segments)
        _check_simplex(theta, "theta")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "theta", theta)
        if m.choice is ChoiceKind.NONPARAMETRIC:
            object.__setattr__(self, "phi", None)
            object.__setattr__(self, "tau", None)
            return
        phi = np.array(self.phi, dtype=float).reshape(m.n_segments, m.n_items)
        _check_simplex(phi, "phi")
        object.__setattr__(self, "phi", phi)
        if m.choice is ChoiceKind.MNL:
            tau = np.full(m.n_segments, float(m.mnl_tau))
        else:
            tau = np.array(self.tau, dtype=float).reshape(m.n_segments)
            if np.any((tau < 0) | (tau > 1)):
                raise ValueError("substitution probabilities must lie in [0, 1]")
        object.__setattr__(self, "tau", tau)

    def mixture(self, store: int) -> SegmentMixture:
        m = self.model
        if m.choice is ChoiceKind.NONPARAMETRIC:
            segs = tuple(SegmentParams(r) for r in m.rankings)
        else:
            segs = tuple(SegmentParams(self.phi[k], float(self.tau[k])) for k in range(m.n_segments))
        return SegmentMixture(m.choice, self.theta[store], segs)

    def choice_table(self, patterns, grad=False):
        m = self.model
        return choice_table(m.choice, patterns, self.phi, self.tau, m.rankings, grad=grad)


def _check_simplex(a: np.ndarray, name: str) -> None:
    if np.any(a < 0) or not np.allclose(a.sum(axis=-1), 1.0, atol=1e-9):
        raise ValueError(f"{name} rows must be probability vectors")


# -- expanded-mean transform ----------------------------------------------------


def transform(params: ModelParams, theta_mass: float | None = None,
              phi_mass: float | None = None, tau_mass: float = 2.0) -> np.ndarray:
    """Map probability-space parameters to a latent vector ``z``.

    Each probability block is scaled to the given total mass; defaults are
    ``K`` for segment weights, ``n`` for preferences and 2 for the
    substitution pair.  Zero probabilities are lifted to a tiny positive
    value so that every expanded coordinate is strictly positive.
    """
    m = params.model
    lay = m.layout
    z = np.empty(lay.size)
    z[lay.eta] = params.eta
    z[lay.theta] = params.theta * (m.n_segments if theta_mass is None else theta_mass)
    if lay.phi is not None:
        z[lay.phi] = params.phi * (m.n_items if phi_mass is None else phi_mass)
    if lay.tau is not None:
        z[lay.tau] = np.stack([params.tau, 1.0 - params.tau], axis=1) * tau_mass
    exp = lay.expanded
    z[exp] = np.maximum(z[exp], _TINY)
    return z


_TINY = 1e-300


def untransform(z, model: Model) -> ModelParams:
    """Normalize every expanded-mean block of ``z`` back to probability space."""
    z = np.asarray(z, dtype=float)
    lay = model.layout
    if np.any(z[lay.expanded] <= 0):
        raise ValueError("expanded-mean coordinates must be strictly positive")
    theta = _normalize(z[lay.theta])
    phi = tau = None
    if lay.phi is not None:
        phi = _normalize(z[lay.phi])
    if lay.tau is not None:
        tau = _normalize(z[lay.tau])[:, 0]
    return ModelParams(model, z[lay.eta], theta, phi, tau)


def _normalize(block: np.ndarray) -> np.ndarray:
    return block / block.sum(axis=-1, keepdims=True)


# -- priors -------------------------------------------------------------------


@dataclass(frozen=True)
class Hyperparameters:
    """Gamma shapes of the expanded-mean priors and uniform boxes for the rate.

    ``alpha``, ``beta`` and ``gamma`` are scalars or vectors of Gamma(., 1)
    shapes for segment weights, preferences and the substitution pair;
    scalars broadcast.  ``eta_bounds`` has shape ``(p, 2)``; ``None`` means a
    wide default box derived from the horizon.
    """

    alpha: float | Sequence[float] = 1.0
    beta: float | Sequence[float] = 1.0
    gamma: float | Sequence[float] = 1.0
    eta_bounds: np.ndarray | None = None

    def bounds(self, model: Model, horizon: float) -> np.ndarray:
        if self.eta_bounds is not None:
            b = np.asarray(self.eta_bounds, dtype=float)
            if b.shape != (model.rate.n_params, 2):
                raise ValueError("eta_bounds must have shape (p, 2)")
            return b
        return default_eta_bounds(model.rate.kind, horizon)

    def shapes(self, model: Model) -> np.ndarray:
        """Gamma shape of every coordinate of ``z`` (NaN on rate coordinates)."""
        lay = model.layout
        a = np.full(lay.size, np.nan)
        a[lay.theta] = np.broadcast_to(np.asarray(self.alpha, dtype=float), lay.theta.shape)
        if lay.phi is not None:
            a[lay.phi] = np.broadcast_to(np.asarray(self.beta, dtype=float), lay.phi.shape)
        if lay.tau is not None:
            a[lay.tau] = np.broadcast_to(np.asarray(self.gamma, dtype=float), lay.tau.shape)
        return a


def log_prior_and_grad(z, model: Model, hyper: Hyperparameters | None = None,
                       horizon: float = 1.0) -> tuple[float, np.ndarray]:
    """Gamma(shape, 1) log-densities on expanded coordinates plus the rate box.

    Returns ``(-inf, grad)`` when a rate parameter leaves its box; ``grad``
    is then the gradient of the Gamma part only.
    """
    hyper = hyper or Hyperparameters()
    z = np.asarray(z, dtype=float)
    lay = model.layout
    exp = lay.expanded
    shape = hyper.shapes(model)[exp]
    ze = z[exp]
    grad = np.zeros_like(z)
    with np.errstate(divide="ignore"):
        grad[exp] = (shape - 1.0) / ze - 1.0
        value = float(np.sum((shape - 1.0) * np.log(ze) - ze - gammaln(shape)))
    b = hyper.bounds(model, horizon)
    eta = z[lay.eta]
    if np.any(eta < b[:, 0]) or np.any(eta > b[:, 1]) or np.any(ze <= 0):
        value = -np.inf
    else:
        value -= model.n_stores * float(np.sum(np.log(b[:, 1] - b[:, 0])))
    return value, grad


# -- compiled data ------------------------------------------------------------


@dataclass
class _StoreArrays:
    counts: np.ndarray  # (L, P, n) purchases by pattern (left-limit stock) and item
    q_lo: np.ndarray  # (L, R) interval starts, padded with empty intervals
    q_hi: np.ndarray  # (L, R)
    pattern: np.ndarray  # (L, R) pattern index of each interval
    times: list[np.ndarray]  # purchase times of each period, all items
    all_times: np.ndarray = field(init=False)

    def __post_init__(self):
        self.all_times = np.concatenate(self.times) if self.times else np.empty(0)

    @property
    def n_periods(self) -> int:
        return self.counts.shape[0]


@dataclass(frozen=True)
class LogLikResult:
    """Log-likelihood and its gradient with respect to the latent vector ``z``."""

    value: float
    gradient: np.ndarray


class PatternTable:
    """Registry of the distinct stock vectors seen in a dataset."""

    def __init__(self, n: int):
        self.n = n
        self._index: dict[bytes, int] = {}
        self._rows: list[np.ndarray] = []

    def __call__(self, s: np.ndarray) -> int:
        key = np.asarray(s, dtype=np.int8).tobytes()
        j = self._index.get(key)
        if j is None:
            j = self._index[key] = len(self._rows)
            self._rows.append(np.asarray(s, dtype=np.int8))
        return j

    @property
    def array(self) -> np.ndarray:
        return np.array(self._rows, dtype=float).reshape(-1, self.n)


class LikelihoodEvaluator:
    """Precomputes per-period sufficient statistics for fast likelihood evaluation.

    Parameters
    ----------
    model : Model
    data : Dataset
    hyper : Hyperparameters, optional
        Needed only for log-posterior evaluations.
    """

    def __init__(self, model: Model, data: Dataset, hyper: Hyperparameters | None = None):
        if data.n_stores != model.n_stores or data.n_items != model.n_items:
            raise ValueError(
                f"dataset has {data.n_stores} stores and {data.n_items} items; model expects "
                f"{model.n_stores} and {model.n_items}"
            )
        self.model = model
        self.data = data
        self.hyper = hyper or Hyperparameters()
        self.layout = model.layout
        self.horizon = data.horizon
        n = model.n_items
        table = PatternTable(n)
        raw = []
        for store in data.stores:
            rows = []
            for period in store.periods:
                traj = build_stock_trajectory(period, n, data.horizon)
                q = traj.changepoints
                ipat = [table(s) for s in traj.stock]
                purchases = []
                for i, t in enumerate(period.purchase_times):
                    for s_row in traj.stock_before(t):
                        purchases.append((table(s_row), i))
                times = np.concatenate(period.purchase_times) if n else np.empty(0)
                rows.append((q, ipat, purchases, times))
            raw.append(rows)
        self.patterns = table.array
        P = len(self.patterns)
        R = n + 1
        self.stores: list[_StoreArrays] = []
        for rows in raw:
            L = len(rows)
            counts = np.zeros((L, P, n))
            q_lo = np.zeros((L, R))
            q_hi = np.zeros((L, R))
            pat = np.zeros((L, R), dtype=np.int64)
            for l, (q, ipat, purchases, _) in enumerate(rows):
                r = len(ipat)
                q_lo[l, :r], q_hi[l, :r], pat[l, :r] = q[:-1], q[1:], ipat
                for p, i in purchases:
                    counts[l, p, i] += 1
            self.stores.append(_StoreArrays(counts, q_lo, q_hi, pat, [r[3] for r in rows]))
        self.total_purchases = int(sum(s.counts.sum() for s in self.stores))
        self._eta_bounds = self.hyper.bounds(model, data.horizon)

    @property
    def period_counts(self) -> list[int]:
        return [s.n_periods for s in self.stores]

    @property
    def eta_bounds(self) -> np.ndarray:
        return self._eta_bounds

    # -- evaluation -------------------------------------------------------

    def log_likelihood(self, params: ModelParams) -> float:
        return self._evaluate(params, None, grad=False)[0]

    def log_likelihood_z(self, z) -> float:
        return self.log_likelihood(untransform(z, self.model))

    def grad(self, z, periods: Sequence[Sequence[int]] | None = None) -> LogLikResult:
        """Log-likelihood and gradient in ``z``; minibatched when ``periods`` is given.

        With a subset of periods per store, each store's contribution is
        scaled by ``L / |subset|``, an unbiased estimate of the full value.
        """
        z = np.asarray(z, dtype=float)
        params = untransform(z, self.model)
        value, g_eta, g_theta, g_phi, g_tau = self._evaluate(params, periods, grad=True)
        return LogLikResult(value, self._chain_rule(z, params, g_eta, g_theta, g_phi, g_tau))

    def log_posterior_grad(self, z, periods=None) -> LogLikResult:
        ll = self.grad(z, periods)
        lp, gp = log_prior_and_grad(z, self.model, self.hyper, self.horizon)
        if np.isfinite(lp):
            lp_value = lp
        else:
            lp_value = -np.inf
        return LogLikResult(ll.value + lp_value, ll.gradient + gp)

    def _chain_rule(self, z, params, g_eta, g_theta, g_phi, g_tau) -> np.ndarray:
        lay = self.layout
        out = np.zeros(lay.size)
        out[lay.eta] = g_eta
        zt = z[lay.theta]
        out[lay.theta] = (g_theta - np.sum(g_theta * params.theta, axis=1, keepdims=True)) / zt.sum(
            axis=1, keepdims=True
        )
        if lay.phi is not None:
            zp = z[lay.phi]
            out[lay.phi] = (g_phi - np.sum(g_phi * params.phi, axis=1, keepdims=True)) / zp.sum(
                axis=1, keepdims=True
            )
        if lay.tau is not None:
            ztau = z[lay.tau]
            tot = ztau.sum(axis=1)
            out[lay.tau[:, 0]] = g_tau * (1.0 - params.tau) / tot
            out[lay.tau[:, 1]] = -g_tau * params.tau / tot
        out[~np.isfinite(out)] = 0.0
        return out

    def _evaluate(self, params: ModelParams, periods, grad: bool):
        model = self.model
        if params.model != model:
            raise ValueError("parameters belong to a different model")
        rate = model.rate
        K = model.n_segments
        tab = params.choice_table(self.patterns, grad=grad)
        F, dF_phi, dF_tau = tab if grad else (tab, None, None)
        Fi = F[:, :, 1:]  # (K, P, n)
        total = 0.0
        S = model.n_stores
        p = rate.n_params
        g_eta = np.zeros((S, p))
        g_theta = np.zeros((S, K))
        H = np.zeros_like(Fi)
        for s, arrs in enumerate(self.stores):
            L = arrs.n_periods
            if periods is None:
                sel, weight = None, 1.0
            else:
                sel = np.asarray(periods[s], dtype=np.int64)
                if sel.size == 0:
                    if L > 0:
                        raise ValueError(f"empty period subset for store {s + 1}")
                    continue
                weight = L / sel.size
            if L == 0:
                continue
            if sel is None:
                C = arrs.counts.sum(axis=0)
                ql, qh, pt = arrs.q_lo.ravel(), arrs.q_hi.ravel(), arrs.pattern.ravel()
                times = arrs.all_times
            else:
                C = arrs.counts[sel].sum(axis=0)
                ql, qh, pt = arrs.q_lo[sel].ravel(), arrs.q_hi[sel].ravel(), arrs.pattern[sel].ravel()
                times = None
            eta = params.eta[s]
            theta = params.theta[s]
            pi = np.tensordot(theta, Fi, axes=1)  # (P, n)
            P = pi.shape[0]
            m_total = C.sum()
            # rate part: sum_j log lambda(t_j)
            if rate.kind is RateKind.HOMOGENEOUS:
                with np.errstate(divide="ignore"):
                    lograte_sum = m_total * np.log(eta[0]) if m_total else 0.0
                dlog_sum = np.array([m_total / eta[0]]) if m_total else np.zeros(1)
            else:
                if times is None:
                    times = np.concatenate([arrs.times[j] for j in sel])
                lr, dlr = rate.log_rate_grad(eta, times)
                lograte_sum = float(lr.sum())
                dlog_sum = dlr.sum(axis=0)
            # mean-function part: sum_r (1 - pi_0(s_r)) Lambda(q_r, q_{r+1})
            if grad:
                c_hi, d_hi = rate.cumulative_grad(eta, qh)
                c_lo, d_lo = rate.cumulative_grad(eta, ql)
                dA = np.zeros((P, p))
                for v in range(p):
                    dA[:, v] = np.bincount(pt, weights=d_hi[:, v] - d_lo[:, v], minlength=P)
            else:
                c_hi = rate.cumulative(eta, qh)
                c_lo = rate.cumulative(eta, ql)
            A = np.bincount(pt, weights=c_hi - c_lo, minlength=P)
            buy = pi.sum(axis=1)
            observed = C > 0
            if np.any(observed & (pi <= 0)):
                ll = -np.inf
            else:
                with np.errstate(divide="ignore"):
                    ll = lograte_sum + float(np.sum(C[observed] * np.log(pi[observed]))) - float(A @ buy)
            total += weight * ll
            if not grad:
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                G = np.where(observed, C / pi, 0.0) - A[:, None]  # (P, n)
            g_eta[s] = weight * (dlog_sum - buy @ dA)
            g_theta[s] = weight * np.tensordot(Fi, G, axes=([1, 2], [0, 1]))
            H += weight * theta[:, None, None] * G[None]
        if not grad:
            return (total,)
        g_phi = g_tau = None
        if model.choice is not ChoiceKind.NONPARAMETRIC:
            g_phi = np.einsum("kpi,kpiu->ku", H, dF_phi[:, :, 1:, :])
            g_tau = np.einsum("kpi,kpi->k", H, dF_tau[:, :, 1:])
        return total, g_eta, g_theta, g_phi, g_tau


# -- spec-level API ----------------------------------------------------------


def observed_rate(params: ModelParams, traj: StockTrajectory, store: int, t: float) -> np.ndarray:
    """``[lambda~_0(t), lambda~_1(t), ..., lambda~_n(t)]`` with index 0 the no-purchase rate."""
    s = stock_at(traj, t)
    pi = params.mixture(store).weights @ params.choice_table(s[None, :])[:, 0, :]
    lam = params.model.rate.rate(params.eta[store], np.asarray(t, dtype=float))
    return float(lam) * pi


def mean_function(params: ModelParams, traj: StockTrajectory, store: int) -> np.ndarray:
    """``Lambda~_i(0, T)`` for ``i = 0..n`` summed over the constant-stock intervals."""
    F = params.choice_table(traj.stock.astype(float))  # (K, R, n+1)
    pi = np.tensordot(params.theta[store], F, axes=1)  # (R, n+1)
    q = traj.changepoints
    dlam = params.model.rate.integral(params.eta[store], q[:-1], q[1:])
    return dlam @ pi


def log_likelihood(params: ModelParams, data: Dataset) -> float:
    """Log-likelihood of the observed purchase times; ``-inf`` if a purchase has zero rate."""
    return LikelihoodEvaluator(params.model, data).log_likelihood(params)


def grad_log_likelihood(params: ModelParams | np.ndarray, data: Dataset,
                        periods: Sequence[Sequence[int]] | None = None,
                        model: Model | None = None) -> LogLikResult:
    """Gradient with respect to ``z``.

    ``params`` is either a latent vector (then ``model`` is required) or
    probability-space parameters, which are mapped with :func:`transform`
    using its default block masses.
    """
    if isinstance(params, ModelParams):
        model = params.model
        z = transform(params)
    else:
        if model is None:
            raise ValueError("a latent vector needs its model")
        z = np.asarray(params, dtype=float)
    return LikelihoodEvaluator(model, data).grad(z, periods)
