"""Posterior-predictive purchase counts, purchase-rate curves and lost sales.

Every posterior draw contributes a Poisson count whose mean is the
observed purchase rate integrated over the requested time with stock held
at the requested level.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import Dataset, build_stock_trajectory
from .sampler import PosteriorSamples

__all__ = [
    "PredictiveDistribution",
    "StockCondition",
    "average_purchase_rate_curve",
    "expected_counts",
    "full_stock_sales",
    "lost_sales",
    "observed_stock_conditions",
    "predict_counts",
]


@dataclass(frozen=True)
class StockCondition:
    """A stock vector held fixed over a set of time intervals.

    ``intervals`` is an ``(m, 2)`` array of ``(start, end)`` pairs.
    ``periods`` optionally labels the period of each interval; intervals of
    the same period must not overlap.
    """

    stock: np.ndarray
    intervals: np.ndarray
    periods: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.stock, dtype=np.int8).reshape(-1)
        if np.any((s != 0) & (s != 1)):
            raise ValueError("stock vector must be 0/1")
        iv = np.asarray(self.intervals, dtype=float).reshape(-1, 2)
        if np.any(iv[:, 1] < iv[:, 0]):
            raise ValueError("interval end precedes its start")
        labels = np.zeros(len(iv), dtype=np.int64) if self.periods is None else np.asarray(self.periods)
        if labels.shape != (len(iv),):
            raise ValueError("one period label per interval required")
        for lab in np.unique(labels):
            part = iv[labels == lab]
            part = part[np.argsort(part[:, 0])]
            if np.any(part[1:, 0] < part[:-1, 1]):
                raise ValueError(f"intervals overlap within period {lab}")
        object.__setattr__(self, "stock", s)
        object.__setattr__(self, "intervals", iv)
        object.__setattr__(self, "periods", None if self.periods is None else labels)

    def validate(self, horizon: float) -> None:
        if self.intervals.size and (self.intervals.min() < 0 or self.intervals.max() > horizon):
            raise ValueError(f"intervals must lie within [0, {horizon}]")

    @property
    def length(self) -> float:
        return float(np.sum(self.intervals[:, 1] - self.intervals[:, 0]))


@dataclass(frozen=True)
class PredictiveDistribution:
    """Predicted counts, one row per posterior draw and one column per item."""

    draws: np.ndarray
    item_names: tuple[str, ...] = ()

    def __post_init__(self):
        d = np.asarray(self.draws)
        if d.ndim != 2:
            raise ValueError("draws must be a (draws, items) array")
        object.__setattr__(self, "draws", d)
        if not self.item_names:
            object.__setattr__(self, "item_names", tuple(str(i) for i in range(1, d.shape[1] + 1)))

    @property
    def total(self) -> np.ndarray:
        return self.draws.sum(axis=1)

    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    def quantiles(self, q) -> np.ndarray:
        """Per-item quantiles, shape ``(len(q), items)``."""
        return np.quantile(self.draws, q, axis=0)

    def interval(self, level: float = 0.95, total: bool = False) -> tuple:
        """Central predictive interval per item, or for the total count."""
        lo, hi = (1 - level) / 2, (1 + level) / 2
        x = self.total if total else self.draws
        return np.quantile(x, lo, axis=0), np.quantile(x, hi, axis=0)

    def iqr(self) -> np.ndarray:
        q = self.quantiles([0.25, 0.75])
        return q[1] - q[0]

    def summary(self) -> list[dict]:
        """Mean, quartiles and 95% interval for each item and the total."""
        rows = []
        cols = [(name, self.draws[:, i]) for i, name in enumerate(self.item_names)]
        cols.append(("total", self.total))
        for name, x in cols:
            q = np.quantile(x, [0.025, 0.25, 0.5, 0.75, 0.975])
            rows.append({"item": name, "mean": float(x.mean()), "q2.5": q[0], "q25": q[1],
                         "median": q[2], "q75": q[3], "q97.5": q[4], "iqr": q[3] - q[1]})
        return rows

    def write_csv(self, path, header: dict | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            for k, v in (header or {}).items():
                f.write(f"# {k}={v}\n")
            w = csv.writer(f)
            w.writerow(["draw"] + list(self.item_names))
            for j, row in enumerate(self.draws):
                w.writerow([j + 1] + [int(x) for x in row])


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def expected_counts(samples: PosteriorSamples, cond: StockCondition, store: int = 0) -> np.ndarray:
    """Per-draw predictive means with the no-purchase column first, shape ``(draws, n+1)``.

    Each row sums to the arrival mean over the condition's intervals.
    """
    model = samples.model
    if len(cond.stock) != model.n_items:
        raise ValueError(f"stock vector has {len(cond.stock)} entries, expected {model.n_items}")
    out = []
    t0, t1 = cond.intervals[:, 0], cond.intervals[:, 1]
    for params in samples.draws():
        F = params.choice_table(cond.stock[None, :].astype(float))[:, 0, :]  # (K, n+1)
        pi = params.theta[store] @ F
        arrivals = float(np.sum(model.rate.integral(params.eta[store], t0, t1)))
        out.append(pi * arrivals)
    return np.array(out)


def predict_counts(samples: PosteriorSamples, cond: StockCondition, store: int = 0,
                   seed=0, item_names: Sequence[str] = ()) -> PredictiveDistribution:
    """Poisson purchase counts per item over the condition's intervals, one per posterior draw."""
    means = expected_counts(samples, cond, store)[:, 1:]
    counts = _rng(seed).poisson(means)
    return PredictiveDistribution(counts, tuple(item_names))


def average_purchase_rate_curve(samples: PosteriorSamples, data: Dataset, grid, store: int = 0) -> np.ndarray:
    """Total observed purchase rate averaged over the store's periods, shape ``(draws, len(grid))``.

    Stock at each grid time comes from each period's actual stock
    trajectory.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size and (grid.min() < 0 or grid.max() > data.horizon):
        raise ValueError(f"grid must lie within [0, {data.horizon}]")
    model = samples.model
    periods = data.stores[store].periods
    if not periods:
        raise ValueError("store has no periods")
    # fraction of periods having each stock pattern at each grid time
    stocks = np.stack([
        (grid[:, None] < build_stock_trajectory(p, model.n_items, data.horizon).stockout_times)
        for p in periods
    ]).astype(float)  # (L, G, n)
    patterns, inverse = np.unique(stocks.reshape(-1, model.n_items), axis=0, return_inverse=True)
    inverse = inverse.reshape(len(periods), grid.size)
    weight = np.zeros((len(patterns), grid.size))
    for l in range(len(periods)):
        np.add.at(weight, (inverse[l], np.arange(grid.size)), 1.0 / len(periods))
    out = []
    for params in samples.draws():
        buy = 1.0 - (params.theta[store] @ params.choice_table(patterns)[:, :, 0])  # (P,)
        lam = model.rate.rate(params.eta[store], grid)
        out.append(lam * (buy @ weight))
    return np.array(out)


def full_stock_sales(samples: PosteriorSamples, store: int = 0, n_periods: int = 1, seed=0,
                     horizon: float | None = None, item_names: Sequence[str] = ()) -> PredictiveDistribution:
    """Sales over ``n_periods`` full periods had every item always been in stock."""
    T = horizon if horizon is not None else samples.meta.get("horizon")
    if T is None:
        raise ValueError("horizon unknown: pass it explicitly")
    cond = StockCondition(np.ones(samples.model.n_items, dtype=np.int8), [[0.0, T]])
    means = n_periods * expected_counts(samples, cond, store)[:, 1:]
    return PredictiveDistribution(_rng(seed).poisson(means), tuple(item_names))


def lost_sales(samples: PosteriorSamples, data: Dataset, store: int = 0, seed=0) -> list[dict]:
    """Full-stock predictive sales against recorded sales for each item of a store."""
    periods = data.stores[store].periods
    actual = np.sum([p.counts for p in periods], axis=0)
    dist = full_stock_sales(samples, store, len(periods), seed, data.horizon, data.item_names)
    lo, hi = dist.interval(0.95)
    mean = dist.mean()
    rows = []
    for i, name in enumerate(data.item_names):
        lost = dist.draws[:, i] - actual[i]
        rows.append({
            "item": name, "actual": int(actual[i]), "full_stock_mean": float(mean[i]),
            "full_stock_q2.5": float(lo[i]), "full_stock_q97.5": float(hi[i]),
            "lost_mean": float(lost.mean()),
            "lost_q2.5": float(np.quantile(lost, 0.025)), "lost_q97.5": float(np.quantile(lost, 0.975)),
        })
    return rows


def observed_stock_conditions(data: Dataset, store: int = 0,
                              skip_empty: bool = True) -> list[tuple[StockCondition, np.ndarray]]:
    """Group a store's constant-stock intervals by stock vector.

    Returns ``(condition, observed counts)`` pairs ordered by total interval
    length, longest first.  A purchase is counted in the interval whose
    stock it was made against (the one ending at a stockout it caused).
    With ``skip_empty`` the all-out-of-stock condition, where nothing can
    be bought, is left out.
    """
    n = data.n_items
    groups: dict[bytes, list] = {}
    for l, period in enumerate(data.stores[store].periods):
        traj = build_stock_trajectory(period, n, data.horizon)
        q = traj.changepoints
        for r, s in enumerate(traj.stock):
            g = groups.setdefault(s.tobytes(), [s, [], [], np.zeros(n, dtype=np.int64)])
            g[1].append((q[r], q[r + 1]))
            g[2].append(l)
        for i, t in enumerate(period.purchase_times):
            for s in traj.stock_before(t):
                groups[s.tobytes()][3][i] += 1
    out = [(StockCondition(s, iv, per), counts) for s, iv, per, counts in groups.values()
           if s.any() or not skip_empty]
    out.sort(key=lambda c: -c[0].length)
    return out
