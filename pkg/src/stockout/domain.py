"""Stores, time periods, purchase times and the stock indicator step function.

Items are labelled 1..n in the public API; arrays indexed by item use
column ``i - 1``.  Stock is never replenished within a period.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised when transaction or stock data violate the data model."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimePeriod:
    """Observed purchases and initial stock for one store and one period.

    ``purchase_times[i - 1]`` holds the sorted purchase times of item ``i``
    and ``initial_stock[i - 1]`` its stock at the start of the period.
    """

    purchase_times: tuple[np.ndarray, ...]
    initial_stock: np.ndarray

    def __post_init__(self):
        times = tuple(_frozen(np.array(t, dtype=float).reshape(-1)) for t in self.purchase_times)
        stock = _frozen(np.array(self.initial_stock, dtype=np.int64).reshape(-1))
        if len(times) != len(stock):
            raise DataError(
                f"{len(times)} purchase sequences but {len(stock)} initial stock values"
            )
        object.__setattr__(self, "purchase_times", times)
        object.__setattr__(self, "initial_stock", stock)

    @property
    def n_items(self) -> int:
        return len(self.initial_stock)

    @property
    def counts(self) -> np.ndarray:
        """Purchase count ``m_i`` per item."""
        return np.array([len(t) for t in self.purchase_times], dtype=np.int64)

    def validate(self, horizon: float | None = None) -> None:
        if np.any(self.initial_stock < 0):
            raise DataError("initial stock must be nonnegative")
        for i, t in enumerate(self.purchase_times, start=1):
            if t.size and np.any(np.diff(t) <= 0):
                raise DataError(f"purchase times of item {i} are not strictly increasing")
            if t.size and (t[0] < 0 or (horizon is not None and t[-1] > horizon)):
                raise DataError(f"purchase time of item {i} outside [0, {horizon}]")
        over = np.nonzero(self.counts > self.initial_stock)[0]
        if over.size:
            i = over[0]
            raise DataError(
                f"item {i + 1} has {self.counts[i]} purchases but initial stock "
                f"{self.initial_stock[i]}"
            )


@dataclass(frozen=True)
class StoreData:
    """Periods of one store; ``period_ids`` default to ``"1"``, ``"2"``, ..."""

    store_id: str
    periods: tuple[TimePeriod, ...]
    period_ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "periods", tuple(self.periods))
        ids = tuple(self.period_ids) or tuple(str(l) for l in range(1, len(self.periods) + 1))
        if len(ids) != len(self.periods):
            raise DataError(f"store {self.store_id}: {len(ids)} period ids for {len(self.periods)} periods")
        object.__setattr__(self, "period_ids", ids)

    @property
    def n_periods(self) -> int:
        return len(self.periods)


@dataclass(frozen=True)
class Dataset:
    """Purchase data for a collection of stores over periods of length ``horizon``."""

    stores: tuple[StoreData, ...]
    horizon: float
    n_items: int
    item_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "stores", tuple(self.stores))
        names = tuple(self.item_names) or tuple(str(i) for i in range(1, self.n_items + 1))
        object.__setattr__(self, "item_names", names)
        if len(names) != self.n_items:
            raise DataError(f"{len(names)} item names for {self.n_items} items")
        if not self.horizon > 0:
            raise DataError("horizon must be positive")
        for store in self.stores:
            for period in store.periods:
                if period.n_items != self.n_items:
                    raise DataError(
                        f"store {store.store_id}: period has {period.n_items} items, "
                        f"expected {self.n_items}"
                    )
                period.validate(self.horizon)

    @property
    def n_stores(self) -> int:
        return len(self.stores)

    @property
    def period_counts(self) -> list[int]:
        return [s.n_periods for s in self.stores]

    @property
    def total_purchases(self) -> int:
        return int(sum(p.counts.sum() for s in self.stores for p in s.periods))

    def item_totals(self) -> np.ndarray:
        """Total purchases per item over all stores and periods."""
        out = np.zeros(self.n_items, dtype=np.int64)
        for s in self.stores:
            for p in s.periods:
                out += p.counts
        return out

    def select_periods(self, selection: Sequence[Sequence[int]]) -> "Dataset":
        """Dataset restricted to the given period indices of each store."""
        stores = [
            StoreData(s.store_id, tuple(s.periods[j] for j in sel), tuple(s.period_ids[j] for j in sel))
            for s, sel in zip(self.stores, selection)
        ]
        return Dataset(stores, self.horizon, self.n_items, self.item_names)

    def split(self, fraction: float) -> tuple["Dataset", "Dataset"]:
        """Split every store's periods into a leading and a trailing part."""
        if not 0 < fraction < 1:
            raise ValueError("split fraction must lie in (0, 1)")
        head, tail = [], []
        for s in self.stores:
            cut = int(round(fraction * s.n_periods))
            head.append(range(cut))
            tail.append(range(cut, s.n_periods))
        return self.select_periods(head), self.select_periods(tail)


@dataclass(frozen=True)
class StockTrajectory:
    """Piecewise-constant stock indicator of one period.

    Interval ``r`` is ``[changepoints[r], changepoints[r + 1])`` and carries
    ``stock[r]``.  ``stockout_times[i - 1]`` is the time item ``i`` ran out
    (``inf`` if it never did, ``-inf`` if it had no stock at all).
    """

    changepoints: np.ndarray
    stock: np.ndarray
    stockout_times: np.ndarray = field(repr=False)

    @property
    def horizon(self) -> float:
        return float(self.changepoints[-1])

    @property
    def n_intervals(self) -> int:
        return len(self.changepoints) - 1

    def stock_before(self, t) -> np.ndarray:
        """Left-limit stock ``s(t-)``: the stock a purchase at ``t`` was made against."""
        t = np.asarray(t, dtype=float)
        return (t[..., None] <= self.stockout_times).astype(np.int8)


def build_stock_trajectory(period: TimePeriod, n: int, horizon: float) -> StockTrajectory:
    """Derive the stock step function from purchases and initial stock."""
    if period.n_items != n:
        raise DataError(f"period has {period.n_items} items, expected {n}")
    period.validate(horizon)
    stockout = np.full(n, np.inf)
    for i, (t, N) in enumerate(zip(period.purchase_times, period.initial_stock)):
        if N == 0:
            stockout[i] = -np.inf
        elif len(t) == N:
            stockout[i] = t[-1]
    inner = stockout[(stockout > 0) & (stockout < horizon)]
    q = np.unique(np.concatenate([[0.0, float(horizon)], inner]))
    stock = (q[:-1, None] < stockout[None, :]).astype(np.int8)
    return StockTrajectory(_frozen(q), _frozen(stock), _frozen(stockout))


def stock_at(traj: StockTrajectory, t: float) -> np.ndarray:
    """Stock vector of the interval containing ``t`` (intervals are left-closed)."""
    if not 0 <= t <= traj.horizon:
        raise ValueError(f"time {t} outside [0, {traj.horizon}]")
    # equals the stock of the interval containing t; also covers t = T
    return (t < traj.stockout_times).astype(np.int8)
