"""Reading and writing transaction and stock CSV files.

Transactions have one row per purchase with columns ``store_id``,
``period_id``, ``item_id`` and ``purchase_time``; the optional stock file
has ``store_id``, ``period_id``, ``item_id`` and ``initial_stock``.  Times
are fractional hours since the period opened, or wall-clock ``HH:MM[:SS]``
when opening hours are configured.  Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import Dataset, DataError, StoreData, TimePeriod

log = logging.getLogger(__name__)

__all__ = [
    "DATA_DIR_ENV",
    "TimeFormat",
    "derive_stock_from_last_purchase",
    "parse_transactions",
    "read_stock",
    "resolve_data_path",
    "write_stock",
    "write_transactions",
]

DATA_DIR_ENV = "STOCKOUT_DATA_DIR"
TRANSACTION_COLUMNS = ("store_id", "period_id", "item_id", "purchase_time")
STOCK_COLUMNS = ("store_id", "period_id", "item_id", "initial_stock")


def resolve_data_path(path) -> Path:
    """``path`` itself if it exists, else relative to ``$STOCKOUT_DATA_DIR`` when set."""
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    base = os.environ.get(DATA_DIR_ENV)
    return Path(base) / p if base else p


@dataclass(frozen=True)
class TimeFormat:
    """How purchase times are written.

    With ``opening`` unset, times are hours since opening.  Otherwise they
    are clock times and ``opening``/``closing`` (``"HH:MM"``) give business
    hours; the horizon is their difference in hours.
    """

    opening: str | None = None
    closing: str | None = None

    @property
    def clock(self) -> bool:
        return self.opening is not None

    def horizon(self) -> float | None:
        if not self.clock:
            return None
        if self.closing is None:
            raise DataError("closing time required with clock-time purchases")
        T = _clock_hours(self.closing) - _clock_hours(self.opening)
        if T <= 0:
            raise DataError("closing time must follow opening time")
        return T

    def to_period_time(self, text: str) -> float:
        if not self.clock:
            return float(text)
        return _clock_hours(text) - _clock_hours(self.opening)


def _clock_hours(text: str) -> float:
    parts = text.strip().split(":")
    if not 2 <= len(parts) <= 3:
        raise ValueError(f"bad clock time {text!r}")
    h, m = int(parts[0]), int(parts[1])
    s = float(parts[2]) if len(parts) == 3 else 0.0
    if not (0 <= h < 24 and 0 <= m < 60 and 0 <= s < 60):
        raise ValueError(f"bad clock time {text!r}")
    return h + m / 60.0 + s / 3600.0


def _rows(path, required: Sequence[str], mapping: Mapping[str, str] | None):
    """Yield ``(line number, {canonical column: text})`` for each data row."""
    mapping = dict(mapping or {})
    with open(path, encoding="utf-8", newline="") as f:
        lines = [(k, line) for k, line in enumerate(f, start=1) if line.strip() and not line.startswith("#")]
    if not lines:
        raise DataError(f"{path}: missing header")
    header_line, header = lines[0]
    names = next(csv.reader([header]))
    names = [c.strip() for c in names]
    index = {}
    for col in required:
        actual = mapping.get(col, col)
        if actual not in names:
            raise DataError(f"{path}:{header_line}: missing column {actual!r}")
        index[col] = names.index(actual)
    for k, line in lines[1:]:
        fields = next(csv.reader([line]))
        if len(fields) != len(names):
            raise DataError(f"{path}:{k}: expected {len(names)} fields, found {len(fields)}")
        yield k, {col: fields[j].strip() for col, j in index.items()}


def read_stock(path, mapping: Mapping[str, str] | None = None) -> dict[tuple[str, str, str], int]:
    """``{(store, period, item): initial stock}`` from a stock file."""
    out: dict[tuple[str, str, str], int] = {}
    for k, row in _rows(path, STOCK_COLUMNS, mapping):
        key = (row["store_id"], row["period_id"], row["item_id"])
        try:
            value = int(row["initial_stock"])
        except ValueError:
            raise DataError(f"{path}:{k}: initial stock {row['initial_stock']!r} is not an integer") from None
        if value < 0:
            raise DataError(f"{path}:{k}: negative initial stock")
        if key in out:
            raise DataError(f"{path}:{k}: duplicate stock entry for {key}")
        out[key] = value
    return out


def parse_transactions(path, horizon: float | None = None, catalog: Sequence[str] | None = None,
                       stock: Mapping[tuple[str, str, str], int] | str | os.PathLike | None = None,
                       mapping: Mapping[str, str] | None = None,
                       time_format: TimeFormat = TimeFormat(), ties: str = "spread") -> Dataset:
    """Build a dataset from a transactions file and optional initial stocks.

    Parameters
    ----------
    path : transactions CSV
    horizon : period length in hours; implied by business hours for clock times
    catalog : item ids in model order; default: ids in order of first appearance
        in the stock file, then the transactions
    stock : stock file path or mapping from :func:`read_stock`.  When absent
        every item's stock is set to its purchase count (see
        :func:`derive_stock_from_last_purchase`).
    mapping : canonical column name -> column name in the file
    time_format : hours since opening (default) or clock times
    ties : ``"spread"`` separates equal purchase times of one item by
        :data:`TIE_GAP` hours (with a warning); ``"error"`` rejects them

    Stores and periods keep their order of first appearance.
    """
    T = time_format.horizon() if time_format.clock else horizon
    if T is None:
        raise DataError("horizon must be given for hour-offset purchase times")
    if stock is not None and not isinstance(stock, Mapping):
        stock = read_stock(stock, mapping)
    keys: dict[str, dict[str, None]] = {}
    items: dict[str, None] = {}
    for s, l, i in (stock or {}):
        keys.setdefault(s, {}).setdefault(l, None)
        items.setdefault(i, None)
    times: dict[tuple[str, str, str], list[float]] = {}
    for k, row in _rows(path, TRANSACTION_COLUMNS, mapping):
        try:
            t = time_format.to_period_time(row["purchase_time"])
        except ValueError:
            raise DataError(f"{path}:{k}: malformed purchase time {row['purchase_time']!r}") from None
        if not 0 <= t <= T or not np.isfinite(t):
            raise DataError(f"{path}:{k}: purchase time {row['purchase_time']} outside business hours")
        item = row["item_id"]
        if catalog is not None and item not in catalog:
            raise DataError(f"{path}:{k}: unknown item {item!r}")
        keys.setdefault(row["store_id"], {}).setdefault(row["period_id"], None)
        items.setdefault(item, None)
        times.setdefault((row["store_id"], row["period_id"], item), []).append(t)
    names = tuple(catalog) if catalog is not None else tuple(items)
    unknown = set(items) - set(names)
    if unknown:
        raise DataError(f"stock file refers to unknown items {sorted(unknown)}")
    if ties not in ("spread", "error"):
        raise ValueError("ties must be 'spread' or 'error'")
    n_ties = 0
    stores = []
    for s, periods in keys.items():
        built = []
        for l in periods:
            per_item = []
            counts = []
            for i in names:
                t = np.sort(np.asarray(times.get((s, l, i), []), dtype=float))
                if t.size > 1 and np.any(np.diff(t) == 0):
                    if ties == "error":
                        raise DataError(f"store {s} period {l}: tied purchase times for item {i}")
                    t = _spread_ties(t)
                    n_ties += 1
                per_item.append(t)
                counts.append(t.size)
            if stock is None:
                N = counts
            else:
                missing = [i for i in names if (s, l, i) not in stock]
                if missing:
                    raise DataError(f"store {s} period {l}: no initial stock for items {missing}")
                N = [stock[(s, l, i)] for i in names]
            try:
                built.append(TimePeriod(tuple(per_item), np.asarray(N)))
                built[-1].validate(T)
            except DataError as e:
                raise DataError(f"store {s} period {l}: {e}") from None
        stores.append(StoreData(s, tuple(built), tuple(periods)))
    if n_ties:
        log.warning("separated tied purchase times in %d item sequences", n_ties)
    if stock is None and stores:
        log.warning("no stock file: initial stock set to purchase counts, so every item is treated "
                    "as sold out after its last purchase and late-period demand is censored")
    return Dataset(tuple(stores), float(T), len(names), tuple(names))


TIE_GAP = 1e-9


def _spread_ties(t: np.ndarray) -> np.ndarray:
    """Shift repeated times forward by multiples of :data:`TIE_GAP` so the sequence increases."""
    out = t.copy()
    for j in range(1, out.size):
        if out[j] <= out[j - 1]:
            out[j] = out[j - 1] + TIE_GAP
    return out


def derive_stock_from_last_purchase(data: Dataset) -> Dataset:
    """Copy of ``data`` with every initial stock equal to the purchase count."""
    stores = [
        StoreData(s.store_id, tuple(TimePeriod(p.purchase_times, p.counts) for p in s.periods), s.period_ids)
        for s in data.stores
    ]
    return Dataset(tuple(stores), data.horizon, data.n_items, data.item_names)


def _header(f, header: Mapping | None) -> None:
    for k, v in (header or {}).items():
        f.write(f"# {k}={v}\n")


def write_transactions(data: Dataset, path, header: Mapping | None = None) -> None:
    """One row per purchase, sorted by store, period and time; times in hours since opening."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        _header(f, header)
        w = csv.writer(f)
        w.writerow(TRANSACTION_COLUMNS)
        for store in data.stores:
            for pid, period in zip(store.period_ids, store.periods):
                rows = [(t, name) for name, ts in zip(data.item_names, period.purchase_times) for t in ts]
                for t, name in sorted(rows):
                    w.writerow([store.store_id, pid, name, repr(float(t))])


def write_stock(data: Dataset, path, header: Mapping | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        _header(f, header)
        w = csv.writer(f)
        w.writerow(STOCK_COLUMNS)
        for store in data.stores:
            for pid, period in zip(store.period_ids, store.periods):
                for name, N in zip(data.item_names, period.initial_stock):
                    w.writerow([store.store_id, pid, name, int(N)])


def read_table(path) -> list[dict[str, str]]:
    """Rows of a comment-tolerant CSV file as dictionaries."""
    with open(path, encoding="utf-8", newline="") as f:
        text = "".join(line for line in f if not line.startswith("#"))
    return list(csv.DictReader(io.StringIO(text)))


def write_table(path, rows: Iterable[Mapping], header: Mapping | None = None) -> None:
    rows = list(rows)
    with open(path, "w", newline="", encoding="utf-8") as f:
        _header(f, header)
        if not rows:
            return
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
