"""Sampling transaction data from the generative model.

Customers arrive as an NHPP, each draws a segment from the store's mixture
and then an item (or nothing) from its segment's choice model evaluated at
the current stock.  Purchases decrement stock; only purchases are recorded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .choice_model import ChoiceKind, enumerate_rankings
from .domain import Dataset, StoreData, TimePeriod
from .likelihood import Model, ModelParams
from .rate_model import RateFamily, RateKind, bakery_peak_template

__all__ = [
    "ScenarioSpec",
    "SimulatedPeriod",
    "bakery_like_spec",
    "sample_nhpp",
    "scenario_one",
    "scenario_two",
    "simulate_dataset",
    "simulate_period",
]


def sample_nhpp(rate: RateFamily, eta, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Arrival times on ``[0, horizon]`` by thinning a homogeneous process at the rate's maximum."""
    eta = rate.validate(eta)
    bound = rate.upper_bound(eta, horizon)
    if not np.isfinite(bound):
        raise ValueError("rate is unbounded on the horizon")
    if bound <= 0:
        return np.empty(0)
    n = rng.poisson(bound * horizon)
    t = np.sort(rng.uniform(0.0, horizon, size=n))
    if rate.kind is RateKind.HOMOGENEOUS:
        return t
    keep = rng.uniform(0.0, bound, size=n) < rate.rate(eta, t)
    return t[keep]


@dataclass(frozen=True)
class SimulatedPeriod:
    """All arrivals of a period, including the unobserved no-purchases.

    ``choices[j]`` is 0 for a no-purchase or the 1-based item bought by
    arrival ``j``.
    """

    arrivals: np.ndarray
    segments: np.ndarray
    choices: np.ndarray
    observed: TimePeriod


def simulate_period(params: ModelParams, store: int, initial_stock, horizon: float,
                    rng: np.random.Generator) -> SimulatedPeriod:
    """Simulate one period of store ``store`` (0-based).

    Arrivals are processed in blocks between stockouts: choice
    probabilities only change when an item runs out, so every block is
    drawn at once and cut at the first arrival that exhausts an item.
    """
    model = params.model
    n = model.n_items
    stock = np.array(initial_stock, dtype=np.int64)
    if stock.shape != (n,) or np.any(stock < 0):
        raise ValueError("initial stock must be a nonnegative vector with one entry per item")
    t = sample_nhpp(model.rate, params.eta[store], horizon, rng)
    m = t.size
    seg = rng.choice(model.n_segments, size=m, p=params.theta[store])
    u = rng.uniform(size=m)
    choices = np.zeros(m, dtype=np.int64)
    start = 0
    while start < m:
        s = (stock > 0).astype(float)
        F = params.choice_table(s[None, :])[:, 0, :]  # (K, n+1)
        cdf = np.cumsum(F, axis=1)
        cdf[:, -1] = np.inf
        block = slice(start, m)
        c = (u[block, None] >= cdf[seg[block]]).sum(axis=1)
        # only in-stock items can be chosen; guards against rounding at cdf edges
        c = np.where((c > 0) & (s[np.maximum(c, 1) - 1] == 0), 0, c)
        onehot = np.zeros((c.size, n + 1), dtype=np.int64)
        onehot[np.arange(c.size), c] = 1
        cum = np.cumsum(onehot[:, 1:], axis=0)
        idx = np.maximum(c, 1) - 1
        exhausted = (c > 0) & (cum[np.arange(c.size), idx] == stock[idx])
        hit = np.nonzero(exhausted)[0]
        stop = c.size if not hit.size else hit[0] + 1
        choices[start:start + stop] = c[:stop]
        stock -= cum[stop - 1]
        start += stop
    bought = choices > 0
    per_item = tuple(t[bought & (choices == i)] for i in range(1, n + 1))
    observed = TimePeriod(per_item, np.array(initial_stock, dtype=np.int64))
    return SimulatedPeriod(t, seg, choices, observed)


# -- scenario specifications --------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to simulate a dataset.

    ``eta`` gives rate parameters per store (rows) or, when ``eta_ranges``
    is set instead, each store's parameters are drawn uniformly from the
    ``(low, high)`` ranges.  ``theta`` is a per-store list of segment
    weights or the string ``"dirichlet"`` for uniform Dirichlet draws.
    ``stock`` is a fixed per-item list or ``{"low": a, "high": b}`` for
    independent uniform integers in ``[a, b]``.
    """

    n_stores: int
    n_items: int
    horizon: float
    periods: int
    rate: str
    choice: str
    n_segments: int = 1
    eta: Sequence[Sequence[float]] | None = None
    eta_ranges: Sequence[Sequence[float]] | None = None
    peaks: dict | None = None
    phi: Sequence[Sequence[float]] | None = None
    tau: Sequence[float] | None = None
    rankings: Sequence[Sequence[int]] | None = None
    max_ranking_length: int = 2
    theta: Any = "dirichlet"
    stock: Any = field(default_factory=lambda: {"low": 0, "high": 500})
    mnl_tau: float | None = None
    seed: int = 0
    item_names: Sequence[str] | None = None

    def __post_init__(self):
        RateKind(self.rate)
        ChoiceKind(self.choice)
        if (self.eta is None) == (self.eta_ranges is None):
            raise ValueError("give exactly one of eta and eta_ranges")
        if self.periods < 1 or self.n_stores < 1 or self.n_items < 1:
            raise ValueError("stores, items and periods must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown scenario keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        """Read a YAML or JSON scenario file."""
        text = Path(path).read_text(encoding="utf-8")
        d = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        out = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            out[k] = v
        return out

    def rate_family(self) -> RateFamily:
        kind = RateKind(self.rate)
        template = None
        if kind is RateKind.HILL_PLUS_PEAKS:
            template = bakery_peak_template(self.horizon, **(self.peaks or {}))
        return RateFamily(kind, template)

    def model(self) -> Model:
        kind = ChoiceKind(self.choice)
        rankings = None
        if kind is ChoiceKind.NONPARAMETRIC:
            rankings = (tuple(tuple(r) for r in self.rankings) if self.rankings
                        else tuple(enumerate_rankings(self.n_items, self.max_ranking_length)))
        return Model(self.n_stores, self.n_items, self.rate_family(), kind,
                     self.n_segments, rankings, self.mnl_tau)


def _draw_params(spec: ScenarioSpec, model: Model, rng: np.random.Generator) -> ModelParams:
    S, K = model.n_stores, model.n_segments
    if spec.eta is not None:
        eta = np.asarray(spec.eta, dtype=float).reshape(S, model.rate.n_params)
    else:
        r = np.asarray(spec.eta_ranges, dtype=float)
        eta = rng.uniform(r[:, 0], r[:, 1], size=(S, len(r)))
    if isinstance(spec.theta, str):
        if spec.theta != "dirichlet":
            raise ValueError(f"unknown theta rule {spec.theta!r}")
        theta = rng.dirichlet(np.ones(K), size=S)
    else:
        theta = np.asarray(spec.theta, dtype=float).reshape(S, K)
        theta = theta / theta.sum(axis=1, keepdims=True)
    phi = None if spec.phi is None else np.asarray(spec.phi, dtype=float)
    tau = None if spec.tau is None else np.asarray(spec.tau, dtype=float)
    return ModelParams(model, eta, theta, phi, tau)


def _draw_stock(spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    if isinstance(spec.stock, dict):
        return rng.integers(int(spec.stock["low"]), int(spec.stock["high"]) + 1, size=spec.n_items)
    return np.asarray(spec.stock, dtype=np.int64).reshape(spec.n_items)


def simulate_dataset(spec: ScenarioSpec, params: ModelParams | None = None) -> tuple[Dataset, ModelParams]:
    """Simulate a dataset; returns it with the generating parameters.

    Parameters and every period draw from their own substreams of
    ``spec.seed``, so a store's data do not depend on how many stores
    or periods precede it.
    """
    model = spec.model()
    root = np.random.SeedSequence(spec.seed)
    param_seq, data_seq = root.spawn(2)
    if params is None:
        params = _draw_params(spec, model, np.random.default_rng(param_seq))
    stores = []
    for s, store_seq in enumerate(data_seq.spawn(spec.n_stores)):
        periods = []
        for period_seq in store_seq.spawn(spec.periods):
            rng = np.random.default_rng(period_seq)
            stock = _draw_stock(spec, rng)
            periods.append(simulate_period(params, s, stock, spec.horizon, rng).observed)
        stores.append(StoreData(str(s + 1), tuple(periods)))
    names = tuple(spec.item_names) if spec.item_names else ()
    return Dataset(tuple(stores), spec.horizon, spec.n_items, names), params


# -- presets --------------------------------------------------------------------


def scenario_one(seed: int = 0, periods: int = 25) -> ScenarioSpec:
    """Three stores, homogeneous rates, two exogenous-substitution segments."""
    return ScenarioSpec(
        n_stores=3, n_items=3, horizon=1000.0, periods=periods,
        rate="homogeneous", eta_ranges=[[2.0, 4.0]],
        choice="exogenous", n_segments=2,
        phi=[[0.75, 0.2, 0.05], [0.33, 0.33, 0.34]], tau=[0.75, 0.75],
        theta="dirichlet", stock={"low": 0, "high": 500}, seed=seed,
    )


SCENARIO_TWO_ETA = (3000.0, 2.0, 400.0)


def scenario_two(periods: int = 25, seed: int = 0, eta=SCENARIO_TWO_ETA) -> ScenarioSpec:
    """One store, Hill rate, nonparametric choice over all rankings of length 1 and 2.

    A third of the customers each follow the rankings (1), (1, 2) and
    (3, 2).  The Hill parameters are configuration values.
    """
    rankings = enumerate_rankings(3, 2)
    theta = [1.0 / 3.0 if r in {(1,), (1, 2), (3, 2)} else 0.0 for r in rankings]
    return ScenarioSpec(
        n_stores=1, n_items=3, horizon=1000.0, periods=periods,
        rate="hill", eta=[list(eta)],
        choice="nonparametric", n_segments=len(rankings),
        rankings=[list(r) for r in rankings],
        theta=[theta], stock={"low": 0, "high": 500}, seed=seed,
    )


def bakery_like_spec(seed: int = 0, periods: int = 150) -> ScenarioSpec:
    """One store over an 8-hour day with a lunch peak plus two sharp afternoon peaks.

    Three items, a single exogenous segment, and small stocks so that
    stockouts are frequent.
    """
    return ScenarioSpec(
        n_stores=1, n_items=3, horizon=8.0, periods=periods,
        rate="hill_plus_peaks", eta=[[25.0, 3.0, 2.5, 4.0]],
        choice="exogenous", n_segments=1,
        phi=[[0.3, 0.25, 0.45]], tau=[0.6],
        theta=[[1.0]], stock={"low": 2, "high": 16}, seed=seed,
        item_names=["oatmeal", "double chocolate", "chocolate chip"],
    )
