"""Command-line workflow: simulate, fit, diagnose, predict, lost-sales, baseline-fit.

Every command reads an optional YAML/JSON run configuration (``--config``)
whose keys can be overridden by flags, writes its artifacts into ``--out``
and tags each file with the configuration hash and seed.  Failures exit
with status 1 and a single ``error[<category>]: <detail>`` line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .choice_model import ChoiceKind, enumerate_rankings
from .dataio import (
    TimeFormat,
    parse_transactions,
    resolve_data_path,
    write_stock,
    write_table,
    write_transactions,
)
from .domain import Dataset, DataError
from .likelihood import Hyperparameters, Model, ModelParams
from .predictive import (
    StockCondition,
    expected_counts,
    lost_sales,
    observed_stock_conditions,
    predict_counts,
)
from .rate_model import RateFamily, RateKind, bakery_peak_template
from .sampler import (
    PosteriorSamples,
    SamplerConfig,
    holdout_perplexity,
    map_estimate,
    run_chains,
)
from .simulator import ScenarioSpec, bakery_like_spec, scenario_one, scenario_two, simulate_dataset

log = logging.getLogger("stockout")

PRESETS = {
    "scenario1": scenario_one,
    "scenario2": scenario_two,
    "bakery-like": bakery_like_spec,
}
DEFAULT_TAU_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))


class ConfigError(ValueError):
    """Inconsistent or incomplete run configuration."""


@dataclass
class ModelConfig:
    rate: str = "homogeneous"
    choice: str = "exogenous"
    segments: int = 1
    mnl_tau: float | None = None
    max_ranking_length: int = 2
    peaks: dict | None = None

    def build(self, n_stores: int, n_items: int, horizon: float) -> Model:
        kind = RateKind(self.rate)
        template = bakery_peak_template(horizon, **(self.peaks or {})) if kind is RateKind.HILL_PLUS_PEAKS else None
        choice = ChoiceKind(self.choice)
        rankings = tuple(enumerate_rankings(n_items, self.max_ranking_length)) if choice is ChoiceKind.NONPARAMETRIC else None
        return Model(n_stores, n_items, RateFamily(kind, template), choice, self.segments, rankings, self.mnl_tau)


@dataclass
class RunConfig:
    """Everything a command needs besides its own flags."""

    transactions: str | None = None
    stock: str | None = None
    horizon: float | None = None
    opening: str | None = None
    closing: str | None = None
    columns: dict = field(default_factory=dict)
    items: list | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: dict = field(default_factory=dict)
    split: float = 0.8
    out: str = "out"
    seed: int = 0
    tau_grid: list = field(default_factory=lambda: list(DEFAULT_TAU_GRID))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        try:
            d["model"] = ModelConfig(**(d.get("model") or {}))
        except TypeError as e:
            raise ConfigError(f"model section: {e}") from None
        cfg = cls(**d)
        if not 0 < cfg.split <= 1:
            raise ConfigError("split must lie in (0, 1]")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        text = Path(path).read_text(encoding="utf-8")
        d = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        return cls.from_dict(d or {})

    def digest(self) -> str:
        d = asdict(self)
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def sampler_config(self) -> SamplerConfig:
        opts = dict(self.sampler)
        hyper = opts.pop("hyper", None)
        try:
            cfg = SamplerConfig(seed=self.seed, **opts)
        except TypeError as e:
            raise ConfigError(f"sampler section: {e}") from None
        if hyper:
            cfg = replace(cfg, hyper=Hyperparameters(**hyper))
        return cfg

    def time_format(self) -> TimeFormat:
        return TimeFormat(self.opening, self.closing)


# -- helpers --------------------------------------------------------------------


def _load_data(cfg: RunConfig) -> Dataset:
    if not cfg.transactions:
        raise ConfigError("no transactions file configured")
    path = resolve_data_path(cfg.transactions)
    stock = resolve_data_path(cfg.stock) if cfg.stock else None
    return parse_transactions(path, cfg.horizon, cfg.items, stock, cfg.columns, cfg.time_format())


def _split(cfg: RunConfig, data: Dataset) -> tuple[Dataset, Dataset | None]:
    if cfg.split >= 1:
        return data, None
    return data.split(cfg.split)


def _model(cfg: RunConfig, data: Dataset, **overrides) -> Model:
    mc = replace(cfg.model, **overrides)
    return mc.build(data.n_stores, data.n_items, data.horizon)


def _provenance(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "config_hash": cfg.digest(), "seed": cfg.seed}


def _write_json(path: Path, obj, header: dict) -> None:
    path.write_text(json.dumps({"provenance": header, **obj}, indent=2, default=float) + "\n", encoding="utf-8")


def _parse_stock_vector(text: str, n: int) -> np.ndarray:
    try:
        s = np.array([int(x) for x in text.split(",")])
    except ValueError:
        raise ConfigError(f"bad stock vector {text!r}") from None
    if s.shape != (n,) or np.any((s != 0) & (s != 1)):
        raise ConfigError(f"stock vector must have {n} entries of 0 or 1")
    return s


def _parse_intervals(text: str) -> np.ndarray:
    try:
        pairs = [tuple(float(x) for x in part.split("-")) for part in text.split(";") if part]
    except ValueError:
        raise ConfigError(f"bad intervals {text!r}; expected 'start-end;start-end'") from None
    if any(len(p) != 2 for p in pairs):
        raise ConfigError(f"bad intervals {text!r}; expected 'start-end;start-end'")
    return np.array(pairs)


def _rhat_rows(post: PosteriorSamples) -> list[dict]:
    names, vals = post.columns()
    rows = []
    for j, name in enumerate(names):
        x = vals[:, :, j]
        rows.append({"parameter": name, "mean": float(x.mean()), "sd": float(x.std()),
                     "q2.5": float(np.quantile(x, 0.025)), "q97.5": float(np.quantile(x, 0.975)),
                     "rhat": post.rhat.get(name, float("nan"))})
    return rows


# -- commands ---------------------------------------------------------------------


def cmd_simulate(args, cfg: RunConfig, out: Path) -> None:
    if args.scenario:
        spec = ScenarioSpec.load(args.scenario)
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
    else:
        maker = PRESETS[args.preset]
        kwargs = {"seed": cfg.seed}
        if args.periods:
            kwargs["periods"] = args.periods
        spec = maker(**kwargs)
    data, params = simulate_dataset(spec)
    header = {**_provenance(cfg, "simulate"), "scenario_seed": spec.seed}
    write_transactions(data, out / "transactions.csv", header)
    write_stock(data, out / "stock.csv", header)
    (out / "scenario.yaml").write_text(yaml.safe_dump(spec.to_dict(), sort_keys=False), encoding="utf-8")
    truth = {"eta": params.eta.tolist(), "theta": params.theta.tolist(),
             "phi": None if params.phi is None else params.phi.tolist(),
             "tau": None if params.tau is None else params.tau.tolist(),
             "horizon": spec.horizon, "items": list(data.item_names)}
    _write_json(out / "truth.json", truth, header)
    print(f"simulated {data.n_stores} stores, {sum(data.period_counts)} periods, "
          f"{data.total_purchases} purchases -> {out}")


def cmd_fit(args, cfg: RunConfig, out: Path) -> None:
    data = _load_data(cfg)
    train, test = _split(cfg, data)
    model = _model(cfg, data)
    scfg = cfg.sampler_config()
    post = run_chains(train, model, scfg)
    header = _provenance(cfg, "fit")
    post.write_csv(out / "samples.csv", header)
    write_table(out / "rhat.csv", _rhat_rows(post), header)
    summary = {"converged": post.converged, "max_rhat": max(post.rhat.values(), default=float("nan")),
               "n_chains": post.n_chains, "n_draws": post.n_draws,
               "train_purchases": train.total_purchases}
    if test is not None and test.total_purchases:
        summary["holdout_perplexity"] = holdout_perplexity(post, test, max_draws=500)
    _write_json(out / "fit_summary.json", summary, header)
    if not post.converged:
        log.warning("chains have not converged (max R-hat %.3f > 1.1)", summary["max_rhat"])
    print(json.dumps(summary, default=float))


def _load_samples(args, cfg: RunConfig, data: Dataset) -> PosteriorSamples:
    if not args.samples:
        raise ConfigError("--samples is required")
    model = _model(cfg, data)
    post = PosteriorSamples.read_csv(args.samples, model)
    post.meta["horizon"] = data.horizon
    return post


def cmd_diagnose(args, cfg: RunConfig, out: Path) -> None:
    data = _load_data(cfg)
    post = _load_samples(args, cfg, data)
    header = _provenance(cfg, "diagnose")
    rows = _rhat_rows(post)
    write_table(out / "diagnostics.csv", rows, header)
    names, vals = post.columns()
    trace = []
    for c in range(post.n_chains):
        for j, name in enumerate(names):
            x = vals[c, :, j]
            half = len(x) // 2
            trace.append({"chain": c + 1, "parameter": name, "mean": float(x.mean()), "sd": float(x.std()),
                          "first_half_mean": float(x[:half].mean()) if half else float("nan"),
                          "second_half_mean": float(x[half:].mean())})
    write_table(out / "trace_summary.csv", trace, header)
    bad = [r["parameter"] for r in rows if r["rhat"] > 1.1]
    print(f"max R-hat {max((r['rhat'] for r in rows), default=float('nan')):.4f}; "
          f"{len(bad)} parameters above 1.1")


def cmd_predict(args, cfg: RunConfig, out: Path) -> None:
    data = _load_data(cfg)
    post = _load_samples(args, cfg, data)
    store = args.store - 1
    header = _provenance(cfg, "predict")
    if args.stock:
        s = _parse_stock_vector(args.stock, data.n_items)
        if not args.intervals:
            raise ConfigError("--intervals is required with --stock")
        conds = [(StockCondition(s, _parse_intervals(args.intervals)), None)]
    else:
        _, test = _split(cfg, data)
        conds = observed_stock_conditions(test if test is not None else data, store)[: args.conditions]
    rows = []
    for k, (cond, observed) in enumerate(conds, start=1):
        cond.validate(data.horizon)
        dist = predict_counts(post, cond, store, seed=cfg.seed + k, item_names=data.item_names)
        label = "".join(str(int(x)) for x in cond.stock)
        dist.write_csv(out / f"predict_{k}_{label}.csv", header)
        for r in dist.summary():
            r = {"condition": k, "stock": label, "length": cond.length, **r}
            if observed is not None:
                r["observed"] = int(observed.sum() if r["item"] == "total"
                                    else observed[data.item_names.index(r["item"])])
            rows.append(r)
    write_table(out / "predict_summary.csv", rows, header)
    print(f"wrote {len(conds)} predictive distributions to {out}")


def cmd_lost_sales(args, cfg: RunConfig, out: Path) -> None:
    data = _load_data(cfg)
    post = _load_samples(args, cfg, data)
    rows = lost_sales(post, data, args.store - 1, seed=cfg.seed)
    write_table(out / "lost_sales.csv", rows, _provenance(cfg, "lost-sales"))
    for r in rows:
        print(f"{r['item']}: actual {r['actual']}, full-stock mean {r['full_stock_mean']:.1f}, "
              f"lost {r['lost_mean']:.1f}")


def baseline_deviation(train: Dataset, test: Dataset, tau: float, scfg: SamplerConfig,
                       store: int = 0, conditions: int | None = None) -> tuple[float, ModelParams]:
    """Held-out absolute deviation of a homogeneous-rate, single-segment MNL MAP fit.

    The deviation is summed over the test set's stock conditions (all, or
    the ``conditions`` longest) of ``|expected total purchases - observed|``.
    """
    model = Model(train.n_stores, train.n_items, RateFamily(RateKind.HOMOGENEOUS), ChoiceKind.MNL,
                  1, mnl_tau=tau)
    res = map_estimate(train, model, scfg)
    params = PosteriorSamples.from_latent(model, res.state[None, None], diagnose=False)
    return condition_deviation(params, test, store, conditions), params.mean()


def condition_deviation(samples: PosteriorSamples, test: Dataset, store: int = 0,
                        conditions: int | None = None) -> float:
    """Sum over stock conditions of ``|posterior-mean expected total purchases - observed total|``."""
    conds = observed_stock_conditions(test, store)[:conditions]
    total = 0.0
    for cond, observed in conds:
        mean = expected_counts(samples, cond, store)[:, 1:].sum(axis=1).mean()
        total += abs(mean - observed.sum())
    return total


def cmd_baseline_fit(args, cfg: RunConfig, out: Path) -> None:
    data = _load_data(cfg)
    train, test = _split(cfg, data)
    if test is None:
        raise ConfigError("baseline-fit needs a holdout: set split below 1")
    grid = [float(x) for x in args.tau_grid.split(",")] if args.tau_grid else list(cfg.tau_grid)
    scfg = cfg.sampler_config()
    rows = []
    for tau in grid:
        dev, params = baseline_deviation(train, test, tau, scfg, args.store - 1, args.conditions)
        rows.append({"tau": tau, "abs_deviation": dev, "rate": float(params.eta[0, 0]),
                     **{f"phi[{i}]": float(v) for i, v in enumerate(params.phi[0], start=1)}})
    best = min(rows, key=lambda r: r["abs_deviation"])
    header = _provenance(cfg, "baseline-fit")
    write_table(out / "baseline.csv", rows, header)
    _write_json(out / "baseline_best.json", {"best_tau": best["tau"], "abs_deviation": best["abs_deviation"]},
                header)
    for r in rows:
        print(f"tau={r['tau']:.2f} abs_deviation={r['abs_deviation']:.2f}")
    print(f"best tau {best['tau']}")


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "predict": cmd_predict,
    "lost-sales": cmd_lost_sales,
    "baseline-fit": cmd_baseline_fit,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int, help="random seed (overrides the configuration)")
    common.add_argument("--out", help="output directory (overrides the configuration)")
    common.add_argument("--transactions", help="transactions CSV (overrides the configuration)")
    common.add_argument("--stock-file", help="initial stock CSV (overrides the configuration)")
    common.add_argument("--store", type=int, default=1, help="1-based store index (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="stockout", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="simulate a dataset")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scenario", help="scenario file")
    g.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--periods", type=int, help="periods per store for presets")
    sub.add_parser("fit", parents=[common], help="run the sampler")
    p = sub.add_parser("diagnose", parents=[common], help="convergence report for a sample file")
    p.add_argument("--samples")
    p = sub.add_parser("predict", parents=[common], help="predictive purchase counts")
    p.add_argument("--samples")
    p.add_argument("--stock", help="stock vector such as 0,1,1")
    p.add_argument("--intervals", help="time intervals such as '1-2.5;4-6'")
    p.add_argument("--conditions", type=int, default=4,
                   help="without --stock: number of held-out stock conditions (default 4)")
    p = sub.add_parser("lost-sales", parents=[common], help="full-stock sales against actual sales")
    p.add_argument("--samples")
    p = sub.add_parser("baseline-fit", parents=[common], help="homogeneous MNL baseline over a tau grid")
    p.add_argument("--tau-grid", help="comma-separated no-purchase weights")
    p.add_argument("--conditions", type=int, default=None,
                   help="number of held-out stock conditions scored (default all)")
    return parser


def run_command(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out:
            cfg.out = args.out
        if args.transactions:
            cfg.transactions = args.transactions
        if args.stock_file:
            cfg.stock = args.stock_file
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
    except DataError as e:
        return _fail("data", e)
    except (ConfigError, yaml.YAMLError, json.JSONDecodeError) as e:
        return _fail("config", e)
    except OSError as e:
        return _fail("io", e)
    except (ValueError, FloatingPointError, ArithmeticError) as e:
        return _fail("model", e)
    return 0


def _fail(category: str, err: Exception) -> int:
    detail = str(err).replace("\n", " ")
    print(f"error[{category}]: {detail}", file=sys.stderr)
    return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
