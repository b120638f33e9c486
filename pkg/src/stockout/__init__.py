"""Bayesian inference of arrival rates and substitution behavior from stockout-censored sales."""

from .choice_model import ChoiceKind, SegmentMixture, SegmentParams, enumerate_rankings
from .domain import Dataset, StockTrajectory, StoreData, TimePeriod, build_stock_trajectory, stock_at
from .likelihood import Hyperparameters, LikelihoodEvaluator, Model, ModelParams, log_likelihood
from .rate_model import PeakTemplate, RateFamily, RateKind, RateParams
from .sampler import PosteriorSamples, SamplerConfig, run_chains

__version__ = "0.1.0"

__all__ = [
    "ChoiceKind",
    "Dataset",
    "Hyperparameters",
    "LikelihoodEvaluator",
    "Model",
    "ModelParams",
    "PeakTemplate",
    "PosteriorSamples",
    "RateFamily",
    "RateKind",
    "RateParams",
    "SamplerConfig",
    "SegmentMixture",
    "SegmentParams",
    "StockTrajectory",
    "StoreData",
    "TimePeriod",
    "build_stock_trajectory",
    "enumerate_rankings",
    "log_likelihood",
    "run_chains",
    "stock_at",
]
