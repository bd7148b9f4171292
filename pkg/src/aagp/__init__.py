"""Additive approximate Gaussian processes for gridded space-time data."""

__version__ = "0.1.0"

from .estimator import AAGPRegressor
from .kernels import NonsepParams, SepParams, gneiting_corr, separable_corr
from .model import Dataset, ModelParams, Priors, marginal_loglik, validate_dataset
from .mpp import KnotSet, build_mpp, select_knots
from .predict import PredictionResult, alci, mspe, predictive_draws
from .sampler import ChainConfig, SampleStore, run_chain, run_chains
from .simulate import ScenarioSpec, generate_scenario, holdout_split

__all__ = [
    "AAGPRegressor", "NonsepParams", "SepParams", "gneiting_corr", "separable_corr",
    "Dataset", "ModelParams", "Priors", "marginal_loglik", "validate_dataset",
    "KnotSet", "build_mpp", "select_knots", "PredictionResult", "alci", "mspe",
    "predictive_draws", "ChainConfig", "SampleStore", "run_chain", "run_chains",
    "ScenarioSpec", "generate_scenario", "holdout_split",
]
