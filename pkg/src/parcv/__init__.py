"""Parallel brute-force Bayesian cross-validation with online diagnostics."""

from .core import (Dataset, FoldAssignment, InvalidInputError, Model, PCVError,
                   UndefinedDiagnosticError, UnsupportedScoreError, make_kfold_scheme,
                   make_logo_scheme, make_loo_scheme, make_time_block_scheme)
from .engine import (FullDataResult, PcvReport, RunConfig, progressive_snapshots,
                     run_full_data, run_model_pair_masked, run_pcv)
from .estimator import ParallelCV
from .hmc import AdaptationError, KernelParams, hmc_step, leapfrog

__version__ = "0.1.0"

__all__ = [
    "Dataset", "FoldAssignment", "Model", "make_kfold_scheme", "make_logo_scheme",
    "make_loo_scheme", "make_time_block_scheme",
    "PCVError", "InvalidInputError", "UnsupportedScoreError", "UndefinedDiagnosticError",
    "AdaptationError", "KernelParams", "hmc_step", "leapfrog",
    "RunConfig", "FullDataResult", "PcvReport", "run_full_data", "run_pcv",
    "run_model_pair_masked", "progressive_snapshots", "ParallelCV",
]
