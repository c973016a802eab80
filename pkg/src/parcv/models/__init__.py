"""Example models with simulators and analytic gradients."""

from .grouped import GroupedRegressionModel, simulate_grouped_regression
from .radon import RadonModel, simulate_radon
from .rats import RatGrowthModel, simulate_rats
from .seasonal import (SeasonalARModel, make_seasonal_block_scheme, month_on_month,
                       simulate_seasonal_ar, year_on_year)
from .toy import GaussianTarget, NormalMeanModel, simulate_normal_mean
from ._gaussian import unseen_group_log_pred

__all__ = [
    "GroupedRegressionModel", "simulate_grouped_regression",
    "RadonModel", "simulate_radon",
    "RatGrowthModel", "simulate_rats",
    "SeasonalARModel", "make_seasonal_block_scheme", "month_on_month", "year_on_year",
    "simulate_seasonal_ar",
    "GaussianTarget", "NormalMeanModel", "simulate_normal_mean",
    "unseen_group_log_pred",
]
