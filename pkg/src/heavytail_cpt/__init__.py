"""Break detection in autoregressive coefficients under heavy tails.

A self-weighted quantile moment condition feeds an empirical-likelihood
ratio that is profiled over the common coefficient at every candidate
split; the trimmed maximum is compared with Monte-Carlo quantiles of its
Brownian-bridge limit.  A median-regression CUSUM test is included as a
baseline.
"""

from heavytail_cpt.cpt_stat import (
    ChangePointTestResult,
    MonteCarloCritical,
    TestConfig,
    power_curve,
    run_test,
)
from heavytail_cpt.cusum_baseline import L1Fit, l1_fit, sq_statistic
from heavytail_cpt.el_inner import GELRho, solve_el, solve_multiplier
from heavytail_cpt.el_profile import SplitProfile, el_ratio_at, profile_split, profile_splits
from heavytail_cpt.limit_mc import CriticalValueTable, critical_value, estimate_q, simulate_limit
from heavytail_cpt.moments import MomentConfig, build_panel, omega_hat
from heavytail_cpt.series_gen import ARChangeSpec, InnovationKind, Series, load_series, simulate

__version__ = "0.1.0"

__all__ = [
    "ARChangeSpec", "ChangePointTestResult", "CriticalValueTable", "GELRho", "InnovationKind",
    "L1Fit", "MomentConfig", "MonteCarloCritical", "Series", "SplitProfile", "TestConfig",
    "build_panel", "critical_value", "el_ratio_at", "estimate_q", "l1_fit", "load_series",
    "omega_hat", "power_curve", "profile_split", "profile_splits", "run_test", "simulate",
    "simulate_limit", "solve_el", "solve_multiplier", "sq_statistic",
]
