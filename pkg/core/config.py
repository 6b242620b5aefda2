#!/usr/bin/env python3
"""
LiftGuard configuration module.
Numerical tolerances and defaults shared by the analysis modules.
"""

import logging
import os

from dotenv import load_dotenv

load_dotenv()

# Analysis defaults; every public routine accepts overrides
ANALYSIS_CONFIG = {
    "rank_rtol": 1e-9,
    "residual_rtol": 1e-8,
    "angle_threshold": 1e-7,
    "eig_cluster_tol": 1e-6,
    "long_chain_warning": 4,
    "threshold_margin": 0.05,
    "threshold_floor": 1e-9,
    "threshold_horizon": 200,
    "alpha_floor": 1e-12,
    "candidate_seed": 0,
}

LOG_ENV_VAR = "LIFTGUARD_LOG"
DEFAULT_LOG_LEVEL = "WARNING"


def get_analysis_config():
    """Get a copy of the analysis configuration."""
    return dict(ANALYSIS_CONFIG)


def get_setting(name, override=None):
    """Return `override` when given, else the configured default for `name`."""
    if override is not None:
        return override
    if name not in ANALYSIS_CONFIG:
        raise KeyError(f"Unknown analysis setting: {name}")
    return ANALYSIS_CONFIG[name]


def get_log_level(override=None):
    """Resolve the log level from an explicit value or the environment."""
    name = (override or os.environ.get(LOG_ENV_VAR) or DEFAULT_LOG_LEVEL).upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        raise ValueError(f"Unknown log level: {name}")
    return level
