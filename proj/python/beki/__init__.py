"""Ensemble Kalman inversion with log-barrier constraints."""

import json

from ._beki import (
    BekiError,
    ConstraintSet,
    Darcy2DModel,
    FeasibilityMarginError,
    Heat1DModel,
    InvalidBounds,
    InvalidInput,
    StiffnessAbort,
    UndefinedRate,
    UsageError,
    barrier_drift,
    barrier_value,
    build_heat1d,
    checkpoint_times,
    collapse_bound_violations,
    compute_stats,
    config_hash,
    feasibility_margin,
    make_box,
    make_norm_ball,
    preset_names,
    project_box,
    rate_estimate,
    solve_ode,
    subspace_distance,
    verify,
)
from ._beki import preset as _preset_json
from ._beki import run_experiment as _run_experiment_json


def preset(name, desk=False):
    """Preset config as a dict."""
    return json.loads(_preset_json(name, desk))


def run_experiment(config, output_dir=""):
    """Run a config given as a dict or JSON text."""
    text = config if isinstance(config, str) else json.dumps(config)
    return _run_experiment_json(text, output_dir)
