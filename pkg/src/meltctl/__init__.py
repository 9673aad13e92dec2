"""Geometry-aware melt-pool modeling and feedforward laser-power control."""

from .coax import CoaxFrame, SignalSample, c_alpha, map_to_positions, per_line_aggregate
from .ffcontrol import (
    ControlProblem,
    PowerProfile,
    apply_profile,
    brute_force_powers,
    optimize_powers,
)
from .meltmodel import (
    ExpFit,
    FitSample,
    PowerModel,
    eval_coeffs,
    eval_dynamic,
    eval_static,
    fit_exponential,
    fit_metrics,
    fit_power_model,
    median_filter,
    paper_default,
    trend_sigma,
)
from .scanpath import (
    LayerScan,
    Point2,
    Polygon,
    ScanLine,
    hatch_polygon,
    line_lengths,
    parse_scanfile,
    write_scanfile,
)
from .simulate import NoiseConfig, SimOutput, render_frame, simulate_layer

__all__ = [
    "CoaxFrame",
    "ControlProblem",
    "ExpFit",
    "FitSample",
    "LayerScan",
    "NoiseConfig",
    "Point2",
    "Polygon",
    "PowerModel",
    "PowerProfile",
    "ScanLine",
    "SignalSample",
    "SimOutput",
    "apply_profile",
    "brute_force_powers",
    "c_alpha",
    "eval_coeffs",
    "eval_dynamic",
    "eval_static",
    "fit_exponential",
    "fit_metrics",
    "fit_power_model",
    "hatch_polygon",
    "line_lengths",
    "map_to_positions",
    "median_filter",
    "optimize_powers",
    "paper_default",
    "parse_scanfile",
    "per_line_aggregate",
    "render_frame",
    "simulate_layer",
    "trend_sigma",
    "write_scanfile",
]
