"""Calibration and fitting pipeline built on a Levenberg-Marquardt engine."""

from rbopo.analysis.fits import (
    LinearFit,
    LinearityReport,
    LorentzianFit,
    PeakLaw,
    SqueezingFit,
    ThresholdFit,
    check_shot_linearity,
    fit_peak,
    fit_squeezing,
    fit_threshold,
    linear_fit,
    locate_peak,
    normalize,
    normalize_dataset,
    peak_frequency_vs_power,
    peak_window,
)
from rbopo.analysis.nlls import FitResult, nlls_fit

__all__ = [
    "FitResult",
    "nlls_fit",
    "LinearFit",
    "LinearityReport",
    "LorentzianFit",
    "PeakLaw",
    "SqueezingFit",
    "ThresholdFit",
    "check_shot_linearity",
    "fit_peak",
    "fit_squeezing",
    "fit_threshold",
    "linear_fit",
    "locate_peak",
    "normalize",
    "normalize_dataset",
    "peak_frequency_vs_power",
    "peak_window",
]
