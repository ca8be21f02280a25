"""Fits used by the calibration pipeline."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from rbopo.analysis.nlls import nlls_fit
from rbopo.errors import DegenerateFitError, NumericalError
from rbopo.units import SpectrumTrace, check_aligned, linear_to_db, trace_divide, trace_subtract

ETA_SOFT_BOUNDS = (0.0, 1.2)
LINEARITY_TOLERANCE = 0.01


def _jsonable(obj):
    out = {}
    for k, v in asdict(obj).items():
        if isinstance(v, float) and not math.isfinite(v):
            v = None
        out[k] = v
    return out


# -- normalization ---------------------------------------------------------

def normalize(target: SpectrumTrace, shot: SpectrumTrace, electronic: SpectrumTrace | None = None) -> SpectrumTrace:
    """``(target - electronic) / (shot - electronic)``.

    Without an electronic trace this is the plain ratio, flagged as such.
    """
    if electronic is None:
        out = trace_divide(target, shot)
        flags = ("no_electronic_subtraction",)
    else:
        with warnings.catch_warnings():
            # negative points in the numerator are legitimate; a bad denominator is caught below
            warnings.simplefilter("ignore", RuntimeWarning)
            num = trace_subtract(target, electronic)
        den = trace_subtract(shot, electronic)
        out = trace_divide(num, den)
        flags = ()
    return out.replace(label=f"{target.label or target.kind} normalized", flags=flags)


def normalize_dataset(traces: dict) -> dict:
    """Normalized difference (by ``shot_sum``) and single-beam (by ``shot_single``) traces."""
    electronic = traces.get("electronic")
    out = {}
    if "diff_raw" in traces and "shot_sum" in traces:
        out["diff"] = normalize(traces["diff_raw"], traces["shot_sum"], electronic)
    if "single_beam" in traces and "shot_single" in traces:
        out["single"] = normalize(traces["single_beam"], traces["shot_single"], electronic)
    return out


# -- squeezing spectrum -------------------------------------------------------------

def squeezing_curve(f, eta, bw):
    return 1.0 - eta / (1.0 + (f / bw) ** 2)


@dataclass(frozen=True)
class SqueezingFit:
    """Leaky-cavity fit; ``eta`` is the detected depth (escape times detection efficiency).

    ``flagged`` marks an unphysical depth (outside [0, 1]); depths beyond the
    wider soft bounds [0, 1.2] usually mean the trace is not squeezing data.
    """

    eta: float
    bw_hz: float
    eta_uncertainty: float
    bw_uncertainty: float
    residual_rms: float
    converged: bool
    iterations: int
    n_points: int
    flagged: bool = False

    @property
    def outside_soft_bounds(self) -> bool:
        lo, hi = ETA_SOFT_BOUNDS
        return not lo <= self.eta <= hi

    @property
    def floor(self) -> float:
        return 1.0 - self.eta

    @property
    def depth_db(self) -> float:
        return linear_to_db(self.floor) if self.floor > 0 else -math.inf

    @property
    def depth_db_uncertainty(self) -> float:
        return 10.0 / math.log(10.0) * self.eta_uncertainty / self.floor

    def to_dict(self) -> dict:
        d = _jsonable(self)
        d["depth_db"] = self.depth_db if math.isfinite(self.depth_db) else None
        d["depth_db_uncertainty"] = self.depth_db_uncertainty
        d["outside_soft_bounds"] = self.outside_soft_bounds
        return d


def exclusion_mask(freqs, exclusions) -> np.ndarray:
    keep = np.ones(len(freqs), dtype=bool)
    for lo, hi in exclusions or ():
        keep &= ~((freqs >= lo) & (freqs <= hi))
    return keep


def _running_mean(y, n):
    if n <= 1 or len(y) < n:
        return np.asarray(y, dtype=float)
    kernel = np.ones(n) / n
    return np.convolve(y, kernel, mode="valid")


def fit_squeezing(normalized: SpectrumTrace, exclusions=(), weights=None) -> SqueezingFit:
    """Fit the leaky-cavity Lorentzian ``1 - eta/(1+(f/BW)^2)``.

    Initial guess: ``eta0 = 1 - min(S)`` on a lightly smoothed trace and
    ``BW0`` where the depth first falls to half of that.
    """
    if normalized.kind != "normalized":
        raise ValueError(f"expected a normalized trace, got kind={normalized.kind!r}")
    keep = exclusion_mask(normalized.freqs, exclusions)
    f = normalized.freqs[keep]
    s = normalized.values[keep]
    w = None if weights is None else np.asarray(weights, dtype=float)[keep]
    if len(f) < 3:
        raise DegenerateFitError("fewer than three points left after exclusions")

    smooth = _running_mean(s, 5)
    fs = _running_mean(f, 5)
    eta0 = max(1.0 - float(smooth.min()), 0.02)
    half = np.flatnonzero(1.0 - smooth <= eta0 / 2)
    half = half[fs[half] > fs[int(np.argmin(smooth))]]
    bw0 = float(fs[half[0]]) if len(half) else float(f[-1])
    bw0 = max(bw0, float(f[1] - f[0]), 1.0)

    res = nlls_fit(squeezing_curve, [eta0, bw0], f, s, w)
    eta, bw = res.params
    bw = abs(bw)
    return SqueezingFit(
        eta=float(eta),
        bw_hz=float(bw),
        eta_uncertainty=float(res.uncertainties[0]),
        bw_uncertainty=float(res.uncertainties[1]),
        residual_rms=res.residual_rms,
        converged=res.converged,
        iterations=res.iterations,
        n_points=int(len(f)),
        flagged=not 0.0 <= eta <= 1.0,
    )


# -- narrow peak -------------------------------------------------------------------

def lorentzian(f, amplitude, center, fwhm, offset):
    hw2 = (fwhm / 2.0) ** 2
    return amplitude * hw2 / ((f - center) ** 2 + hw2) + offset


@dataclass(frozen=True)
class LorentzianFit:
    """Baseline-subtracted peak fit.

    ``center_uncertainty_hz`` follows the width convention (half the fitted
    FWHM); ``center_uncertainty_cov_hz`` is the covariance estimate.
    """

    found: bool
    amplitude: float = math.nan
    center_hz: float = math.nan
    fwhm_hz: float = math.nan
    offset: float = math.nan
    amplitude_uncertainty: float = math.nan
    center_uncertainty_hz: float = math.nan
    center_uncertainty_cov_hz: float = math.nan
    fwhm_uncertainty_hz: float = math.nan
    offset_uncertainty: float = math.nan
    residual_rms: float = math.nan
    converged: bool = False
    iterations: int = 0
    baseline: str = ""
    reason: str = ""

    def to_dict(self) -> dict:
        return _jsonable(self)


def _robust_std(r):
    return 1.4826 * float(np.median(np.abs(r - np.median(r))))


def _point_scatter(r):
    # white-noise level from neighbor differences; a peak spanning several
    # points barely contributes, unlike to the spread of ``r`` itself
    return _robust_std(np.diff(r)) / np.sqrt(2.0)


def _baseline(trace, window, mode, edge_fraction):
    lo, hi = window
    inside = (trace.freqs >= lo) & (trace.freqs <= hi)
    f = trace.freqs[inside]
    if mode == "eq1":
        try:
            sq = fit_squeezing(trace, exclusions=[window])
            if not sq.flagged:
                return f, squeezing_curve(f, sq.eta, sq.bw_hz), "eq1"
        except NumericalError:
            pass
        mode = "linear"  # fallback when the background has no squeezing shape
    if mode != "linear":
        raise ValueError(f"unknown baseline mode {mode!r}")
    s = trace.values[inside]
    n_edge = max(2, int(round(edge_fraction * len(f))))
    idx = np.r_[0:n_edge, len(f) - n_edge:len(f)]
    coef = np.polyfit(f[idx], s[idx], 1)
    return f, np.polyval(coef, f), "linear"


def fit_peak(
    normalized: SpectrumTrace,
    window,
    baseline: str = "eq1",
    edge_fraction: float = 0.2,
    significance: float = 3.0,
) -> LorentzianFit:
    """Subtract a baseline and fit a Lorentzian inside ``window`` (Hz).

    The default baseline is the leaky-cavity curve fitted to the whole trace
    with the window masked; ``baseline="linear"`` fits a line to the window
    edges instead. A peak below ``significance`` times the robust residual
    scatter yields ``found=False`` rather than an error.
    """
    lo, hi = window
    inside = (normalized.freqs >= lo) & (normalized.freqs <= hi)
    if inside.sum() < 6:
        raise ValueError("peak window holds fewer than six grid points")
    f, base, used = _baseline(normalized, window, baseline, edge_fraction)
    r = normalized.values[inside] - base

    scatter = _point_scatter(r)
    excess = float(r.max() - np.median(r))
    if not excess > significance * scatter:
        return LorentzianFit(found=False, baseline=used, reason="no significant maximum in window")

    i_max = int(np.argmax(r))
    c0 = float(np.median(r))
    a0 = float(r[i_max] - c0)
    df = float(f[1] - f[0])
    above = r - c0 >= a0 / 2
    w0 = max(float(above.sum()) * df, 2 * df)
    try:
        res = nlls_fit(lorentzian, [a0, float(f[i_max]), w0, c0], f, r)
    except NumericalError as exc:
        return LorentzianFit(found=False, baseline=used, reason=f"fit failed: {exc}")
    amp, center, fwhm, offset = res.params
    fwhm = abs(fwhm)
    resid_std = float(np.std(r - lorentzian(f, *res.params)))
    if not amp > significance * resid_std or not lo <= center <= hi:
        return LorentzianFit(found=False, baseline=used, reason="fitted peak not significant")
    u = res.uncertainties
    return LorentzianFit(
        found=True,
        amplitude=float(amp),
        center_hz=float(center),
        fwhm_hz=float(fwhm),
        offset=float(offset),
        amplitude_uncertainty=float(u[0]),
        center_uncertainty_hz=float(fwhm / 2.0),
        center_uncertainty_cov_hz=float(u[1]),
        fwhm_uncertainty_hz=float(u[2]),
        offset_uncertainty=float(u[3]),
        residual_rms=res.residual_rms,
        converged=res.converged,
        iterations=res.iterations,
        baseline=used,
    )


def peak_window(center_hz: float, width_hz: float, n_widths: float = 3.0) -> tuple[float, float]:
    """Window of ``n_widths`` peak widths either side of ``center_hz``."""
    return (center_hz - n_widths * width_hz, center_hz + n_widths * width_hz)


def locate_peak(normalized: SpectrumTrace, exclude_below_hz: float = 0.0, smooth: int = 3) -> float:
    """Frequency of the largest positive excursion above a leaky-cavity background.

    Used when no peak center is configured.
    """
    keep = normalized.freqs >= exclude_below_hz
    try:
        sq = fit_squeezing(normalized)
        base = squeezing_curve(normalized.freqs, sq.eta, sq.bw_hz)
    except NumericalError:
        base = np.full(len(normalized), np.median(normalized.values))
    r = _running_mean(normalized.values - base, smooth)
    f = _running_mean(normalized.freqs, smooth)
    r = np.where(_running_mean(keep.astype(float), smooth) > 1.0 - 1e-9, r, -np.inf)
    return float(f[int(np.argmax(r))])


# -- linear laws -------------------------------------------------------------------

@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    slope_uncertainty: float
    intercept_uncertainty: float
    chi2: float
    dof: int
    through_origin: bool = False

    def to_dict(self) -> dict:
        return _jsonable(self)

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept


def linear_fit(x, y, sigma=None, through_origin: bool = False) -> LinearFit:
    """Weighted least squares line.

    Uncertainties come from the inverse normal matrix scaled by the reduced
    chi-square (unscaled when no degrees of freedom remain).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if sigma is None else 1.0 / np.asarray(sigma, dtype=float) ** 2
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("sigma must be positive and finite")
    if np.ptp(x) == 0:
        raise DegenerateFitError("all abscissae identical")
    design = x[:, None] if through_origin else np.column_stack([x, np.ones_like(x)])
    a = design.T @ (w[:, None] * design)
    coef = np.linalg.solve(a, design.T @ (w * y))
    resid = y - design @ coef
    chi2 = float(np.sum(w * resid**2))
    dof = len(x) - design.shape[1]
    cov = np.linalg.inv(a) * (chi2 / dof if dof > 0 else 1.0)
    unc = np.sqrt(np.diag(cov))
    if through_origin:
        return LinearFit(float(coef[0]), 0.0, float(unc[0]), 0.0, chi2, dof, True)
    return LinearFit(float(coef[0]), float(coef[1]), float(unc[0]), float(unc[1]), chi2, dof, False)


class PeakLaw(NamedTuple):
    proportional: LinearFit
    affine: LinearFit


def peak_frequency_vs_power(points) -> PeakLaw:
    """Regress fitted peak centers on pump power, weights ``1/sigma_center^2``.

    ``points`` is a sequence of ``(pump_power_w, LorentzianFit)``; fits that
    found no peak or did not converge are skipped.
    """
    usable = [(p, fit) for p, fit in points if fit.found and fit.converged]
    if len(usable) < 2:
        raise DegenerateFitError(f"need two converged peak fits, got {len(usable)}")
    power = np.array([p for p, _ in usable])
    center = np.array([fit.center_hz for _, fit in usable])
    sigma = np.array([fit.center_uncertainty_hz for _, fit in usable])
    if np.ptp(power) == 0:
        raise DegenerateFitError("all pump powers identical")
    return PeakLaw(
        proportional=linear_fit(power, center, sigma, through_origin=True),
        affine=linear_fit(power, center, sigma),
    )


# -- shot-noise linearity -----------------------------------------------------------

@dataclass(frozen=True)
class LinearityReport:
    powers_w: list
    levels: list
    slope: float
    relative_residuals: list
    max_relative_residual: float
    outlier_index: int
    outlier_power_w: float
    passed: bool
    tolerance: float = LINEARITY_TOLERANCE

    def to_dict(self) -> dict:
        return _jsonable(self)


def check_shot_linearity(traces, electronic: SpectrumTrace | None = None, band=None, tolerance: float = LINEARITY_TOLERANCE) -> LinearityReport:
    """Check that shot-noise level is proportional to reference power.

    Each trace is electronic-subtracted and band-averaged; the levels are
    fitted by ``level = k * P`` with relative (``1/P^2``) weights.
    """
    traces = list(traces)
    if len(traces) < 3:
        raise ValueError("need at least three power levels")
    powers, levels = [], []
    for p, trace in traces:
        if electronic is not None:
            check_aligned(trace, electronic)
            values = trace.values - electronic.values
        else:
            values = trace.values
        mask = np.ones(len(trace), dtype=bool)
        if band is not None:
            mask = (trace.freqs >= band[0]) & (trace.freqs <= band[1])
        powers.append(float(p))
        levels.append(float(np.mean(values[mask])))
    powers = np.array(powers)
    levels = np.array(levels)
    if np.any(powers <= 0):
        raise ValueError("reference powers must be positive")
    fit = linear_fit(powers, levels, sigma=powers, through_origin=True)
    model = fit.slope * powers
    rel = (levels - model) / model
    worst = int(np.argmax(np.abs(rel)))
    max_rel = float(np.abs(rel[worst]))
    return LinearityReport(
        powers_w=powers.tolist(),
        levels=levels.tolist(),
        slope=fit.slope,
        relative_residuals=rel.tolist(),
        max_relative_residual=max_rel,
        outlier_index=worst,
        outlier_power_w=float(powers[worst]),
        passed=max_rel < tolerance,
        tolerance=tolerance,
    )


# -- threshold ------------------------------------------------------------------------

def hockey_stick(p, slope, p_th):
    return np.maximum(0.0, slope * (p - p_th))


@dataclass(frozen=True)
class ThresholdFit:
    p_th_w: float
    slope_above: float
    p_th_uncertainty_w: float
    slope_uncertainty: float
    residual_rms: float
    converged: bool
    iterations: int

    def to_dict(self) -> dict:
        return _jsonable(self)


def fit_threshold(points) -> ThresholdFit:
    """Fit ``out = max(0, a*(P - P_th))`` to ``(pump_w, output_w)`` pairs.

    The knee is seeded by a profile scan over candidate thresholds (slope
    solved linearly for each), then refined jointly.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
        raise ValueError("need at least four (pump, output) pairs")
    pts = pts[np.argsort(pts[:, 0])]
    pump, out = pts[:, 0], pts[:, 1]
    span = float(np.ptp(out))
    if span == 0 or np.max(out) <= 0:
        raise DegenerateFitError("no knee: output is constant")

    best = None
    for cand in np.linspace(pump[0], pump[-1], 400):
        x = np.maximum(0.0, pump - cand)
        xx = float(x @ x)
        if xx == 0:
            continue
        a = float(x @ out) / xx
        sse = float(np.sum((out - a * x) ** 2))
        if best is None or sse < best[0]:
            best = (sse, a, cand)
    _, a0, p0 = best
    n_below = int(np.sum(pump < p0))
    n_above = int(np.sum(pump > p0))
    if n_below < 2 or n_above < 2 or a0 <= 0:
        raise DegenerateFitError(
            f"no knee inside the scanned range (points below/above: {n_below}/{n_above})"
        )
    res = nlls_fit(hockey_stick, [a0, p0], pump, out)
    slope, p_th = res.params
    if not pump[0] < p_th < pump[-1]:
        raise DegenerateFitError(f"fitted threshold {p_th} outside scanned range")
    return ThresholdFit(
        p_th_w=float(p_th),
        slope_above=float(slope),
        p_th_uncertainty_w=float(res.uncertainties[1]),
        slope_uncertainty=float(res.uncertainties[0]),
        residual_rms=res.residual_rms,
        converged=res.converged,
        iterations=res.iterations,
    )


__all__ = [
    "normalize",
    "normalize_dataset",
    "squeezing_curve",
    "SqueezingFit",
    "fit_squeezing",
    "exclusion_mask",
    "lorentzian",
    "LorentzianFit",
    "fit_peak",
    "peak_window",
    "locate_peak",
    "LinearFit",
    "linear_fit",
    "PeakLaw",
    "peak_frequency_vs_power",
    "LinearityReport",
    "check_shot_linearity",
    "hockey_stick",
    "ThresholdFit",
    "fit_threshold",
]
