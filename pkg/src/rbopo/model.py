"""Twin-beam noise model of the above-threshold OPO.

All spectra are relative to the shot-noise level (1 == standard quantum
limit). The intensity-difference spectrum is the leaky-cavity Lorentzian

    S(f) = 1 - eta / (1 + (f / BW)**2)

with detection loss acting as a beam splitter, S -> 1 + eta_det * (S - 1).
Two phenomenological terms sit on top: a narrow Lorentzian peak whose
center tracks the absolute pump power, and an excess-noise Lorentzian
used to describe hot-cell degradation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from rbopo.errors import BelowThresholdError, OutOfModelError, UnphysicalCorrectionError

BOLTZMANN = 1.380649e-23  # J/K
TORR = 133.322368  # Pa


def _check_keys(cls, data):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")


@dataclass(frozen=True)
class OperatingPoint:
    pump_power_w: float
    threshold_power_w: float
    detuning_hz: float = 0.82e9
    temperature_c: float = 91.0

    def __post_init__(self):
        if not self.pump_power_w >= 0:
            raise ValueError("pump power must be >= 0")
        if not self.threshold_power_w > 0:
            raise ValueError("threshold power must be > 0")

    @property
    def sigma(self) -> float:
        return pump_ratio(self.pump_power_w, self.threshold_power_w)

    @classmethod
    def from_sigma(cls, sigma, threshold_power_w, **kw) -> OperatingPoint:
        return cls(sigma * threshold_power_w, threshold_power_w, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data) -> OperatingPoint:
        _check_keys(cls, data)
        return cls(**data)


@dataclass(frozen=True)
class SqueezingModel:
    """Parameters of the noise model; units are in the field names.

    ``eta`` is the cavity escape efficiency and ``detection_efficiency`` the
    end-to-end detection efficiency. ``excess_amplitude``/``excess_bw_hz``
    and ``divergence_coefficient_hz2`` shape the individual-beam noise;
    ``diff_excess``/``diff_excess_bw_hz`` add excess noise to the
    difference channel (zero unless a temperature model sets it).
    """

    eta: float = 0.48
    bw_hz: float = 16.1e6
    detection_efficiency: float = 0.83
    excess_amplitude: float = 0.0
    excess_bw_hz: float = 10e6
    divergence_coefficient_hz2: float = 0.0
    peak_slope_hz_per_w: float = 38.4e6
    peak_width_hz: float = 0.4e6
    peak_height: float = 0.0
    diff_excess: float = 0.0
    diff_excess_bw_hz: float = 10e6

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{f.name} must be finite and >= 0, got {v}")
        if self.eta > 1:
            raise ValueError("eta must be <= 1")
        if not 0 < self.detection_efficiency <= 1:
            raise ValueError("detection_efficiency must lie in (0, 1]")
        if not self.bw_hz > 0:
            raise ValueError("bw_hz must be > 0")

    @property
    def effective_eta(self) -> float:
        """Squeezing depth seen after detection, ``eta_det * eta``."""
        return self.detection_efficiency * self.eta

    def replace(self, **changes) -> SqueezingModel:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data) -> SqueezingModel:
        _check_keys(cls, data)
        return cls(**data)


def pump_ratio(pump_power_w: float, threshold_power_w: float) -> float:
    if not threshold_power_w > 0:
        raise ValueError("threshold power must be > 0")
    return pump_power_w / threshold_power_w


def output_power(op: OperatingPoint, slope: float | None = None, sqrt_amplitude: float | None = None) -> float:
    """Total OPO output power in W.

    Exactly one of ``slope`` (linear law ``a*(P - P_th)``) or
    ``sqrt_amplitude`` (``b*(sqrt(sigma) - 1)``) must be given. Zero below
    threshold.
    """
    if (slope is None) == (sqrt_amplitude is None):
        raise ValueError("give exactly one of slope or sqrt_amplitude")
    if op.pump_power_w <= op.threshold_power_w:
        return 0.0
    if slope is not None:
        return slope * (op.pump_power_w - op.threshold_power_w)
    return sqrt_amplitude * (math.sqrt(op.sigma) - 1.0)


def linear_slope_for(total_output_w: float, op: OperatingPoint) -> float:
    """Slope ``a`` of the linear law giving ``total_output_w`` at ``op``."""
    excess = op.pump_power_w - op.threshold_power_w
    if excess <= 0:
        raise BelowThresholdError("operating point is not above threshold")
    return total_output_w / excess


def _lorentz(f, width):
    return 1.0 / (1.0 + (np.asarray(f, dtype=float) / width) ** 2)


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def narrow_peak(model: SqueezingModel, pump_power_w: float, f):
    """Narrow pump-dependent peak, centered at ``peak_slope * P``."""
    if not pump_power_w >= 0:
        raise ValueError("pump power must be >= 0")
    f = np.asarray(f, dtype=float)
    if model.peak_height == 0 or model.peak_width_hz == 0:
        return _out(np.zeros_like(f))
    center = model.peak_slope_hz_per_w * pump_power_w
    hw = model.peak_width_hz / 2.0
    return _out(model.peak_height * hw * hw / ((f - center) ** 2 + hw * hw))


def peak_center(model: SqueezingModel, pump_power_w: float) -> float:
    return model.peak_slope_hz_per_w * pump_power_w


def difference_spectrum(model: SqueezingModel, f, pump_power_w: float | None = None):
    """Detected intensity-difference noise relative to shot noise.

    Without ``pump_power_w`` the narrow peak is left out.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("analysis frequency must be >= 0")
    s = -model.eta * _lorentz(f, model.bw_hz)
    if model.diff_excess:
        s = s + model.diff_excess * _lorentz(f, model.diff_excess_bw_hz)
    if pump_power_w is not None:
        s = s + narrow_peak(model, pump_power_w, f)
    return _out(1.0 + model.detection_efficiency * s)


def apply_loss(noise, detection_efficiency: float):
    """Beam-splitter loss acting on normalized noise."""
    return _out(1.0 + detection_efficiency * (np.asarray(noise, dtype=float) - 1.0))


def loss_correct(measured, detection_efficiency: float):
    """Undo detection loss: ``1 + (S - 1) / eta_det``."""
    if not 0 < detection_efficiency <= 1:
        raise ValueError("detection efficiency must lie in (0, 1]")
    corrected = 1.0 + (np.asarray(measured, dtype=float) - 1.0) / detection_efficiency
    if np.any(corrected <= 0):
        raise UnphysicalCorrectionError(
            f"loss correction with eta_det={detection_efficiency} gives non-positive noise"
        )
    return _out(corrected)


def individual_beam_spectrum(model: SqueezingModel, f, pump_power_w: float | None = None):
    """Intensity noise of one beam: phase-diffusion divergence plus excess terms."""
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ValueError("individual-beam noise diverges at f = 0")
    s = 1.0 + model.divergence_coefficient_hz2 / f**2
    if model.excess_amplitude:
        s = s + model.excess_amplitude * _lorentz(f, model.excess_bw_hz)
    if pump_power_w is not None:
        s = s + narrow_peak(model, pump_power_w, f)
    return _out(s)


def squeezing_vs_sigma(model: SqueezingModel, sigma: float, f, threshold_power_w: float | None = None):
    """Difference noise at normalized pump ``sigma``.

    The simple leaky-cavity model has no pump dependence; ``sigma`` only
    moves the narrow peak, and only when the threshold power is known.
    """
    if sigma < 1:
        raise BelowThresholdError(f"sigma={sigma} is below threshold")
    pump = None if threshold_power_w is None else sigma * threshold_power_w
    return difference_spectrum(model, f, pump)


# -- temperature ------------------------------------------------------------------

@dataclass(frozen=True)
class TemperatureModel:
    """Hot-cell degradation of the twin-beam correlations.

    Rb number density follows ``log10(P/torr) = A - B/T``; the absorption
    strength is anchored so the atomic loss at ``t_ref_c`` equals
    ``atomic_loss_ref``. The extra loss adds to the intrinsic cavity loss,
    and an excess-noise term proportional to it is calibrated so that the
    difference noise at ``probe_frequency_hz`` reaches shot noise at
    ``t_cross_c``.
    """

    vapor_pressure_a: float = 2.881 + 4.312
    vapor_pressure_b_k: float = 4040.0
    vapor_pressure_source: str = "D. A. Steck, Rubidium 85 D Line Data, liquid-phase vapor pressure"
    cell_length_m: float = 0.03
    absorption_scale: float = 1.0
    t_ref_c: float = 91.0
    atomic_loss_ref: float = 0.05
    intrinsic_loss_ref: float = 0.17
    t_cross_c: float = 104.0
    probe_frequency_hz: float = 2e6
    t_min_c: float = 60.0
    t_max_c: float = 120.0

    def __post_init__(self):
        if not 0 < self.atomic_loss_ref <= self.intrinsic_loss_ref < 1:
            raise ValueError("need 0 < atomic_loss_ref <= intrinsic_loss_ref < 1")
        if not self.t_min_c <= self.t_ref_c < self.t_cross_c <= self.t_max_c:
            raise ValueError("need t_min <= t_ref < t_cross <= t_max")
        if not (self.cell_length_m > 0 and self.absorption_scale > 0):
            raise ValueError("cell length and absorption scale must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data) -> TemperatureModel:
        _check_keys(cls, data)
        return cls(**data)

    def _check_range(self, t_c):
        if not self.t_min_c <= t_c <= self.t_max_c:
            raise OutOfModelError(
                f"T={t_c} C outside vapor-pressure range [{self.t_min_c}, {self.t_max_c}]"
            )

    def number_density(self, t_c: float) -> float:
        """Atomic number density in m^-3."""
        self._check_range(t_c)
        t_k = t_c + 273.15
        pressure = 10.0 ** (self.vapor_pressure_a - self.vapor_pressure_b_k / t_k) * TORR
        return pressure / (BOLTZMANN * t_k)

    @property
    def cross_section_m2(self) -> float:
        od_ref = -math.log1p(-self.atomic_loss_ref)
        return self.absorption_scale * od_ref / (self.number_density(self.t_ref_c) * self.cell_length_m)

    def atomic_loss(self, t_c: float) -> float:
        return -math.expm1(-self.cross_section_m2 * self.number_density(t_c) * self.cell_length_m)


def _degraded_eta(tm: TemperatureModel, base: SqueezingModel, extra_loss: float) -> float:
    if base.eta >= 1:
        raise OutOfModelError("base eta=1 implies zero intrinsic loss; cannot anchor")
    li = tm.intrinsic_loss_ref
    lc = base.eta * li / (1.0 - base.eta)
    li_t = li + extra_loss
    if lc + li_t >= 1:
        raise OutOfModelError("temperature-inflated losses exceed unity")
    return lc / (lc + li_t)


def excess_gain(tm: TemperatureModel, base: SqueezingModel) -> float:
    """Excess noise per unit extra atomic loss; puts the shot-noise crossing at ``t_cross_c``."""
    extra = tm.atomic_loss(tm.t_cross_c) - tm.atomic_loss(tm.t_ref_c)
    f = tm.probe_frequency_hz
    eta_c = _degraded_eta(tm, base, extra)
    need = eta_c * _lorentz(f, base.bw_hz) - base.diff_excess * _lorentz(f, base.diff_excess_bw_hz)
    return max(0.0, float(need / (extra * _lorentz(f, base.diff_excess_bw_hz))))


def temperature_degradation(tm: TemperatureModel, base: SqueezingModel, t_c: float) -> SqueezingModel:
    """Noise model at cell temperature ``t_c`` derived from the anchor model."""
    extra = tm.atomic_loss(t_c) - tm.atomic_loss(tm.t_ref_c)
    if extra == 0:
        return base
    eta_t = _degraded_eta(tm, base, extra)
    excess = base.diff_excess + excess_gain(tm, base) * max(extra, 0.0)
    return base.replace(eta=eta_t, diff_excess=excess)
