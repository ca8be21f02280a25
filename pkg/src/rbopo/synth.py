"""Seeded synthetic spectrum-analyzer datasets.

A dataset holds the five raw traces recorded per operating point:
electronic floor, shot noise of the summed and of a single beam, raw
difference noise and raw single-beam noise. Measurement noise is
multiplicative Gaussian with a configurable relative std; RBW/VBW are
carried as metadata only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from rbopo.errors import BelowThresholdError, GenerationError
from rbopo.model import (
    OperatingPoint,
    SqueezingModel,
    difference_spectrum,
    individual_beam_spectrum,
    output_power,
)
from rbopo.units import SpectrumTrace, atomic_write_text

RAW_KINDS = ("electronic", "shot_sum", "shot_single", "diff_raw", "single_beam")
MAX_REDRAWS = 100
# slope giving 12 mW per beam at sigma=1.8 with a 159 mW threshold
DEFAULT_OUTPUT_SLOPE = 0.024 / (0.8 * 0.159)
MIN_BEAM_POWER_W = 1e-4


@dataclass(frozen=True)
class SynthConfig:
    model: SqueezingModel = field(default_factory=SqueezingModel)
    op: OperatingPoint = field(default_factory=lambda: OperatingPoint.from_sigma(1.8, 0.159))
    f_start_hz: float = 0.5e6
    f_stop_hz: float = 22e6
    n_points: int = 431
    rbw_hz: float = 100e3
    vbw_hz: float = 1e3
    electronic_floor: float = 0.1
    shot_level_per_watt: float = 1.0
    relative_noise_std: float = 0.05
    seed: int = 0
    output_slope: float = DEFAULT_OUTPUT_SLOPE

    def __post_init__(self):
        if not 0 <= self.f_start_hz < self.f_stop_hz:
            raise ValueError("need 0 <= f_start < f_stop")
        if self.n_points < 2:
            raise ValueError("need at least two grid points")
        if not 0 < self.electronic_floor < 1:
            raise ValueError("electronic_floor must lie in (0, 1)")
        if not self.relative_noise_std >= 0:
            raise ValueError("relative_noise_std must be >= 0")
        if not (self.shot_level_per_watt > 0 and self.output_slope > 0):
            raise ValueError("shot_level_per_watt and output_slope must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def freqs(self) -> np.ndarray:
        return np.linspace(self.f_start_hz, self.f_stop_hz, self.n_points)

    @property
    def beam_power_w(self) -> float:
        """Power per beam; floored so an at-threshold point still has a shot level."""
        total = output_power(self.op, slope=self.output_slope)
        return max(total / 2.0, MIN_BEAM_POWER_W)

    def replace(self, **changes) -> SynthConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        synth = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("model", "op")}
        return {"model": self.model.to_dict(), "operating_point": self.op.to_dict(), "synth": synth}

    @classmethod
    def from_dict(cls, data) -> SynthConfig:
        synth = dict(data.get("synth", {}))
        return cls(
            model=SqueezingModel.from_dict(data.get("model", {})),
            op=OperatingPoint.from_dict(data["operating_point"]),
            **synth,
        )


@dataclass(frozen=True)
class RawDataset:
    traces: dict
    ground_truth: SynthConfig

    def __getitem__(self, kind) -> SpectrumTrace:
        return self.traces[kind]

    def write(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for kind, trace in self.traces.items():
            trace.write_csv(directory / f"{kind}.csv")
        atomic_write_text(directory / "ground_truth.json", dump_json(self.ground_truth.to_dict()))
        return directory


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def expected_traces(cfg: SynthConfig) -> dict:
    """Noiseless analyzer levels per trace kind.

    Every recorded trace sits on top of the electronic floor, shot-noise
    references included.
    """
    f = cfg.freqs
    pump = cfg.op.pump_power_w
    shot_single = np.full_like(f, cfg.shot_level_per_watt * cfg.beam_power_w)
    shot_sum = 2.0 * shot_single
    electronic = cfg.electronic_floor * shot_single
    s_diff = difference_spectrum(cfg.model, f, pump)
    positive = f > 0
    s_ind = np.empty_like(f)
    # the single-beam divergence is undefined at f = 0; hold the first finite value
    s_ind[positive] = individual_beam_spectrum(cfg.model, f[positive], pump)
    if not positive.all():
        s_ind[~positive] = s_ind[positive][0]
    return {
        "electronic": electronic,
        "shot_sum": electronic + shot_sum,
        "shot_single": electronic + shot_single,
        "diff_raw": electronic + shot_sum * s_diff,
        "single_beam": electronic + shot_single * s_ind,
    }


def _noisy(expected, std, rng, kind):
    if np.any(expected <= 0):
        raise GenerationError(f"{kind}: expected level must be positive")
    if std == 0:
        return expected.copy()
    values = expected * (1.0 + std * rng.standard_normal(expected.shape))
    for _ in range(MAX_REDRAWS):
        bad = values <= 0
        if not bad.any():
            return values
        values[bad] = expected[bad] * (1.0 + std * rng.standard_normal(int(bad.sum())))
    raise GenerationError(f"{kind}: non-positive values persist after {MAX_REDRAWS} redraws")


def generate_dataset(cfg: SynthConfig) -> RawDataset:
    """Draw one raw dataset; bit-reproducible for a given seed."""
    rng = np.random.default_rng(cfg.seed)
    expected = expected_traces(cfg)
    traces = {}
    for kind in RAW_KINDS:
        values = _noisy(expected[kind], cfg.relative_noise_std, rng, kind)
        traces[kind] = SpectrumTrace(cfg.freqs, values, kind, cfg.rbw_hz, cfg.vbw_hz, label=kind)
    return RawDataset(traces, cfg)


def child_seeds(seed: int, n: int) -> list[int]:
    """Independent 64-bit seeds derived from ``seed``."""
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def shot_linearity_series(cfg: SynthConfig, powers) -> list[SpectrumTrace]:
    """Shot-noise traces of an attenuated reference beam, one per power."""
    powers = [float(p) for p in powers]
    if len(powers) < 3 or min(powers) <= 0:
        raise ValueError("need at least three positive reference powers")
    out = []
    for p, seed in zip(powers, child_seeds(cfg.seed, len(powers))):
        expected = np.full(cfg.n_points, cfg.shot_level_per_watt * p)
        values = _noisy(expected, cfg.relative_noise_std, np.random.default_rng(seed), "shot_single")
        out.append(
            SpectrumTrace(cfg.freqs, values, "shot_single", cfg.rbw_hz, cfg.vbw_hz, label=f"reference P={p!r} W")
        )
    return out


def sigma_series(base: SynthConfig, pump_powers) -> list[RawDataset]:
    """Datasets differing only in pump power (and seed)."""
    pump_powers = [float(p) for p in pump_powers]
    p_th = base.op.threshold_power_w
    low = [p for p in pump_powers if p < p_th]
    if low:
        raise BelowThresholdError(f"pump powers below threshold {p_th} W: {low}")
    datasets = []
    for p, seed in zip(pump_powers, child_seeds(base.seed, len(pump_powers))):
        op = replace(base.op, pump_power_w=p)
        datasets.append(generate_dataset(base.replace(op=op, seed=seed)))
    return datasets


def read_dataset(directory) -> tuple[dict, SynthConfig | None]:
    """Load whatever raw traces a dataset directory holds, plus its ground truth if present."""
    directory = Path(directory)
    traces = {}
    for kind in RAW_KINDS + ("sum_raw",):
        path = directory / f"{kind}.csv"
        if path.exists():
            traces[kind] = SpectrumTrace.read_csv(path)
    gt_path = directory / "ground_truth.json"
    gt = SynthConfig.from_dict(json.loads(gt_path.read_text())) if gt_path.exists() else None
    return traces, gt



def threshold_curve(p_th_w: float, slope: float, pumps, noise_w: float, seed: int) -> np.ndarray:
    """Noisy (pump, output) pairs following ``max(0, slope*(P - P_th))``.

    Noise is additive Gaussian in watts; it is not clipped, so points below
    threshold scatter around zero as a detector offset would.
    """
    if not (p_th_w > 0 and slope > 0 and noise_w >= 0):
        raise ValueError("need p_th > 0, slope > 0 and noise >= 0")
    pumps = np.asarray(pumps, dtype=float)
    out = np.maximum(0.0, slope * (pumps - p_th_w))
    out = out + noise_w * np.random.default_rng(seed).standard_normal(pumps.shape)
    return np.column_stack([pumps, out])
