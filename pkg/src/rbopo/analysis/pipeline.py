"""Directory-level analysis: what ``rbopo analyze`` runs."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rbopo.analysis.fits import (
    _running_mean,
    check_shot_linearity,
    exclusion_mask,
    fit_peak,
    fit_squeezing,
    fit_threshold,
    locate_peak,
    normalize_dataset,
    peak_frequency_vs_power,
    peak_window,
    squeezing_curve,
)
from rbopo.errors import NumericalError
from rbopo.synth import RAW_KINDS, read_dataset
from rbopo.units import SpectrumTrace, atomic_write_text, linear_to_db

DEFAULT_PEAK_WIDTH_HZ = 0.4e6


@dataclass
class AnalysisOptions:
    exclusion_widths: float = 3.0
    baseline: str = "eq1"
    peak_center_hz: float | None = None
    peak_width_hz: float | None = None
    smoothing_hz: float = 0.5e6
    probe_frequency_hz: float = 2e6

    @classmethod
    def from_dict(cls, data) -> AnalysisOptions:
        return cls(**(data or {}))


@dataclass
class AnalysisOutcome:
    report: dict
    files: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def input_digests(directory) -> dict:
    directory = Path(directory)
    return {
        str(p.relative_to(directory)): file_digest(p)
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.suffix in (".csv", ".json") and not p.name.startswith(("report", "normalized", "plot_"))
    }


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_report(obj) -> str:
    return json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n"


def write_rows(path, header, rows) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) for v in row])
    return atomic_write_text(path, buf.getvalue())


def measured_minimum(normalized: SpectrumTrace, smoothing_hz: float, keep=None) -> tuple[float, float]:
    """Lowest value of the running mean over ``smoothing_hz``; returns (freq, value)."""
    df = normalized.freqs[1] - normalized.freqs[0]
    n = max(1, int(round(smoothing_hz / df)))
    keep = np.ones(len(normalized), dtype=bool) if keep is None else keep
    vals = _running_mean(normalized.values, n)
    freqs = _running_mean(normalized.freqs, n)
    ok = _running_mean(keep.astype(float), n) > 1.0 - 1e-9
    vals = np.where(ok, vals, np.inf)
    i = int(np.argmin(vals))
    return float(freqs[i]), float(vals[i])


def value_at(normalized: SpectrumTrace, f_hz: float, smoothing_hz: float) -> float:
    df = normalized.freqs[1] - normalized.freqs[0]
    n = max(1, int(round(smoothing_hz / df)))
    vals = _running_mean(normalized.values, n)
    freqs = _running_mean(normalized.freqs, n)
    return float(vals[int(np.argmin(np.abs(freqs - f_hz)))])


def _peak_geometry(gt, opts: AnalysisOptions, normalized):
    width = opts.peak_width_hz
    if width is None:
        width = gt.model.peak_width_hz if gt is not None and gt.model.peak_width_hz > 0 else DEFAULT_PEAK_WIDTH_HZ
    center = opts.peak_center_hz
    source = "option"
    if center is None and gt is not None and gt.model.peak_height > 0:
        center = gt.model.peak_slope_hz_per_w * gt.op.pump_power_w
        source = "ground_truth"
    if center is None:
        center = locate_peak(normalized, exclude_below_hz=3 * width)
        source = "located"
    return center, width, source


def analyze_single(directory, opts: AnalysisOptions, outcome: AnalysisOutcome, write=True, prefix="") -> dict:
    """Normalize one raw dataset and fit squeezing and narrow peak."""
    directory = Path(directory)
    traces, gt = read_dataset(directory)
    missing = [k for k in RAW_KINDS if k not in traces]
    section = {"missing_traces": missing}
    if missing:
        outcome.warnings.append(f"{prefix}missing traces: {', '.join(missing)}")
    if "electronic" in missing:
        outcome.warnings.append(f"{prefix}no electronic trace; normalizing against raw shot noise")
    normalized = normalize_dataset(traces)
    if "diff" not in normalized:
        outcome.errors.append(f"{prefix}cannot normalize difference noise (need diff_raw and shot_sum)")
        return section
    diff = normalized["diff"]
    section["flags"] = list(diff.flags)
    if write:
        diff.write_csv(directory / "normalized_diff.csv")
        outcome.files[f"{prefix}normalized_diff"] = str(directory / "normalized_diff.csv")
        if "single" in normalized:
            normalized["single"].write_csv(directory / "normalized_single.csv")
            outcome.files[f"{prefix}normalized_single"] = str(directory / "normalized_single.csv")

    center, width, source = _peak_geometry(gt, opts, diff)
    window = peak_window(center, width, opts.exclusion_widths)
    keep = exclusion_mask(diff.freqs, [window])
    f_min, s_min = measured_minimum(diff, opts.smoothing_hz, keep)
    section["measured_minimum"] = {
        "frequency_hz": f_min,
        "relative_noise": s_min,
        "db": linear_to_db(s_min) if s_min > 0 else None,
        "smoothing_hz": opts.smoothing_hz,
    }
    s_probe = value_at(diff, opts.probe_frequency_hz, opts.smoothing_hz)
    section["at_probe"] = {
        "frequency_hz": opts.probe_frequency_hz,
        "relative_noise": s_probe,
        "db": linear_to_db(s_probe) if s_probe > 0 else None,
    }

    try:
        sq = fit_squeezing(diff, [window])
        section["squeezing_fit"] = sq.to_dict()
        if sq.flagged:
            bound = "soft bounds [0, 1.2]" if sq.outside_soft_bounds else "[0, 1]"
            outcome.warnings.append(f"{prefix}fitted squeezing depth outside {bound} (eta={sq.eta:.3g})")
        if write:
            rows = zip(diff.freqs, diff.values, squeezing_curve(diff.freqs, sq.eta, sq.bw_hz))
            write_rows(directory / "plot_squeezing.csv", ["freq_hz", "normalized", "fit"], rows)
            outcome.files[f"{prefix}plot_squeezing"] = str(directory / "plot_squeezing.csv")
        if gt is not None:
            truth_eta = gt.model.effective_eta
            section["ground_truth"] = {"eta_eff": truth_eta, "bw_hz": gt.model.bw_hz}
            section["bw_relative_error"] = sq.bw_hz / gt.model.bw_hz - 1.0
            section["eta_relative_error"] = sq.eta / truth_eta - 1.0 if truth_eta else None
    except NumericalError as exc:
        outcome.errors.append(f"{prefix}squeezing fit failed: {exc}")

    try:
        pk = fit_peak(diff, window, baseline=opts.baseline)
        section["peak_fit"] = pk.to_dict()
        section["peak_window_hz"] = list(window)
        section["peak_window_source"] = source
        if not pk.found:
            outcome.warnings.append(f"{prefix}no narrow peak found ({pk.reason})")
    except (NumericalError, ValueError) as exc:
        outcome.errors.append(f"{prefix}peak fit failed: {exc}")
        pk = None
    section["_peak"] = pk
    section["_window"] = window
    section["_diff"] = diff
    section["_gt"] = gt
    return section


def _strip_private(section: dict) -> dict:
    return {k: v for k, v in section.items() if not k.startswith("_")}


def analyze_series(series_dir, opts, outcome, write=True) -> dict:
    meta = json.loads((Path(series_dir) / "series.json").read_text())
    points, spectra, windows, per = [], [], [], []
    for entry in meta["datasets"]:
        sub = Path(series_dir) / entry["dir"]
        sec = analyze_single(sub, opts, outcome, write=write, prefix=f"series/{entry['dir']}: ")
        per.append({"dir": entry["dir"], "pump_power_w": entry["pump_power_w"], **_strip_private(sec)})
        if sec.get("_peak") is not None:
            points.append((entry["pump_power_w"], sec["_peak"]))
        if "_diff" in sec:
            spectra.append(sec["_diff"].values)
            windows.append(sec["_window"])
    section = {"datasets": per}
    try:
        law = peak_frequency_vs_power(points)
        section["peak_law"] = {
            "proportional": law.proportional.to_dict(),
            "affine": law.affine.to_dict(),
            "slope_mhz_per_w": law.proportional.slope / 1e6,
            "slope_uncertainty_mhz_per_w": law.proportional.slope_uncertainty / 1e6,
        }
        if write:
            rows = [(p, fit.center_hz, fit.center_uncertainty_hz) for p, fit in points if fit.found]
            write_rows(Path(series_dir) / "plot_peak_vs_power.csv", ["pump_w", "center_hz", "center_err_hz"], rows)
            outcome.files["plot_peak_vs_power"] = str(Path(series_dir) / "plot_peak_vs_power.csv")
    except NumericalError as exc:
        outcome.errors.append(f"peak frequency regression failed: {exc}")
    if len(spectra) >= 2:
        grid = sec["_diff"].freqs
        keep = exclusion_mask(grid, windows)
        stack = np.vstack(spectra)[:, keep]
        mean = stack.mean(axis=0)
        section["insensitivity"] = {
            "max_relative_deviation_from_mean": float(np.max(np.abs(stack / mean - 1.0))),
            "points_compared": int(keep.sum()),
        }
    return section


def analyze_linearity(lin_dir, outcome) -> dict:
    meta = json.loads((Path(lin_dir) / "linearity.json").read_text())
    traces = [(e["power_w"], SpectrumTrace.read_csv(Path(lin_dir) / e["file"])) for e in meta["traces"]]
    electronic = None
    if (Path(lin_dir) / "electronic.csv").exists():
        electronic = SpectrumTrace.read_csv(Path(lin_dir) / "electronic.csv")
    rep = check_shot_linearity(traces, electronic)
    if not rep.passed:
        outcome.warnings.append(
            f"shot-noise linearity outside {rep.tolerance:.0%} (worst {rep.max_relative_residual:.2%} "
            f"at {rep.outlier_power_w} W)"
        )
    return rep.to_dict()


def read_points(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array(rows[1:], dtype=float)


def analyze_threshold(thr_dir, outcome) -> dict:
    out = {}
    for path in sorted(Path(thr_dir).glob("*.csv")):
        if path.name.startswith("plot_"):
            continue
        try:
            out[path.stem] = fit_threshold(read_points(path)).to_dict()
        except NumericalError as exc:
            outcome.errors.append(f"threshold fit {path.stem} failed: {exc}")
    truth = Path(thr_dir) / "truth.json"
    if truth.exists():
        known = json.loads(truth.read_text())
        for name, fit in out.items():
            if name in known:
                fit["ground_truth_p_th_w"] = known[name]["p_th_w"]
                fit["deviation_in_sigma"] = (fit["p_th_w"] - known[name]["p_th_w"]) / fit["p_th_uncertainty_w"]
    return out


def analyze_directory(directory, opts: AnalysisOptions | None = None, write: bool = True) -> AnalysisOutcome:
    """Run every analysis the directory's contents allow and build the report."""
    directory = Path(directory)
    opts = opts or AnalysisOptions()
    outcome = AnalysisOutcome(report={})
    rep = outcome.report
    rep["input_digests"] = input_digests(directory)
    found_any = False
    if any((directory / f"{k}.csv").exists() for k in RAW_KINDS):
        found_any = True
        rep["dataset"] = _strip_private(analyze_single(directory, opts, outcome, write=write))
    if (directory / "series" / "series.json").exists():
        found_any = True
        rep["series"] = analyze_series(directory / "series", opts, outcome, write=write)
    if (directory / "linearity" / "linearity.json").exists():
        found_any = True
        rep["shot_linearity"] = analyze_linearity(directory / "linearity", outcome)
    if (directory / "threshold").is_dir():
        found_any = True
        rep["threshold"] = analyze_threshold(directory / "threshold", outcome)
    if not found_any:
        outcome.errors.append(f"no analyzable data in {directory}")
    rep["warnings"] = outcome.warnings
    rep["errors"] = outcome.errors
    return outcome
