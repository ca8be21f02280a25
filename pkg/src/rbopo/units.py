"""Power/dB conversions and the spectrum-trace container.

Powers are stored linearly everywhere; decibels appear only at
presentation boundaries. Spectrum-analyzer values are assumed to be
linear (W or any analyzer-referenced linear unit) before processing.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rbopo.errors import AlignmentError, DegenerateDenominatorError, MetadataError

TRACE_KINDS = (
    "electronic",
    "shot_sum",
    "shot_single",
    "diff_raw",
    "sum_raw",
    "single_beam",
    "normalized",
    "derived",
)

GRID_RTOL = 1e-9
NEGATIVE_FRACTION_WARN = 0.05


def db_to_linear(x):
    """Convert decibels to a linear power ratio, ``10**(x/10)``."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("db_to_linear: non-finite input")
    out = np.power(10.0, arr / 10.0)
    return float(out) if out.ndim == 0 else out


def linear_to_db(r):
    """Convert a positive linear power ratio to decibels."""
    arr = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError("linear_to_db: ratio must be finite and > 0")
    out = 10.0 * np.log10(arr)
    return float(out) if out.ndim == 0 else out


def _frozen(a):
    arr = np.array(a, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SpectrumTrace:
    """Uniform frequency grid with one power (or relative noise) value per point.

    Attributes:
        freqs: analysis frequencies in Hz, strictly increasing and uniform.
        values: linear powers, or dimensionless noise for ``kind="normalized"``.
        kind: one of :data:`TRACE_KINDS`.
        rbw: resolution bandwidth in Hz.
        vbw: video bandwidth in Hz.
        label: free text, must not contain newlines.
    """

    freqs: np.ndarray
    values: np.ndarray
    kind: str
    rbw: float = 100e3
    vbw: float = 1e3
    label: str = ""
    flags: tuple = field(default=(), compare=False)

    def __post_init__(self):
        freqs = _frozen(self.freqs)
        values = _frozen(self.values)
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "values", values)
        if freqs.ndim != 1 or values.ndim != 1:
            raise ValueError("freqs and values must be 1-D")
        if len(freqs) != len(values):
            raise ValueError(f"length mismatch: {len(freqs)} freqs vs {len(values)} values")
        if len(freqs) < 2:
            raise ValueError("a trace needs at least two points")
        if not np.all(np.isfinite(freqs)) or np.any(freqs < 0):
            raise ValueError("frequencies must be finite and non-negative")
        steps = np.diff(freqs)
        if np.any(steps <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-6, atol=0):
            raise ValueError("frequency grid must be uniform")
        if self.kind not in TRACE_KINDS:
            raise ValueError(f"unknown trace kind {self.kind!r}")
        if not (self.rbw > 0 and self.vbw > 0):
            raise ValueError("rbw and vbw must be positive")
        if "\n" in self.label or "\r" in self.label:
            raise ValueError("label must be a single line")

    def __len__(self):
        return len(self.freqs)

    def __eq__(self, other):
        # exact equality of grid, values and metadata; flags are annotations only
        if not isinstance(other, SpectrumTrace):
            return NotImplemented
        return (
            (self.kind, self.rbw, self.vbw, self.label) == (other.kind, other.rbw, other.vbw, other.label)
            and np.array_equal(self.freqs, other.freqs)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def replace(self, **changes) -> SpectrumTrace:
        kwargs = dict(
            freqs=self.freqs,
            values=self.values,
            kind=self.kind,
            rbw=self.rbw,
            vbw=self.vbw,
            label=self.label,
            flags=self.flags,
        )
        kwargs.update(changes)
        return SpectrumTrace(**kwargs)

    def scaled(self, factor: float) -> SpectrumTrace:
        return self.replace(values=self.values * factor)

    def band_mean(self, f_lo=None, f_hi=None) -> float:
        """Mean value over ``f_lo <= f <= f_hi`` (whole trace by default)."""
        mask = np.ones(len(self), dtype=bool)
        if f_lo is not None:
            mask &= self.freqs >= f_lo
        if f_hi is not None:
            mask &= self.freqs <= f_hi
        if not mask.any():
            raise ValueError("empty frequency band")
        return float(np.mean(self.values[mask]))

    def in_db(self) -> np.ndarray:
        return linear_to_db(self.values)

    # -- CSV --------------------------------------------------------------
    def to_csv(self) -> str:
        return format_csv(self.kind, self.rbw, self.vbw, self.label, self.freqs, self.values)

    def write_csv(self, path) -> Path:
        return atomic_write_text(path, self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> SpectrumTrace:
        meta, x, y = parse_csv(text)
        return cls(x, y, meta["kind"], meta["rbw_hz"], meta["vbw_hz"], meta["label"])

    @classmethod
    def read_csv(cls, path) -> SpectrumTrace:
        return cls.from_csv(Path(path).read_text(encoding="ascii"))


def _num(v: float) -> str:
    # repr is the shortest string that round-trips exactly
    return repr(float(v))


def format_csv(kind, rbw, vbw, label, x, y) -> str:
    """Render the trace CSV format.

    Layout: one ``# kind=... rbw_hz=... vbw_hz=... label=...`` header,
    a ``freq_hz,power`` column line, then one ``x,y`` row per point.
    ASCII only, LF line endings.
    """
    lines = [f"# kind={kind} rbw_hz={_num(rbw)} vbw_hz={_num(vbw)} label={label}", "freq_hz,power"]
    lines.extend(f"{_num(a)},{_num(b)}" for a, b in zip(x, y))
    text = "\n".join(lines) + "\n"
    text.encode("ascii")  # raises on non-ASCII labels
    return text


def parse_csv(text: str):
    lines = text.split("\n")
    header = lines[0]
    if not header.startswith("# "):
        raise ValueError("missing trace header line")
    body = header[2:]
    label_at = body.find("label=")
    if label_at < 0:
        raise ValueError("header has no label field")
    meta = {"label": body[label_at + len("label="):]}
    for token in body[:label_at].split():
        key, _, val = token.partition("=")
        meta[key] = val
    for key in ("kind", "rbw_hz", "vbw_hz"):
        if key not in meta:
            raise ValueError(f"header missing {key}")
    meta["rbw_hz"] = float(meta["rbw_hz"])
    meta["vbw_hz"] = float(meta["vbw_hz"])
    if lines[1].strip() != "freq_hz,power":
        raise ValueError("missing freq_hz,power column line")
    rows = [ln.split(",") for ln in lines[2:] if ln.strip()]
    data = np.array(rows, dtype=float)
    return meta, data[:, 0], data[:, 1]


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)
    tmp.replace(path)
    return path


# -- aligned arithmetic -----------------------------------------------------

def check_aligned(a: SpectrumTrace, b: SpectrumTrace) -> None:
    if len(a) != len(b):
        raise AlignmentError(f"grid length mismatch ({len(a)} vs {len(b)})")
    scale = max(abs(a.freqs[-1]), abs(b.freqs[-1]), 1.0)
    if np.max(np.abs(a.freqs - b.freqs)) > GRID_RTOL * scale:
        raise AlignmentError("frequency grids differ")
    if not (math.isclose(a.rbw, b.rbw, rel_tol=1e-12) and math.isclose(a.vbw, b.vbw, rel_tol=1e-12)):
        raise MetadataError(
            f"analyzer settings differ (rbw {a.rbw} vs {b.rbw}, vbw {a.vbw} vs {b.vbw})"
        )


def trace_subtract(a: SpectrumTrace, b: SpectrumTrace) -> SpectrumTrace:
    """Point-wise ``a - b`` in linear power.

    Negative results are kept unclamped; a warning is emitted when more than
    5% of the points go negative.
    """
    check_aligned(a, b)
    values = a.values - b.values
    neg = float(np.mean(values < 0))
    if neg > NEGATIVE_FRACTION_WARN:
        warnings.warn(
            f"{neg:.1%} of points negative after subtracting {b.kind} from {a.kind}",
            RuntimeWarning,
            stacklevel=2,
        )
    label = f"{a.label or a.kind} - {b.label or b.kind}"
    return a.replace(values=values, kind="derived", label=label)


def trace_divide(num: SpectrumTrace, den: SpectrumTrace) -> SpectrumTrace:
    """Point-wise ``num / den``; the result is a normalized (dimensionless) trace."""
    check_aligned(num, den)
    bad = ~(den.values > 0)
    if bad.any():
        raise DegenerateDenominatorError(
            f"denominator non-positive at {int(bad.sum())} grid point(s)", num.freqs[bad]
        )
    return num.replace(values=num.values / den.values, kind="normalized")
