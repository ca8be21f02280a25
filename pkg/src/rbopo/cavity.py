"""Ring-cavity figures of merit and Kerr-shifted resonance scans.

The atom-cavity nonlinearity is folded into one phenomenological Kerr
parameter ``beta``: a normalized intracavity intensity ``y`` shifts the
half-linewidth-normalized detuning by ``beta * y``. Steady states then obey

    y * (1 + (delta - beta * y)**2) = x

with ``x`` the normalized drive. Large ``beta * x`` gives the hysteretic
scans seen at high finesse; small values give a single-valued but tilted
resonance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from rbopo.errors import NumericalError, OutOfModelError
from rbopo.units import format_csv

SPEED_OF_LIGHT = 299_792_458.0  # m/s
SMALL_LOSS_LIMIT = 0.65


@dataclass(frozen=True)
class LossBudget:
    """Round-trip losses: output coupler ``lc`` and intrinsic ``li`` (fractions)."""

    lc: float
    li: float = 0.0

    def __post_init__(self):
        if not self.lc > 0:
            raise ValueError("output coupler loss must be > 0")
        if not self.li >= 0:
            raise ValueError("intrinsic loss must be >= 0")
        if not self.lc + self.li < 1:
            raise ValueError("total round-trip loss must be < 1")

    @property
    def total(self) -> float:
        return self.lc + self.li


@dataclass(frozen=True)
class CavityGeometry:
    round_trip_length_m: float
    twin_separation_hz: float = 6.070e9

    def __post_init__(self):
        if not self.round_trip_length_m > 0:
            raise ValueError("round-trip length must be > 0")
        if not self.twin_separation_hz > 0:
            raise ValueError("twin separation must be > 0")


@dataclass(frozen=True)
class CavityParams:
    fsr_hz: float
    finesse: float
    escape_efficiency: float = 1.0

    def __post_init__(self):
        if not (self.fsr_hz > 0 and self.finesse > 0):
            raise ValueError("fsr and finesse must be positive")
        if not 0 < self.escape_efficiency <= 1:
            raise ValueError("escape efficiency must lie in (0, 1]")

    @property
    def bandwidth_hz(self) -> float:
        return cavity_bandwidth(self.fsr_hz, self.finesse)

    @classmethod
    def from_losses(cls, fsr_hz: float, losses: LossBudget) -> CavityParams:
        return cls(fsr_hz, finesse_from_losses(losses), escape_efficiency(losses))


def fsr_from_length(geometry: CavityGeometry) -> float:
    """Free spectral range ``c / L`` of a ring cavity with round-trip length ``L``."""
    return SPEED_OF_LIGHT / geometry.round_trip_length_m


def length_from_fsr(fsr_hz: float) -> float:
    if not fsr_hz > 0:
        raise ValueError("fsr must be > 0")
    return SPEED_OF_LIGHT / fsr_hz


def finesse_from_losses(losses: LossBudget) -> float:
    """Small-loss finesse ``2*pi / (Lc + Li)``.

    Only total losses below 0.65 are accepted (F > 9.7); the approximation error
    grows quickly beyond that.
    """
    total = losses.total
    if not 0 < total < SMALL_LOSS_LIMIT:
        raise OutOfModelError(
            f"total loss {total:.3g} outside small-loss regime (0, {SMALL_LOSS_LIMIT})"
        )
    return 2 * math.pi / total


def cavity_bandwidth(fsr_hz: float, finesse: float) -> float:
    """Cavity linewidth (FWHM) in Hz."""
    if not (fsr_hz > 0 and finesse > 0):
        raise ValueError("fsr and finesse must be positive")
    return fsr_hz / finesse


def escape_efficiency(losses: LossBudget) -> float:
    return losses.lc / (losses.lc + losses.li)


def commensurability(geometry: CavityGeometry, fsr_hz: float) -> tuple[int, float]:
    """Nearest FSR multiple of the twin separation and the mismatch in FSR units."""
    if not fsr_hz > 0:
        raise ValueError("fsr must be > 0")
    ratio = geometry.twin_separation_hz / fsr_hz
    n = int(round(ratio))
    return n, abs(ratio - n)


# -- Kerr bistability ----------------------------------------------------------

@dataclass(frozen=True)
class KerrScanConfig:
    """Cavity-length scan of a driven Kerr resonator.

    ``detunings`` are in units of the cavity half linewidth and must be
    ordered according to ``direction`` (ascending for ``"up"``).
    ``output_coupling`` converts intracavity intensity to output.
    """

    kerr_parameter: float
    drive: float
    detunings: tuple = ()
    direction: str = "up"
    output_coupling: float = 1.0

    def __post_init__(self):
        if not self.kerr_parameter >= 0:
            raise ValueError("kerr_parameter must be >= 0")
        if not self.drive >= 0:
            raise ValueError("drive must be >= 0")
        if self.direction not in ("up", "down"):
            raise ValueError("direction must be 'up' or 'down'")
        object.__setattr__(self, "detunings", tuple(float(d) for d in self.detunings))

    def reversed(self) -> KerrScanConfig:
        return KerrScanConfig(
            self.kerr_parameter,
            self.drive,
            self.detunings[::-1],
            "down" if self.direction == "up" else "up",
            self.output_coupling,
        )


class SteadyState(NamedTuple):
    intensity: float
    stable: bool


def _polish(coeffs, u, iters=60):
    b, c, d = coeffs
    for _ in range(iters):
        f = ((u + b) * u + c) * u + d
        fp = (3 * u + 2 * b) * u + c
        if fp == 0:
            break
        step = f / fp
        u -= step
        if abs(step) <= 1e-13 * max(1.0, abs(u)):
            break
    return u


def _monic_cubic_real_roots(b: float, c: float, d: float) -> list[float]:
    """Real roots of ``u^3 + b u^2 + c u + d``, ascending.

    One root comes from the closed form (trigonometric or Cardano), is
    Newton-polished, and deflates the cubic to a quadratic solved in the
    cancellation-free form. All roots get a final polish.
    """
    shift = b / 3.0
    p = c - b * b / 3.0
    q = 2.0 * b**3 / 27.0 - b * c / 3.0 + d
    disc = -(4.0 * p**3 + 27.0 * q * q)
    if disc > 0 and p < 0:
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = 3.0 * q / (p * m)
        theta = math.acos(max(-1.0, min(1.0, arg)))
        t = m * math.cos(theta / 3.0)  # largest root
    else:
        s = math.sqrt(max(q * q / 4.0 + p**3 / 27.0, 0.0))
        t = float(np.cbrt(-q / 2.0 + s) + np.cbrt(-q / 2.0 - s))
    r1 = _polish((b, c, d), t - shift)

    # deflate: u^3 + b u^2 + c u + d = (u - r1)(u^2 + e u + g)
    e = b + r1
    g = c + e * r1
    qd = e * e - 4.0 * g
    roots = [r1]
    if qd >= 0:
        sq = math.sqrt(qd)
        k = -0.5 * (e + math.copysign(sq, e))
        if k != 0:
            roots += [k, g / k]
        else:
            roots += [0.0, 0.0]
    roots = sorted(_polish((b, c, d), r) for r in roots)

    scale = max(1.0, abs(b), abs(c), abs(d))
    for r in roots:
        val = ((r + b) * r + c) * r + d
        rscale = max(scale, abs(r) ** 3)
        if not math.isfinite(val) or abs(val) > 1e-8 * rscale:
            raise NumericalError(
                "cubic root polish did not converge",
                {"coeffs": (1.0, b, c, d), "root": r, "residual": val},
            )
    return roots


def _polish_intensity(beta, x, delta, y, iters=60):
    # Newton on y*(1+(delta-beta*y)^2) = x with a relative stop; the u-space
    # polish is only absolutely accurate, which is useless once beta*x is tiny
    for _ in range(iters):
        ph = delta - beta * y
        g = y * (1.0 + ph * ph) - x
        gp = 1.0 + ph * ph - 2.0 * beta * y * ph
        if gp == 0 or g == 0:
            break
        new = y - g / gp
        if new < 0:
            break
        done = abs(new - y) <= 1e-15 * abs(new)
        y = new
        if done:
            break
    return y


def kerr_cubic_coefficients(beta: float, drive: float, delta: float) -> tuple[float, float, float, float]:
    """Coefficients (highest power first) of the steady-state cubic in ``y``."""
    return (beta * beta, -2.0 * beta * delta, 1.0 + delta * delta, -drive)


def cubic_discriminant(a: float, b: float, c: float, d: float) -> float:
    return 18 * a * b * c * d - 4 * b**3 * d + b * b * c * c - 4 * a * c**3 - 27 * a * a * d * d


def kerr_steady_states(config: KerrScanConfig, delta: float) -> list[SteadyState]:
    """Non-negative intracavity intensities at detuning ``delta``.

    One or three states, ascending; with three, the middle one is unstable.
    """
    beta, x = config.kerr_parameter, config.drive
    if beta == 0 or x == 0:
        return [SteadyState(x / (1.0 + delta * delta), True)]
    # solve in the phase variable u = beta*y to keep coefficients O(1)
    drive_phase = beta * x
    us = _monic_cubic_real_roots(-2.0 * delta, 1.0 + delta * delta, -drive_phase)
    ys = [max(u, 0.0) / beta for u in us]
    if drive_phase < 1e-3:
        # far below the bistable regime (beta*x >= 0.77): one root only
        ys = [_polish_intensity(beta, x, delta, y) for y in ys]
    if len(ys) == 3:
        return [SteadyState(ys[0], True), SteadyState(ys[1], False), SteadyState(ys[2], True)]
    return [SteadyState(ys[0], True)]


class ScanTrace(NamedTuple):
    detuning: np.ndarray
    output: np.ndarray


def scan_trace(config: KerrScanConfig) -> ScanTrace:
    """Sweep the detuning, following the occupied stable branch.

    Starting from the lowest state, each step takes the stable state closest
    to the previous intensity; when the branch disappears this is a jump to
    the nearest surviving branch.
    """
    deltas = np.asarray(config.detunings, dtype=float)
    steps = np.diff(deltas)
    if config.direction == "up" and np.any(steps < 0):
        raise ValueError("up-scan detunings must be ascending")
    if config.direction == "down" and np.any(steps > 0):
        raise ValueError("down-scan detunings must be descending")
    out = np.empty(len(deltas))
    prev = None
    for i, delta in enumerate(deltas):
        stable = [s.intensity for s in kerr_steady_states(config, delta) if s.stable]
        if prev is None:
            y = stable[0]
        else:
            y = min(stable, key=lambda v: abs(v - prev))
        out[i] = y * config.output_coupling
        prev = y
    return ScanTrace(deltas, out)


def hysteresis_area(up: ScanTrace, down: ScanTrace) -> float:
    """Area between up- and down-scan outputs over the common detuning grid."""
    order = np.argsort(down.detuning)
    d_det, d_out = down.detuning[order], down.output[order]
    if not np.allclose(up.detuning, d_det):
        raise ValueError("scans must cover the same detunings")
    return float(np.trapezoid(np.abs(up.output - d_out), up.detuning))


def bistability_onset_drive(beta: float) -> float:
    """Smallest drive giving three steady states for ``beta > 0``.

    In the phase variable the critical product is ``beta * x = 8 / (3*sqrt(3))``,
    reached at ``delta = sqrt(3)``.
    """
    if not beta > 0:
        return math.inf
    return 8.0 / (3.0 * math.sqrt(3.0)) / beta


def scan_to_csv(config: KerrScanConfig, scan: ScanTrace) -> str:
    """Export a scan in the trace CSV layout.

    The abscissa column holds the half-linewidth-normalized detuning; the
    analyzer fields carry placeholder values of 1.
    """
    label = (
        f"beta={config.kerr_parameter!r};drive={config.drive!r};"
        f"direction={config.direction};abscissa=detuning_hwhm"
    )
    return format_csv("derived", 1.0, 1.0, label, scan.detuning, scan.output)


def detuning_grid(lo: float, hi: float, n: int, direction: str = "up") -> tuple:
    grid = np.linspace(lo, hi, n)
    return tuple(grid if direction == "up" else grid[::-1])


__all__ = [
    "SPEED_OF_LIGHT",
    "LossBudget",
    "CavityGeometry",
    "CavityParams",
    "KerrScanConfig",
    "SteadyState",
    "ScanTrace",
    "fsr_from_length",
    "length_from_fsr",
    "finesse_from_losses",
    "cavity_bandwidth",
    "escape_efficiency",
    "commensurability",
    "kerr_steady_states",
    "scan_trace",
    "hysteresis_area",
    "bistability_onset_drive",
    "scan_to_csv",
    "detuning_grid",
    "kerr_cubic_coefficients",
    "cubic_discriminant",
]
