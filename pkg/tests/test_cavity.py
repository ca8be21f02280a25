import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbopo.cavity import (
    CavityGeometry,
    CavityParams,
    KerrScanConfig,
    LossBudget,
    bistability_onset_drive,
    cavity_bandwidth,
    commensurability,
    cubic_discriminant,
    detuning_grid,
    escape_efficiency,
    finesse_from_losses,
    fsr_from_length,
    hysteresis_area,
    kerr_cubic_coefficients,
    kerr_steady_states,
    length_from_fsr,
    scan_to_csv,
    scan_trace,
)
from rbopo.errors import OutOfModelError
from rbopo.units import parse_csv

import oracles


class TestGeometry:
    @pytest.mark.parametrize(
        "length, fsr",
        [(0.74206, 404.0e6), (0.299792458, 1.0e9), (1.4841, 202.0e6)],
    )
    def test_fsr_from_length(self, length, fsr):
        assert fsr_from_length(CavityGeometry(length)) == pytest.approx(fsr, rel=2e-5)
        assert fsr_from_length(CavityGeometry(length)) == oracles.C / length

    def test_length_inverse(self):
        assert length_from_fsr(fsr_from_length(CavityGeometry(0.6970))) == pytest.approx(0.6970, rel=1e-15)

    def test_invalid_geometry(self):
        with pytest.raises(ValueError):
            CavityGeometry(0.0)
        with pytest.raises(ValueError):
            CavityGeometry(1.0, twin_separation_hz=0.0)


class TestLosses:
    def test_finesse_values(self):
        assert finesse_from_losses(LossBudget(0.249, 0.17)) == pytest.approx(2 * math.pi / 0.419)
        assert finesse_from_losses(LossBudget(0.249, 0.17)) == pytest.approx(15.0, abs=0.01)
        assert finesse_from_losses(LossBudget(0.4583, 0.17)) == pytest.approx(10.0, abs=1e-3)

    def test_finesse_outside_small_loss_regime(self):
        with pytest.raises(OutOfModelError):
            finesse_from_losses(LossBudget(0.53, 0.17))

    @pytest.mark.parametrize("lc, li", [(0.0, 0.1), (0.5, -0.1), (0.6, 0.4)])
    def test_invalid_budget(self, lc, li):
        with pytest.raises(ValueError):
            LossBudget(lc, li)

    def test_escape_efficiency(self):
        assert escape_efficiency(LossBudget(0.25, 0.17)) == pytest.approx(0.595, abs=5e-4)
        assert escape_efficiency(LossBudget(0.25, 0.0)) == 1.0
        assert escape_efficiency(LossBudget(1e-9, 0.17)) < 1e-8

    @given(st.floats(0.01, 0.4), st.floats(1e-3, 0.4), st.floats(1e-4, 0.1))
    def test_escape_efficiency_monotone(self, lc, li, d):
        base = escape_efficiency(LossBudget(lc, li))
        assert escape_efficiency(LossBudget(lc + d, li)) > base
        assert escape_efficiency(LossBudget(lc, li + d)) < base


class TestBandwidth:
    @pytest.mark.parametrize("finesse, bw", [(15, 26.93e6), (404, 1.0e6), (10, 40.4e6)])
    def test_values(self, finesse, bw):
        assert cavity_bandwidth(404e6, finesse) == pytest.approx(bw, rel=2e-4)

    def test_measured_linewidth_within_1mhz(self):
        assert abs(cavity_bandwidth(404e6, 15) - 26e6) < 1e6

    @given(st.floats(1e6, 1e10), st.floats(1.0, 1e4))
    def test_bandwidth_times_finesse_is_fsr(self, fsr, finesse):
        p = CavityParams(fsr, finesse)
        assert p.bandwidth_hz * p.finesse == pytest.approx(fsr, rel=1e-15)

    def test_params_from_losses(self):
        p = CavityParams.from_losses(404e6, LossBudget(0.249, 0.17))
        assert p.escape_efficiency == pytest.approx(0.249 / 0.419)
        assert p.bandwidth_hz == pytest.approx(404e6 * 0.419 / (2 * math.pi))


class TestCommensurability:
    def test_design_point(self):
        n, r = commensurability(CavityGeometry(0.74, 6.070e9), 404e6)
        assert n == 15
        assert r == pytest.approx(6070 / 404 - 15, abs=1e-12)
        assert r < 0.03

    def test_exact(self):
        assert commensurability(CavityGeometry(0.05, 6.070e9), 6.070e9) == (1, 0.0)

    def test_geometric_length_fails(self):
        n, r = commensurability(CavityGeometry(0.6970, 6.070e9), 430e6)
        assert n == 14
        assert r == pytest.approx(0.116, abs=1e-3)


# -- Kerr ---------------------------------------------------------------------------------


def states(beta, x, delta):
    return kerr_steady_states(KerrScanConfig(beta, x), delta)


class TestKerrSteadyStates:
    @given(st.floats(0.0, 5.0), st.floats(-20.0, 20.0))
    def test_linear_cavity_closed_form(self, x, delta):
        (s,) = states(0.0, x, delta)
        assert s.stable
        assert s.intensity == pytest.approx(x / (1 + delta**2), rel=1e-12, abs=0)

    def test_zero_drive(self):
        assert [s.intensity for s in states(2.0, 0.0, 1.0)] == [0.0]

    def test_roots_satisfy_cubic(self):
        for s in states(4.0, 1.0, 3.0):
            assert abs(oracles.kerr_residual(4.0, 1.0, 3.0, s.intensity)) < 1e-10

    def test_three_roots_middle_unstable(self):
        st_ = states(4.0, 1.0, 3.0)
        assert len(st_) == 3
        assert [s.stable for s in st_] == [True, False, True]
        ys = [s.intensity for s in st_]
        assert ys == sorted(ys)

    def test_small_drive_single_root_everywhere(self):
        beta = 1.0
        x = 0.9 * bistability_onset_drive(beta)
        for delta in np.linspace(-5, 10, 301):
            assert len(states(beta, x, delta)) == 1
            assert oracles.kerr_root_count(beta, x, delta, n=20_001) == 1

    def test_onset_threshold(self):
        beta = 2.0
        x_c = bistability_onset_drive(beta)
        assert x_c == pytest.approx(8 / (3 * math.sqrt(3)) / beta)
        below = [len(states(beta, 0.99 * x_c, d)) for d in np.linspace(0, 4, 401)]
        above = [len(states(beta, 1.05 * x_c, d)) for d in np.linspace(0, 4, 401)]
        assert max(below) == 1
        assert max(above) == 3
        assert bistability_onset_drive(0.0) == math.inf

    def test_three_roots_iff_discriminant_positive(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            beta, x, delta = rng.uniform(0.5, 5), rng.uniform(0.1, 3), rng.uniform(-2, 8)
            disc = cubic_discriminant(*kerr_cubic_coefficients(beta, x, delta))
            if abs(disc) < 1e-9:
                continue
            assert (len(states(beta, x, delta)) == 3) == (disc > 0)

    def test_peak_shift_grows_with_beta(self):
        grid = np.linspace(-3, 10, 2601)
        shifts = []
        for beta in (0.0, 0.3, 0.6, 0.9):
            scan = scan_trace(KerrScanConfig(beta, 1.0, tuple(grid)))
            shifts.append(grid[np.argmax(scan.output)])
        assert shifts[0] == pytest.approx(0.0, abs=1e-9)
        assert all(b > a for a, b in zip(shifts, shifts[1:]))

    def test_root_count_matches_brute_force(self):
        rng = np.random.default_rng(2024)
        mismatches = []
        for _ in range(100):
            beta, x, delta = rng.uniform(0, 5), rng.uniform(0, 3), rng.uniform(-5, 10)
            got = len(states(beta, x, delta))
            want = oracles.kerr_root_count(beta, x, delta)
            if got != want:
                mismatches.append((beta, x, delta, got, want))
        assert mismatches == []

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.0, 10.0), st.floats(0.0, 5.0), st.floats(-10.0, 20.0))
    def test_residual_property(self, beta, x, delta):
        for s in states(beta, x, delta):
            assert s.intensity >= 0
            assert abs(oracles.kerr_residual(beta, x, delta, s.intensity)) <= 1e-9 * max(1.0, x)


class TestScan:
    def test_linear_scan_direction_invariant(self):
        up = KerrScanConfig(0.0, 1.0, detuning_grid(-5, 5, 201))
        a, b = scan_trace(up), scan_trace(up.reversed())
        np.testing.assert_array_equal(a.output, b.output[::-1])
        np.testing.assert_allclose(a.output, 1 / (1 + a.detuning**2), rtol=1e-12)
        assert hysteresis_area(a, b) == 0.0

    def test_moderate_beta_single_valued_asymmetric(self):
        up = KerrScanConfig(0.8, 1.0, detuning_grid(-6, 10, 801))
        a, b = scan_trace(up), scan_trace(up.reversed())
        np.testing.assert_allclose(a.output, b.output[::-1], rtol=1e-12)
        d_peak = a.detuning[np.argmax(a.output)]
        assert d_peak > 0.5
        # tilted: slow rise from below, steep fall after the peak
        half = a.detuning[a.output >= a.output.max() / 2]
        assert (d_peak - half[0]) > 1.5 * (half[-1] - d_peak)

    def test_large_beta_hysteresis(self):
        up = KerrScanConfig(3.7, 1.0, detuning_grid(-6, 10, 801))
        a, b = scan_trace(up), scan_trace(up.reversed())
        assert hysteresis_area(a, b) > 0.1
        # the up-scan rides the upper branch to a cliff
        jump = np.max(np.abs(np.diff(a.output)))
        assert jump > 0.3

    def test_scan_order_validated(self):
        with pytest.raises(ValueError):
            scan_trace(KerrScanConfig(1.0, 1.0, (0.0, 1.0, 0.5)))
        with pytest.raises(ValueError):
            scan_trace(KerrScanConfig(1.0, 1.0, (1.0, 2.0), direction="down"))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            KerrScanConfig(-1.0, 1.0)
        with pytest.raises(ValueError):
            KerrScanConfig(1.0, 1.0, direction="sideways")

    def test_csv_export(self):
        cfg = KerrScanConfig(0.8, 1.0, detuning_grid(-2, 2, 41))
        scan = scan_trace(cfg)
        meta, x, y = parse_csv(scan_to_csv(cfg, scan))
        assert meta["kind"] == "derived"
        assert "beta=0.8" in meta["label"] and "direction=up" in meta["label"]
        np.testing.assert_array_equal(x, scan.detuning)
        np.testing.assert_array_equal(y, scan.output)
