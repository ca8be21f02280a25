import json

import numpy as np
import pytest

from rbopo.analysis.fits import normalize_dataset
from rbopo.errors import BelowThresholdError, GenerationError
from rbopo.model import OperatingPoint, SqueezingModel, difference_spectrum, peak_center
from rbopo.synth import (
    RAW_KINDS,
    SynthConfig,
    _noisy,
    child_seeds,
    expected_traces,
    generate_dataset,
    read_dataset,
    shot_linearity_series,
    sigma_series,
    threshold_curve,
)
from rbopo.units import linear_to_db

SUPP_POWERS = (0.278, 0.318, 0.359, 0.383, 0.403, 0.465)


def nominal(**kw):
    model = SqueezingModel(eta=0.48, bw_hz=16.1e6, detection_efficiency=0.83)
    return SynthConfig(model=model, op=OperatingPoint.from_sigma(1.8, 0.159), **kw)


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            {"f_start_hz": 5e6, "f_stop_hz": 1e6},
            {"n_points": 1},
            {"electronic_floor": 0.0},
            {"relative_noise_std": -0.1},
            {"seed": -1},
            {"seed": 2**64},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SynthConfig(**kw)

    def test_dict_round_trip(self):
        cfg = nominal(seed=17, n_points=101)
        back = SynthConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back == cfg

    def test_beam_power(self):
        cfg = nominal()
        assert cfg.beam_power_w == pytest.approx(0.012)


class TestGeneration:
    def test_kinds_and_grid(self):
        ds = generate_dataset(nominal())
        assert tuple(ds.traces) == RAW_KINDS
        for t in ds.traces.values():
            np.testing.assert_array_equal(t.freqs, ds["electronic"].freqs)
            assert (t.rbw, t.vbw) == (100e3, 1e3)

    def test_noiseless_round_trip(self):
        cfg = nominal(relative_noise_std=0.0)
        norm = normalize_dataset(generate_dataset(cfg).traces)["diff"]
        want = difference_spectrum(cfg.model, cfg.freqs, cfg.op.pump_power_w)
        np.testing.assert_allclose(norm.values, want, rtol=1e-12, atol=0)

    def test_noiseless_floor(self):
        norm = normalize_dataset(generate_dataset(nominal(relative_noise_std=0.0)).traces)["diff"]
        assert linear_to_db(norm.values.min()) == pytest.approx(linear_to_db(1 - 0.83 * 0.48), abs=0.01)
        assert linear_to_db(1 - 0.83 * 0.48) == pytest.approx(-2.21, abs=5e-3)

    def test_diff_above_electronic(self):
        ds = generate_dataset(nominal(seed=5))
        assert np.all(ds["diff_raw"].values > ds["electronic"].values)

    def test_same_seed_identical(self, tmp_path):
        a = generate_dataset(nominal(seed=9)).write(tmp_path / "a")
        b = generate_dataset(nominal(seed=9)).write(tmp_path / "b")
        for name in [f"{k}.csv" for k in RAW_KINDS] + ["ground_truth.json"]:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_different_seed_differs(self):
        a = generate_dataset(nominal(seed=1))["diff_raw"].values
        b = generate_dataset(nominal(seed=2))["diff_raw"].values
        assert not np.array_equal(a, b)

    def test_shot_sum_twice_single_in_expectation(self):
        exp = expected_traces(nominal())
        np.testing.assert_allclose(exp["shot_sum"] - exp["electronic"], 2 * (exp["shot_single"] - exp["electronic"]))

    def test_expectation_converges(self):
        # mean of N draws sits in a 3-sigma band of the expected level, shrinking like 1/sqrt(N)
        cfg = nominal(n_points=51, seed=0)
        exp = expected_traces(cfg)
        seeds = child_seeds(123, 10_000)
        acc = {k: np.zeros(cfg.n_points) for k in RAW_KINDS}
        rms_at = {}
        for i, s in enumerate(seeds, 1):
            ds = generate_dataset(cfg.replace(seed=s))
            for k in RAW_KINDS:
                acc[k] += ds[k].values
            if i in (100, 10_000):
                z = np.concatenate(
                    [(acc[k] / i - exp[k]) / (cfg.relative_noise_std * exp[k] / np.sqrt(i)) for k in RAW_KINDS]
                )
                rms_at[i] = float(np.sqrt(np.mean(z**2)))
                if i == 10_000:
                    assert np.mean(np.abs(z) > 3) < 0.01
                    assert np.max(np.abs(z)) < 5
        # z is already scaled by 1/sqrt(N); its rms staying near 1 is the 1/sqrt(N) law
        assert 0.8 < rms_at[100] < 1.2
        assert 0.8 < rms_at[10_000] < 1.2

    def test_non_positive_expectation(self):
        rng = np.random.default_rng(0)
        with pytest.raises(GenerationError):
            _noisy(np.array([1.0, 0.0]), 0.05, rng, "electronic")

    def test_redraws_keep_values_positive(self):
        rng = np.random.default_rng(0)
        vals = _noisy(np.ones(10_000), 0.6, rng, "shot_single")
        assert vals.min() > 0

    def test_write_and_read(self, tmp_path):
        ds = generate_dataset(nominal(seed=4))
        ds.write(tmp_path)
        traces, gt = read_dataset(tmp_path)
        assert gt == ds.ground_truth
        for k in RAW_KINDS:
            assert traces[k] == ds[k]


class TestSeeds:
    def test_children_distinct_and_stable(self):
        a = child_seeds(7, 50)
        assert len(set(a)) == 50
        assert a == child_seeds(7, 50)
        assert child_seeds(7, 5) == a[:5]


class TestLinearitySeries:
    def test_noiseless_proportional(self):
        traces = shot_linearity_series(nominal(relative_noise_std=0.0), [1e-3, 2e-3, 4e-3])
        levels = [t.band_mean() for t in traces]
        np.testing.assert_allclose(np.array(levels) / levels[0], [1, 2, 4], rtol=1e-15)

    def test_ratios_in_expectation(self):
        traces = shot_linearity_series(nominal(relative_noise_std=0.05, seed=3), [1e-3, 2e-3, 4e-3])
        levels = np.array([t.band_mean() for t in traces])
        # 431-point band means: relative std 0.05/sqrt(431) ~ 0.24%
        np.testing.assert_allclose(levels / levels[0], [1, 2, 4], rtol=0.015)

    def test_needs_three_powers(self):
        with pytest.raises(ValueError):
            shot_linearity_series(nominal(), [1e-3, 2e-3])


class TestSigmaSeries:
    def test_peak_centers(self):
        m = SqueezingModel(peak_height=0.4)
        centers = [peak_center(m, p) / 1e6 for p in SUPP_POWERS]
        np.testing.assert_allclose(centers, [10.68, 12.21, 13.79, 14.71, 15.48, 17.86], atol=0.006)

    def test_datasets_differ_only_in_pump_and_seed(self):
        base = nominal()
        series = sigma_series(base, SUPP_POWERS)
        assert [ds.ground_truth.op.pump_power_w for ds in series] == list(SUPP_POWERS)
        assert len({ds.ground_truth.seed for ds in series}) == len(SUPP_POWERS)
        for ds in series:
            assert ds.ground_truth.model == base.model

    def test_threshold_point_accepted(self):
        cfg = nominal(relative_noise_std=0.0).replace(model=SqueezingModel(peak_height=0.4))
        (ds,) = sigma_series(cfg, [0.159])
        diff = normalize_dataset(ds.traces)["diff"]
        c = peak_center(cfg.model, 0.159)
        i = int(np.argmin(np.abs(diff.freqs - c)))
        window = slice(max(i - 20, 0), i + 21)
        assert diff.freqs[window][np.argmax(diff.values[window])] == pytest.approx(c, abs=diff.freqs[1] - diff.freqs[0])

    def test_below_threshold_rejected(self):
        with pytest.raises(BelowThresholdError):
            sigma_series(nominal(), [0.1, 0.3])


class TestThresholdCurve:
    def test_noiseless(self):
        pts = threshold_curve(0.193, 0.1, np.linspace(0.1, 0.6, 20), 0.0, 0)
        np.testing.assert_allclose(pts[:, 1], np.maximum(0, 0.1 * (pts[:, 0] - 0.193)))

    def test_seeded(self):
        a = threshold_curve(0.193, 0.1, np.linspace(0.1, 0.6, 20), 1e-3, 5)
        b = threshold_curve(0.193, 0.1, np.linspace(0.1, 0.6, 20), 1e-3, 5)
        np.testing.assert_array_equal(a, b)
