import numpy as np
import pytest

from errors import ConfigError, ParameterError, PulseTruncationError
from models import CLASS_NAMES, FalseTargetParams, RDFJSpec, RadarConfig, SceneSpec, TargetSpec
from scene import (
    PROTOCOLS, TEST_PROTOCOL, clutter, complex_noise, compose_components, compose_scene, draw_jammer,
    draw_scene, generate_dataset, sample_rng, scale_to_ratio, target_echo,
)
from scheduler import WorkScheduler
from waveform import SPEED_OF_LIGHT, transmit_pulse


def _range_for_bin(bin_index, config):
    return bin_index * SPEED_OF_LIGHT / (2.0 * config.sample_rate)


class TestTargetEcho:
    def test_zero_range_is_the_pulse(self, radar):
        echo = target_echo(TargetSpec(range_m=0.0), radar)
        pulse = transmit_pulse(radar).samples
        np.testing.assert_array_equal(echo.data[0, :pulse.shape[0]], pulse)
        assert not np.any(echo.data[0, pulse.shape[0]:])

    def test_support_starts_at_delay_bin(self, radar):
        echo = target_echo(TargetSpec(range_m=_range_for_bin(60, radar)), radar)
        assert np.flatnonzero(echo.data[5])[0] == 60

    def test_matched_filter_peak(self, radar, rng):
        pulse = transmit_pulse(radar).samples
        for _ in range(20):
            R = rng.uniform(0.0, _range_for_bin(radar.num_samples - radar.pulse_samples, radar))
            echo = target_echo(TargetSpec(range_m=R, velocity=float(rng.uniform(-300, 300))), radar)
            # correlation lag k aligns pulse[0] with echo[k]
            corr = np.abs(np.correlate(echo.data[7], pulse, mode="full"))[pulse.shape[0] - 1:]
            expected = int(np.floor(2 * R / SPEED_OF_LIGHT * radar.sample_rate + 0.5))
            assert int(np.argmax(corr)) == expected

    def test_overrun(self, radar):
        with pytest.raises(PulseTruncationError):
            target_echo(TargetSpec(range_m=_range_for_bin(radar.num_samples - 5, radar)), radar)


class TestNoiseAndClutter:
    def test_noise_statistics(self):
        noise = complex_noise((128, 241), 5)
        assert 0.96 <= np.mean(np.abs(noise) ** 2) <= 1.04
        assert abs(noise.mean()) < 0.02

    def test_noise_is_seeded(self):
        np.testing.assert_array_equal(complex_noise((4, 9), 11), complex_noise((4, 9), 11))

    def test_clutter_power_and_correlation(self):
        c = clutter((128, 241), 3, correlation=0.9)
        assert 0.9 <= np.mean(np.abs(c) ** 2) <= 1.1
        lag1 = np.mean(c[:, 1:] * np.conj(c[:, :-1])) / np.mean(np.abs(c) ** 2)
        assert abs(lag1.real - 0.9) < 0.03
        assert abs(lag1.imag) < 0.03

    def test_uncorrelated_clutter_is_white(self):
        c = clutter((128, 241), 3, correlation=0.0)
        np.testing.assert_allclose(c, complex_noise((128, 241), 3))

    def test_correlation_range(self):
        with pytest.raises(ParameterError):
            clutter((2, 2), 0, correlation=1.0)


class TestScaling:
    @pytest.mark.parametrize("ratio_db", [0.0, 10.0, -6.0])
    def test_support_mean_power(self, radar, ratio_db):
        echo = target_echo(TargetSpec(range_m=_range_for_bin(30, radar)), radar)
        scaled = scale_to_ratio(echo, ratio_db)
        support = np.abs(scaled.data) > 0
        assert np.mean(np.abs(scaled.data[support]) ** 2) == pytest.approx(10 ** (ratio_db / 10), rel=1e-10)
        np.testing.assert_array_equal(support, np.abs(echo.data) > 0)

    def test_zero_signal(self):
        with pytest.raises(ParameterError):
            scale_to_ratio(np.zeros((2, 3), dtype=complex), 0.0)


class TestComposition:
    def test_empty_scene_is_noise(self, radar):
        spec = SceneSpec(config=radar, seed=9)
        np.testing.assert_array_equal(compose_scene(spec).data, complex_noise(radar.shape, np.random.SeedSequence([9, 0])))

    def test_target_component_power(self, radar):
        spec = SceneSpec(config=radar, targets=[TargetSpec(range_m=_range_for_bin(50, radar))], snr=7.0)
        target = compose_components(spec)["target_0"]
        support = np.abs(target) > 0
        assert np.mean(np.abs(target[support]) ** 2) == pytest.approx(10 ** 0.7, rel=1e-10)

    def test_components_sum_to_scene(self, radar):
        jammer = RDFJSpec(base_delay=100 / radar.sample_rate,
                          false_targets=FalseTargetParams(count=1, gains=((1.0, 0.0),), delays=(0.0,)))
        spec = SceneSpec(config=radar, targets=[TargetSpec(range_m=_range_for_bin(10, radar))], jammers=[jammer],
                         cnr=0.0, seed=4)
        parts = compose_components(spec)
        assert list(parts) == ["target_0", "jammer_0_RDFJ", "clutter", "noise"]
        np.testing.assert_allclose(compose_scene(spec).data, sum(parts.values()), atol=1e-12)

    def test_off_axis_source_is_attenuated(self):
        config = RadarConfig(num_rx=4)
        on_axis = SceneSpec(config=config, targets=[TargetSpec(range_m=0.0, angle=0.0)])
        off_axis = SceneSpec(config=config, targets=[TargetSpec(range_m=0.0, angle=0.6)])
        p_on = np.sum(np.abs(compose_components(on_axis)["target_0"]) ** 2)
        p_off = np.sum(np.abs(compose_components(off_axis)["target_0"]) ** 2)
        assert p_off < p_on


class TestDatasets:
    def test_single_label_draws(self):
        for label in range(len(CLASS_NAMES)):
            spec = draw_scene("train", label, sample_rng(0, label, 0))
            if label == 0:
                assert len(spec.targets) == 1 and not spec.jammers
            else:
                assert not spec.targets and [j.family for j in spec.jammers] == [CLASS_NAMES[label]]
            assert spec.cnr is None

    def test_every_family_fits_the_test_window(self):
        for seed in range(5):
            rng = sample_rng(seed, 99, 0)
            spec = draw_scene("test", 0, rng)
            assert spec.config.shape == (128, 241)
            for family in CLASS_NAMES[1:]:
                config = spec.config
                jammer = draw_jammer(family, config, TEST_PROTOCOL, rng)
                compose_scene(SceneSpec(config=config, jammers=[jammer]))

    def test_train_dataset(self, serial):
        samples, manifest = generate_dataset("train", 2, seed=3, workers=serial)
        assert len(samples) == 2 * len(CLASS_NAMES)
        assert [s.label for s in samples] == [label for label in range(len(CLASS_NAMES)) for _ in range(2)]
        assert all(s.matrix.data.shape == (128, 241) for s in samples)
        assert manifest.fast_time_samples == 241
        assert manifest.nominal_fast_time_samples == 240
        assert all(r.scene.config.carrier_f0 == 10e9 for r in manifest.samples)
        for record in manifest.samples:
            assert -6.0 <= record.scene.snr <= 10.0

    def test_test_protocol_ranges(self, serial):
        _, manifest = generate_dataset("test", 1, seed=8, workers=serial, classes=[0, 6])
        assert manifest.nominal_fast_time_samples is None
        for record in manifest.samples:
            config = record.scene.config
            assert 8e9 <= config.carrier_f0 <= 12e9
            assert config.sample_rate == 68e6
            assert -10.0 <= record.scene.cnr <= 10.0

    def test_generation_is_schedule_independent(self, serial):
        a, _ = generate_dataset("train", 1, seed=21, snr_db=10.0, workers=serial)
        b, _ = generate_dataset("train", 1, seed=21, snr_db=10.0, workers=WorkScheduler(max_workers=4, batch_size=3))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.matrix.data, y.matrix.data)

    def test_fixed_snr(self, serial):
        _, manifest = generate_dataset("train", 1, seed=2, snr_db=10.0, workers=serial, classes=[0, 1])
        assert all(r.scene.snr == 10.0 and r.scene.inr == 10.0 for r in manifest.samples)

    def test_bad_protocol(self):
        with pytest.raises(ConfigError):
            generate_dataset("field", 1, seed=0)
        assert set(PROTOCOLS) == {"train", "test"}
