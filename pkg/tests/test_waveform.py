import math

import numpy as np
import pytest

from errors import DimensionError, NumericError, ParameterError, PulseTruncationError
from models import RadarConfig
from waveform import (
    SPEED_OF_LIGHT, ComplexSeries, PulseMatrix, doppler_frequency, drfm_intercept, lfm_baseband,
    spatial_gain, steering_vector, transmit_pulse,
)


class TestChirp:
    def test_unit_modulus(self):
        pulse = lfm_baseband(1e-6, 40e6, 48e6)
        assert np.max(np.abs(np.abs(pulse.samples) - 1.0)) < 1e-12

    def test_length_from_pulse_width(self):
        assert len(lfm_baseband(1e-6, 40e6, 48e6)) == 48

    def test_autocorrelation_mainlobe(self):
        x = lfm_baseband(1e-6, 40e6, 48e6).samples
        corr = np.abs(np.correlate(x, x, mode="full"))
        center = len(x) - 1
        assert np.argmax(corr) == center
        half_power = corr >= corr[center] / math.sqrt(2.0)
        # contiguous -3 dB mainlobe around lag 0
        left = center
        while half_power[left - 1]:
            left -= 1
        right = center
        while half_power[right + 1]:
            right += 1
        assert 1 <= right - left + 1 <= 3

    def test_energy_inside_band(self):
        fs, B, Tp = 48e6, 20e6, 10e-6
        x = lfm_baseband(Tp, B, fs).samples
        n = 4096
        spectrum = np.abs(np.fft.fft(x, n)) ** 2
        freqs = np.fft.fftfreq(n, 1 / fs)
        inside = spectrum[np.abs(freqs) <= B / 2].sum()
        assert inside / spectrum.sum() >= 0.95

    @pytest.mark.parametrize("args", [(0.0, 40e6, 48e6), (1e-6, -1.0, 48e6), (1e-6, 40e6, 0.0), (1e-6, 50e6, 48e6)])
    def test_rejects_bad_parameters(self, args):
        with pytest.raises(ParameterError):
            lfm_baseband(*args)

    def test_down_chirp_is_conjugate(self):
        up = lfm_baseband(1e-6, 40e6, 48e6, up=True).samples
        down = lfm_baseband(1e-6, 40e6, 48e6, up=False).samples
        np.testing.assert_allclose(down, np.conj(up), atol=1e-12)


class TestArray:
    def test_broadside(self):
        np.testing.assert_allclose(steering_vector(0.0, 4), np.ones(4))

    def test_thirty_degrees(self):
        np.testing.assert_allclose(steering_vector(math.radians(30), 2), [1, 1j], atol=1e-12)

    def test_odd_symmetry(self, rng):
        for theta in rng.uniform(-1.5, 1.5, 10):
            np.testing.assert_allclose(steering_vector(-theta, 6), np.conj(steering_vector(theta, 6)), atol=1e-12)

    def test_norm(self, rng):
        for theta in rng.uniform(-1.5, 1.5, 10):
            assert np.linalg.norm(steering_vector(theta, 7)) ** 2 == pytest.approx(7.0, abs=1e-12)

    def test_angle_out_of_range(self):
        with pytest.raises(ParameterError):
            steering_vector(math.pi / 2, 3)

    def test_coherent_gain(self):
        theta = 0.3
        w = steering_vector(theta, 8) / math.sqrt(8)
        assert abs(spatial_gain(w, theta) - math.sqrt(8)) < 1e-12

    def test_single_element_gain(self, rng):
        for theta in rng.uniform(-1.5, 1.5, 5):
            assert spatial_gain([1.0], theta) == pytest.approx(1.0)

    def test_cauchy_schwarz(self, rng):
        for _ in range(50):
            w = rng.standard_normal(5) + 1j * rng.standard_normal(5)
            theta = rng.uniform(-1.5, 1.5)
            assert abs(spatial_gain(w, theta)) <= np.linalg.norm(w) * math.sqrt(5) + 1e-12

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            spatial_gain(np.ones(3), 0.1, n_elems=4)


class TestDoppler:
    def test_values(self):
        assert doppler_frequency(0.0, 10e9) == 0.0
        assert doppler_frequency(300.0, 10e9) == pytest.approx(2 * 300 * 1e10 / SPEED_OF_LIGHT)
        assert doppler_frequency(300.0, 10e9) == pytest.approx(20014.0, abs=1.0)
        assert doppler_frequency(-5.0, 10e9) < 0


class TestIntercept:
    def test_identity_reduction(self, radar):
        r = drfm_intercept(radar, 0.0, 0.0, 0.0)
        expected = np.zeros(radar.num_samples, dtype=complex)
        pulse = transmit_pulse(radar).samples
        expected[:pulse.shape[0]] = pulse
        np.testing.assert_array_equal(r.samples, expected)

    def test_delay_moves_support(self, radar):
        r = drfm_intercept(radar, 0.0, 10 / radar.sample_rate, 0.0)
        assert r.support()[0] == 10

    def test_doppler_phase_ramp(self, radar):
        plain = drfm_intercept(radar, 0.0, 0.0, 0.0).samples
        moving = drfm_intercept(radar, 0.0, 0.0, 300.0).samples
        f_d = doppler_frequency(300.0, radar.carrier_f0)
        n = np.arange(radar.pulse_samples)
        ramp = np.angle(moving[n] / plain[n])
        expected = np.angle(np.exp(-2j * np.pi * f_d * n / radar.sample_rate))
        assert np.max(np.abs(np.angle(np.exp(1j * (ramp - expected))))) < 1e-9

    def test_energy_independent_of_delay(self, radar):
        energies = [np.sum(np.abs(drfm_intercept(radar, 0.2, k / radar.sample_rate, 0.0).samples) ** 2)
                    for k in (0, 17, 150)]
        np.testing.assert_allclose(energies, energies[0])

    def test_truncation(self, radar):
        with pytest.raises(PulseTruncationError):
            drfm_intercept(radar, 0.0, (radar.num_samples - 10) / radar.sample_rate, 0.0)

    def test_negative_delay(self, radar):
        with pytest.raises(ParameterError):
            drfm_intercept(radar, 0.0, -1e-9, 0.0)

    def test_replay_hook_must_keep_length(self, radar):
        with pytest.raises(DimensionError):
            drfm_intercept(radar, 0.0, 0.0, 0.0, replay=lambda x: x[:-1])


class TestContainers:
    def test_training_window_is_241(self, radar):
        assert radar.shape == (128, 241)
        assert radar.nominal_samples == 240

    def test_pulse_matrix_shape_checked(self, radar):
        with pytest.raises(DimensionError):
            PulseMatrix(np.zeros((2, 2)), radar)

    def test_series_rejects_non_finite(self):
        with pytest.raises(NumericError):
            ComplexSeries(np.array([1.0, np.nan]), 1.0)

    def test_config_timing(self):
        with pytest.raises(ValueError):
            RadarConfig(pulse_width=6e-6, pri=5e-6)
