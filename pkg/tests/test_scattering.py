import numpy as np
import pytest
import pywt
from dtcwt.numpy import Pyramid

from errors import ConfigError, DimensionError
from models import CLASS_NAMES, ScatterConfig
from scattering import (
    DC_LEAK_TOL, DualTreeCoefficients, FeatureNormalizer, ScatterFeatures, ScatteringPipeline, build_filterbank,
    channel_names, dtcwt_forward, dtcwt_inverse, feature_normalize, normalized_highpasses, output_grid, scatter,
    _circular_extend,
)
from scene import generate_dataset


def _chirp_matrix(rows, cols, rng, sweep=0.4):
    n = np.arange(cols)
    phases = rng.uniform(0, 2 * np.pi, rows)[:, None]
    return np.exp(1j * (np.pi * sweep * n ** 2 / cols + phases))


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(a)


class TestFilterBank:
    def test_quarter_shift_trees_are_time_reversed(self, bank):
        np.testing.assert_allclose(bank.h0b, bank.h0a[::-1], atol=1e-12)
        assert not np.allclose(bank.h0a, bank.h0a[::-1])

    def test_lowpass_dc_gains_match(self, bank):
        assert np.sum(bank.h0a) == pytest.approx(np.sum(bank.h0b), abs=1e-8)
        assert np.sum(bank.h0a) == pytest.approx(np.sqrt(2.0), abs=1e-8)

    def test_highpass_dc_within_tabulation_precision(self, bank):
        for h in (bank.h1o, bank.h1a, bank.h1b):
            assert abs(np.sum(h)) <= DC_LEAK_TOL

    @pytest.mark.parametrize("lengths", [(13, 15), (12, 14), (13, 12)])
    def test_unknown_lengths(self, lengths):
        with pytest.raises(ConfigError):
            build_filterbank(*lengths)

    def test_cached(self):
        assert build_filterbank(13, 14) is build_filterbank(13, 14)

    def test_complex_wavelet_is_single_sided(self, bank):
        t = bank.transform_1d()
        template = t.forward(np.zeros((256, 1)), nlevels=4)

        def synthesize(value):
            highpasses = [np.zeros_like(h) for h in template.highpasses]
            highpasses[3][8, 0] = value
            return np.asarray(t.inverse(Pyramid(np.zeros_like(template.lowpass), tuple(highpasses)))).ravel()

        psi = synthesize(1.0) + 1j * synthesize(1j)
        spectrum = np.abs(np.fft.fft(psi, 4096)) ** 2
        freqs = np.fft.fftfreq(4096)
        positive = spectrum[freqs > 0].sum()
        negative = spectrum[freqs < 0].sum()
        assert min(positive, negative) / spectrum.sum() < 0.01


class TestTransform:
    def test_round_trip_2d(self, bank, rng):
        x = rng.standard_normal((32, 48))
        y = dtcwt_inverse(dtcwt_forward(x, bank, 3), bank)
        assert y.shape == x.shape
        assert _rel(x, y) <= 1e-10

    def test_round_trip_1d(self, bank, rng):
        t = bank.transform_1d()
        x = rng.standard_normal((256, 1))
        y = np.asarray(t.inverse(t.forward(x, nlevels=3))).reshape(x.shape)
        assert _rel(x, y) <= 1e-10

    def test_subband_shapes(self, bank, rng):
        c = dtcwt_forward(rng.standard_normal((64, 32)), bank, 3)
        assert [h.shape for h in c.highpasses] == [(32, 16, 6), (16, 8, 6), (8, 4, 6)]
        assert c.levels == 3

    def test_constant_input_has_empty_subbands(self, bank):
        c = dtcwt_forward(np.ones((32, 32)), bank, 3)
        for h in c.highpasses:
            assert np.max(np.abs(h)) <= DC_LEAK_TOL * np.max(np.abs(c.lowpass))
        assert np.max(np.abs(c.lowpass)) > 0

    def test_lowpass_only_synthesis_loses_energy(self, bank, rng):
        x = rng.standard_normal((32, 32))
        c = dtcwt_forward(x, bank, 3)
        smooth = dtcwt_inverse(
            DualTreeCoefficients(tuple(np.zeros_like(h) for h in c.highpasses), c.lowpass, c.original_shape), bank)
        assert np.sum(smooth ** 2) <= np.sum(x ** 2)

    def test_normalized_analysis_is_contractive(self, bank, rng):
        for _ in range(5):
            x = rng.standard_normal((32, 64))
            energy = sum(np.sum(np.abs(h) ** 2) for h in normalized_highpasses(x, bank, 3))
            assert energy <= np.sum(x ** 2) * (1 + 1e-9)

    def test_impulse_shift_versus_critically_sampled(self, bank):
        a = np.zeros((64, 64))
        b = np.zeros((64, 64))
        a[32, 32] = 1.0
        b[32, 33] = 1.0

        ca = dtcwt_forward(a, bank, 3)
        cb = dtcwt_forward(b, bank, 3)
        for level in (1, 2):
            ea = np.sum(np.abs(ca.highpasses[level]) ** 2)
            eb = np.sum(np.abs(cb.highpasses[level]) ** 2)
            assert abs(ea - eb) / ea <= 0.05

        _, details_a = pywt.dwt2(a, "db2", mode="periodization")
        _, details_b = pywt.dwt2(b, "db2", mode="periodization")
        changes = [abs(np.sum(da ** 2) - np.sum(db ** 2)) / np.sum(da ** 2)
                   for da, db in zip(details_a, details_b)]
        assert max(changes) > 0.2

    def test_rejects_complex_and_small_planes(self, bank):
        with pytest.raises(DimensionError):
            dtcwt_forward(np.zeros((16, 16), dtype=complex), bank, 2)
        with pytest.raises(DimensionError):
            dtcwt_forward(np.zeros((16, 4)), bank, 3)
        with pytest.raises(DimensionError):
            dtcwt_forward(np.zeros(16), bank, 1)

    def test_inverse_checks_orientations(self, bank, rng):
        c = dtcwt_forward(rng.standard_normal((16, 16)), bank, 2)
        broken = DualTreeCoefficients((c.highpasses[0][:, :, :5], c.highpasses[1]), c.lowpass, c.original_shape)
        with pytest.raises(DimensionError):
            dtcwt_inverse(broken, bank)


class TestScatter:
    def test_channel_layout(self):
        cfg = ScatterConfig()
        names = channel_names(cfg)
        assert len(names) == cfg.channel_count() == 2 * (1 + 18 + 108)
        assert names[0] == "re/s0"
        assert names[1] == "re/s1/j1k1"
        assert names[19] == "re/s2/j1k1-j2k1"
        assert names[127] == "im/s0"
        assert len(set(names)) == len(names)

    def test_first_order_only(self):
        cfg = ScatterConfig(max_order=1)
        assert cfg.channel_count() == 2 * 19
        assert not any("/s2/" in n for n in channel_names(cfg))

    def test_output_grid_of_training_window(self):
        assert output_grid((128, 241), ScatterConfig()) == (16, 31)

    def test_zero_input(self, small_scatter):
        bank = build_filterbank(small_scatter.first_len, small_scatter.qshift_len)
        f = scatter(np.zeros((16, 16), dtype=complex), bank, small_scatter)
        assert f.shape == (small_scatter.channel_count(), 4, 4)
        assert not np.any(f.tensor)

    def test_modulus_channels_nonnegative(self, bank, small_scatter, rng):
        x = rng.standard_normal((16, 24)) + 1j * rng.standard_normal((16, 24))
        f = scatter(x, bank, small_scatter)
        for name, channel in zip(f.channels, f.tensor):
            if "/s0" not in name:
                assert channel.min() >= -1e-9

    def test_padding_to_grid(self, bank, small_scatter, rng):
        f = scatter(rng.standard_normal((18, 30)) + 0j, bank, small_scatter)
        assert f.shape[1:] == output_grid((18, 30), small_scatter) == (5, 8)

    def test_non_expansive(self, bank, small_scatter, rng):
        for _ in range(20):
            x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
            y = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
            gap = np.linalg.norm(scatter(x, bank, small_scatter).tensor - scatter(y, bank, small_scatter).tensor)
            assert gap <= np.linalg.norm(x - y) * (1 + 1e-6)

    def test_shift_stability_of_chirp(self, bank, rng):
        cfg = ScatterConfig()
        x = _chirp_matrix(32, 256, rng)
        shifted = np.roll(x, 1, axis=1)
        feature_change = _rel(scatter(x, bank, cfg).tensor, scatter(shifted, bank, cfg).tensor)
        raw_change = _rel(dtcwt_forward(x.real, bank, 3).highpasses[0], dtcwt_forward(shifted.real, bank, 3).highpasses[0])
        assert feature_change <= 0.05
        assert feature_change < raw_change

    @pytest.mark.parametrize("label", range(len(CLASS_NAMES)))
    def test_shift_stability_of_training_samples(self, bank, serial, label):
        cfg = ScatterConfig()
        (sample,), _ = generate_dataset("train", 1, seed=3, classes=[label], workers=serial)
        x = sample.matrix.data
        assert x.shape[1] % 2 ** cfg.scales
        change = _rel(scatter(x, bank, cfg).tensor, scatter(np.roll(x, 1, axis=1), bank, cfg).tensor)
        assert change <= 0.05

    def test_periodic_extension_wraps_both_axes(self, rng):
        x = rng.standard_normal((5, 7))
        extended = _circular_extend(x, 4, 4)
        assert extended.shape == (16, 16)
        repeats = 4 * 3
        np.testing.assert_allclose(extended[4:9, 4:11] * np.sqrt(repeats), x)
        np.testing.assert_allclose(extended[4, 11] * np.sqrt(repeats), x[0, 0])
        np.testing.assert_allclose(extended[3, 3] * np.sqrt(repeats), x[-1, -1])
        assert np.linalg.norm(extended) <= np.linalg.norm(x) * (1 + 1e-12)

    def test_second_order_carries_less_energy(self, bank, rng):
        f = scatter(_chirp_matrix(32, 64, rng), bank, ScatterConfig())
        first = sum(np.sum(c ** 2) for n, c in zip(f.channels, f.tensor) if "/s1/" in n)
        second = sum(np.sum(c ** 2) for n, c in zip(f.channels, f.tensor) if "/s2/" in n)
        assert second < first

    def test_undersized_matrix(self, bank):
        with pytest.raises(DimensionError):
            scatter(np.zeros((4, 64), dtype=complex), bank, ScatterConfig())

    def test_bank_must_match_config(self, bank):
        with pytest.raises(ConfigError):
            scatter(np.zeros((16, 16), dtype=complex), bank, ScatterConfig(first_len=5, qshift_len=10))

    def test_raw_mode_pools_planes(self, bank):
        cfg = ScatterConfig(scales=2, mode="raw")
        f = scatter(np.full((16, 16), 1 + 2j), bank, cfg)
        assert f.channels == ("re", "im")
        np.testing.assert_allclose(f.tensor[0], 1.0)
        np.testing.assert_allclose(f.tensor[1], 2.0)

    def test_feature_shape_checked(self):
        with pytest.raises(DimensionError):
            ScatterFeatures(np.zeros((3, 2, 2)), ("a", "b"))


class TestNormalization:
    def test_log_compression(self):
        f = ScatterFeatures(np.array([[[np.e - 1, -(np.e - 1)]], [[5.0, -2.0]]]), ("a", "b"))
        out = feature_normalize(f, np.array([1.0, 0.0]))
        np.testing.assert_allclose(out.tensor[0], [[1.0, -1.0]])
        np.testing.assert_array_equal(out.tensor[1], f.tensor[1])

    def test_monotone(self, rng):
        x = np.sort(rng.standard_normal(50))
        out = feature_normalize(ScatterFeatures(x[None, None, :], ("a",)), np.array([0.7])).tensor.ravel()
        assert np.all(np.diff(out) > 0)

    def test_scale_count(self):
        with pytest.raises(DimensionError):
            feature_normalize(ScatterFeatures(np.zeros((2, 1, 1)), ("a", "b")), np.ones(3))

    def test_normalizer_uses_median(self):
        tensors = [np.full((2, 3, 3), v) for v in (1.0, 3.0, 2.0)]
        normalizer = FeatureNormalizer().fit(tensors)
        np.testing.assert_allclose(normalizer.scales, [2.0, 2.0])

    def test_unfitted_normalizer(self):
        with pytest.raises(ConfigError):
            FeatureNormalizer().transform(ScatterFeatures(np.zeros((1, 1, 1)), ("a",)))
        with pytest.raises(DimensionError):
            FeatureNormalizer().fit([])


class TestPipeline:
    def test_run_keeps_order(self, small_scatter, serial, rng):
        matrices = [rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16)) for _ in range(3)]
        pipeline = ScatteringPipeline(small_scatter, workers=serial)
        stacked = pipeline.run(matrices)
        assert stacked.shape == (3, small_scatter.channel_count(), 4, 4)
        for i, z in enumerate(matrices):
            np.testing.assert_array_equal(stacked[i], pipeline.features(z).tensor)

    def test_empty_run(self, small_scatter, serial):
        assert ScatteringPipeline(small_scatter, workers=serial).run([]).shape[0] == 0

    def test_normalizer_applied(self, small_scatter, serial, rng):
        pipeline = ScatteringPipeline(small_scatter, workers=serial)
        z = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        raw = pipeline.run([z])
        pipeline.fit_normalizer(raw)
        normalized = pipeline.features(z).tensor
        np.testing.assert_allclose(normalized, feature_normalize(ScatterFeatures(raw[0], pipeline.channels),
                                                                 pipeline.normalizer.scales).tensor)
        np.testing.assert_array_equal(pipeline.features(z, normalize=False).tensor, raw[0])
