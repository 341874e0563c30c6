import numpy as np
import pytest

from errors import DimensionError, ParameterError
from models import DetectionConfig, RadarConfig
from protonet import PrototypeSet
from suppression import accumulate_profile, detect_targets, probability_profile, reference_scene, run_detection
from waveform import PulseMatrix


class EnergyEncoder:
    """Embeds a window as [window energy, 1]."""

    def __init__(self, input_shape):
        self.input_shape = input_shape

    def embed_many(self, windows, description=""):
        return np.array([[np.sum(np.abs(w) ** 2), 1.0] for w in windows])


class TestAccumulate:
    def test_run_builds_a_trapezoid(self):
        probs = np.zeros(40)
        probs[10:25] = 1.0
        acc = accumulate_profile(probs, 5)
        assert acc.shape == (44,)
        assert acc.max() == 5.0
        assert np.flatnonzero(acc == 5.0).tolist() == list(range(14, 25))
        assert acc.sum() == pytest.approx(probs.sum() * 5)

    def test_isolated_spikes_stay_below_threshold(self):
        probs = np.zeros(60)
        probs[[5, 20, 41]] = 1.0
        assert detect_targets(accumulate_profile(probs, 8), 8, 0.5) == []

    def test_intermittent_run_still_detected(self):
        probs = np.zeros(60)
        probs[20:36:2] = 1.0
        detections = detect_targets(accumulate_profile(probs, 8), 8, 0.4)
        assert len(detections) == 1

    def test_width(self):
        with pytest.raises(ParameterError):
            accumulate_profile(np.ones(3), 0)


class TestDetect:
    def test_empty(self):
        assert detect_targets(np.array([]), 5, 0.5) == []

    def test_plateau_center(self):
        acc = accumulate_profile(np.r_[np.zeros(10), np.ones(12), np.zeros(10)], 6)
        (d,) = detect_targets(acc, 6, 0.5)
        plateau = np.flatnonzero(acc == acc.max())
        assert d.bin == (plateau[0] + plateau[-1]) // 2
        assert d.peak == 6.0
        assert d.target_start == d.bin - 2

    def test_leading_edge_of_a_lone_confident_window(self):
        probs = np.zeros(60)
        probs[20] = 1.0
        acc = accumulate_profile(probs, 8)
        (d,) = detect_targets(acc, 8, 0.1)
        plateau = np.flatnonzero(acc == acc.max())
        assert d.bin == 23
        # center - (W - 1) // 2 agrees with plateau end - W + 1 for a lone window
        assert d.target_start == 20 == plateau[-1] - 8 + 1

    def test_leading_edge_of_a_centered_run(self):
        probs = np.zeros(60)
        probs[17:24] = 1.0
        (d,) = detect_targets(accumulate_profile(probs, 8), 8, 0.5)
        assert d.target_start == 20

    def test_plateau_at_the_edges(self):
        acc = np.r_[np.full(4, 9.0), np.zeros(6), np.full(3, 9.0)]
        assert [d.bin for d in detect_targets(acc, 9, 0.5)] == [1, 11]

    def test_threshold_is_monotone(self, rng):
        probs = (rng.uniform(size=200) > 0.7).astype(float)
        probs[50:80] = 1.0
        probs[130:150] = 1.0
        acc = accumulate_profile(probs, 10)
        counts = [len(detect_targets(acc, 10, f)) for f in (0.2, 0.4, 0.6, 0.8, 1.0)]
        assert counts == sorted(counts, reverse=True)

    def test_shift_equivariance(self):
        probs = np.zeros(100)
        probs[30:45] = 1.0
        acc = accumulate_profile(probs, 7)
        base = [d.bin for d in detect_targets(acc, 7, 0.5)]
        moved = [d.bin for d in detect_targets(accumulate_profile(np.roll(probs, 13), 7), 7, 0.5)]
        assert moved == [b + 13 for b in base]

    def test_shallow_valley_merges(self):
        acc = np.array([0, 5, 10, 9, 10, 5, 0], dtype=float)
        assert len(detect_targets(acc, 10, 0.5, merge_tol=0.25)) == 1
        assert len(detect_targets(acc, 10, 0.5, merge_tol=0.0)) == 2

    @pytest.mark.parametrize("frac", [0.0, 1.5])
    def test_threshold_range(self, frac):
        with pytest.raises(ParameterError):
            detect_targets(np.ones(4), 2, frac)


class TestProfile:
    def test_profile_follows_classifier(self, small_radar):
        data = np.zeros(small_radar.shape, dtype=complex)
        data[:, 40] = 1.0
        z = PulseMatrix(data, small_radar)
        encoder = EnergyEncoder(small_radar.shape)
        # class 0 sits at "energetic", class 1 at "empty"
        protos = PrototypeSet(np.array([[16.0, 1.0], [0.0, 1.0]]), (0, 1))
        cfg = DetectionConfig(window_len=8, threshold_frac=0.1)
        probs = probability_profile(z, encoder, protos, cfg)
        assert probs.shape == (small_radar.num_samples - 7,)
        assert np.flatnonzero(probs > 0).tolist() == list(range(33, 41))

        profile = run_detection(z, encoder, protos, cfg)
        assert len(profile.detections) == 1
        # confident windows 33..40 spread over bins 40..80 of the accumulated profile
        assert profile.detections[0].bin == 60
        assert profile.detections[0].peak == pytest.approx(8.0)
        report = profile.report(true_target_bin=40)
        assert report.window_len == 8

    def test_pulse_count_must_match(self, small_radar):
        z = PulseMatrix(np.zeros(small_radar.shape, dtype=complex), small_radar)
        encoder = EnergyEncoder((small_radar.num_pulses + 1, small_radar.num_samples))
        with pytest.raises(DimensionError):
            probability_profile(z, encoder, PrototypeSet(np.zeros((1, 2)), (0,)), DetectionConfig(window_len=4))

    def test_window_length_range(self, small_radar):
        z = PulseMatrix(np.zeros(small_radar.shape, dtype=complex), small_radar)
        encoder = EnergyEncoder(small_radar.shape)
        with pytest.raises(ParameterError):
            probability_profile(z, encoder, PrototypeSet(np.zeros((1, 2)), (0,)),
                                DetectionConfig(window_len=small_radar.num_samples + 1))


class TestReferenceScene:
    def test_sources_are_disjoint(self):
        for seed in range(5):
            ref = reference_scene(seed)
            P = ref.spec.config.pulse_samples
            bins = sorted([ref.target_bin] + ref.jammer_bins)
            assert all(b - a >= P for a, b in zip(bins, bins[1:]))
            assert ref.matrix.data.shape == ref.spec.config.shape

    def test_seeded(self):
        np.testing.assert_array_equal(reference_scene(3).matrix.data, reference_scene(3).matrix.data)

    def test_window_too_short(self):
        with pytest.raises(ParameterError):
            reference_scene(0, config=RadarConfig(pri=2e-6, guard_samples=0))


def _scene_detections(desk_model, seed, cnr=None):
    trained, protos = desk_model
    ref = reference_scene(seed, cnr=cnr)
    detections = run_detection(ref.matrix, trained, protos, DetectionConfig()).detections
    return ref, detections


def _clean_hit(ref, detections):
    return len(detections) == 1 and abs(detections[0].target_start - ref.target_bin) <= 1


@pytest.mark.slow
def test_end_to_end_detection(desk_model):
    for seed in range(20):
        ref, detections = _scene_detections(desk_model, seed)
        assert _clean_hit(ref, detections), (seed, ref.target_bin, ref.jammer_bins, detections)
        for jammer in ref.jammer_bins:
            assert all(abs(d.target_start - jammer) > 1 for d in detections)


@pytest.mark.slow
def test_end_to_end_detection_in_clutter(desk_model):
    hits = sum(_clean_hit(*_scene_detections(desk_model, seed, cnr=10.0)) for seed in range(20))
    assert hits >= 18
