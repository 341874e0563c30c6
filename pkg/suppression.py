"""
Sliding-window target localization with jamming suppression.

Every fast-time window of L0 columns is embedded and classified against the
prototypes. The target-class confidence sequence is accumulated with an
all-ones kernel of one pulse width W, so a true target (a contiguous run of
confident windows) builds a trapezoid of height up to W while isolated false
spikes stay near 1. Trapezoids above W * threshold_frac are reported once,
at the center of their flat top.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple
import logging

import numpy as np
from scipy.signal import find_peaks

from errors import DimensionError, ParameterError
from models import (
    DetectionConfig, DetectionRecord, DetectionReport, FalseTargetParams, ISRJSpec, PullOffParams,
    RGJSpec, RadarConfig, SamplingParams, SceneSpec, TargetSpec, complex_pairs, quantize,
)
from protonet import PrototypeSet, classify_many
from scene import compose_scene
from waveform import SPEED_OF_LIGHT, PulseMatrix

logger = logging.getLogger(__name__)


@dataclass
class DetectionProfile:
    probs: np.ndarray
    accumulated: np.ndarray
    detections: List[DetectionRecord] = field(default_factory=list)
    window_len: int = 0
    pulse_len: int = 0
    threshold: float = 0.0

    def report(self, true_target_bin: Optional[int] = None, jammer_bins: Optional[List[int]] = None) -> DetectionReport:
        return DetectionReport(
            window_len=self.window_len,
            threshold=self.threshold,
            detections=self.detections,
            true_target_bin=true_target_bin,
            jammer_bins=list(jammer_bins or []),
        )


def _window_len(z: PulseMatrix, cfg: DetectionConfig) -> int:
    L0 = cfg.window_len if cfg.window_len is not None else z.config.pulse_samples
    if not 1 <= L0 <= z.num_samples:
        raise ParameterError(f"window length {L0} must lie in [1, {z.num_samples}]")
    return L0


def probability_profile(z: PulseMatrix, encoder, protos: PrototypeSet, cfg: DetectionConfig) -> np.ndarray:
    """
    Target-class confidence for every window start t = 0..L-L0.

    Windows are zero padded on the fast-time axis to the encoder's training width.
    """
    L0 = _window_len(z, cfg)
    rows, width = encoder.input_shape
    if z.num_pulses != rows:
        raise DimensionError(f"matrix has {z.num_pulses} pulses, encoder was trained on {rows}")
    if L0 > width:
        raise DimensionError(f"window length {L0} exceeds the encoder's training width {width}")

    starts = range(z.num_samples - L0 + 1)
    windows = [np.pad(z.data[:, t:t + L0], ((0, 0), (0, width - L0))) for t in starts]
    logger.info(f"Profiling {len(windows)} windows of {L0} samples")
    predictions = classify_many(encoder.embed_many(windows, description="detection windows"), protos)
    return np.array([p.confidence if p.class_id == cfg.target_class else 0.0 for p in predictions])


def accumulate_profile(probs: np.ndarray, pulse_len: int) -> np.ndarray:
    """Full convolution of ``probs`` with an all-ones kernel of length ``pulse_len``."""
    if pulse_len < 1:
        raise ParameterError(f"accumulation width must be at least 1, got {pulse_len}")
    return np.convolve(np.asarray(probs, dtype=np.float64), np.ones(pulse_len), mode="full")


def _group_peaks(padded: np.ndarray, merge_tol: float) -> List[Tuple[int, int, float]]:
    """(left edge, right edge, height) of each group of local maxima joined by shallow valleys."""
    peaks, props = find_peaks(padded, plateau_size=1)
    groups: List[Tuple[int, int, float]] = []
    for peak, left, right in zip(peaks, props["left_edges"], props["right_edges"]):
        height = float(padded[peak])
        if groups:
            g_left, g_right, g_height = groups[-1]
            valley = float(padded[g_right:left + 1].min())
            if valley >= (1.0 - merge_tol) * min(g_height, height):
                groups[-1] = (g_left, int(right), max(g_height, height))
                continue
        groups.append((int(left), int(right), height))
    return groups


def detect_targets(accumulated: np.ndarray, pulse_len: int, threshold_frac: float,
                   merge_tol: float = 0.25) -> List[DetectionRecord]:
    """
    Report each plateau whose maximum exceeds pulse_len * threshold_frac.

    The reported bin is the center of the plateau. target_start assumes the
    confident windows are centered on the pulse leading edge, which puts the
    leading edge (pulse_len - 1) // 2 bins before the center.
    """
    if pulse_len < 1:
        raise ParameterError(f"accumulation width must be at least 1, got {pulse_len}")
    if not 0 < threshold_frac <= 1:
        raise ParameterError(f"threshold_frac must lie in (0, 1], got {threshold_frac}")
    accumulated = np.asarray(accumulated, dtype=np.float64)
    if accumulated.size == 0:
        return []

    threshold = pulse_len * threshold_frac
    # -1 guards make plateaus touching either end count as maxima
    padded = np.concatenate([[-1.0], accumulated, [-1.0]])
    detections = []
    for left, right, height in _group_peaks(padded, merge_tol):
        if height <= threshold:
            continue
        center = (left + right) // 2 - 1
        detections.append(DetectionRecord(bin=center, peak=height, target_start=center - (pulse_len - 1) // 2))
    return detections


def run_detection(z: PulseMatrix, encoder, protos: PrototypeSet, cfg: DetectionConfig) -> DetectionProfile:
    """probability_profile -> accumulate_profile -> detect_targets with W = one pulse width."""
    pulse_len = z.config.pulse_samples
    probs = probability_profile(z, encoder, protos, cfg)
    accumulated = accumulate_profile(probs, pulse_len)
    detections = detect_targets(accumulated, pulse_len, cfg.threshold_frac, cfg.merge_tol)
    logger.info(f"{len(detections)} detection(s) above {pulse_len * cfg.threshold_frac:.1f}")
    return DetectionProfile(
        probs=probs,
        accumulated=accumulated,
        detections=detections,
        window_len=_window_len(z, cfg),
        pulse_len=pulse_len,
        threshold=pulse_len * cfg.threshold_frac,
    )


@dataclass(frozen=True)
class ReferenceScene:
    spec: SceneSpec
    matrix: PulseMatrix
    target_bin: int
    jammer_bins: List[int]


def reference_scene(seed: int, snr: float = 10.0, inr: float = 10.0, cnr: Optional[float] = None,
                    config: Optional[RadarConfig] = None) -> ReferenceScene:
    """
    One point target, one range-gate-pull-off jammer and one interrupted-sampling
    repeater at disjoint fast-time positions. The window is split into three
    equal segments and each source gets a random segment and start within it.
    """
    config = config or RadarConfig()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    fs = config.sample_rate
    P = config.pulse_samples
    L = config.num_samples

    sampling = SamplingParams()
    isrj_extent = P + sampling.slice_count(config.pulse_width, fs) * quantize(sampling.repeat_spacing, fs)
    extents = {"target": P, "RGJ": P, "ISRJ": isrj_extent}
    segment = L // 3
    if max(extents.values()) > segment:
        raise ParameterError(f"a {L}-sample window is too short for three disjoint sources")

    order = rng.permutation(list(extents))
    starts = {}
    for slot, name in enumerate(order):
        low = slot * segment
        high = (L if slot == 2 else low + segment) - extents[name]
        starts[name] = int(rng.integers(low, high + 1))

    target = TargetSpec(
        range_m=starts["target"] * SPEED_OF_LIGHT / (2.0 * fs),
        velocity=float(rng.uniform(-300.0, 300.0)),
        amplitude=complex_pairs(np.exp(1j * rng.uniform(0.0, 2 * np.pi)))[0],
    )
    rgj = RGJSpec(
        base_delay=starts["RGJ"] / fs,
        velocity=float(rng.uniform(-300.0, 300.0)),
        false_targets=FalseTargetParams(count=1, gains=((1.0, 0.0),), delays=(0.0,)),
        pulloff=PullOffParams(mode="range", drag_speed=float(rng.uniform(300.0, 600.0)),
                              drag_accel=float(rng.uniform(50.0, 200.0))),
        seed=int(rng.integers(0, 2 ** 63)),
    )
    isrj = ISRJSpec(base_delay=starts["ISRJ"] / fs, sampling=sampling, velocity=float(rng.uniform(-300.0, 300.0)),
                    seed=int(rng.integers(0, 2 ** 63)))

    spec = SceneSpec(config=config, targets=[target], jammers=[rgj, isrj], snr=snr, inr=inr, cnr=cnr,
                     seed=int(rng.integers(0, 2 ** 63)))
    return ReferenceScene(spec=spec, matrix=compose_scene(spec), target_bin=starts["target"],
                          jammer_bins=[starts["RGJ"], starts["ISRJ"]])
