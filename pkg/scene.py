"""
Scene composition and labeled dataset generation.

Power convention: a component scaled to ``ratio_db`` has mean power
reference_power * 10^(ratio_db/10) over its own nonzero support, relative to
unit-power receiver noise. This makes short pulses and continuous comb jamming
comparable. Sources off the look direction are weighted by the receive
beam response relative to the look direction.

Dataset protocols follow the training/test parameter columns:

  parameter        train          test
  carrier          10 GHz         8-12 GHz
  bandwidth        40 MHz         20-60 MHz
  sample rate      48 MHz         68 MHz
  pulse width      1 us           1-2 us (window fixed at 241 samples)
  PRI              5 us           5-50 us
  SNR / INR        -6..10 dB      -10..15 dB
  CNR              none           -10..10 dB
  point targets    1              1-3
  false targets    3-9            4-10
  comb teeth       10             5-15
  sub-pulses       5              4-8

Every sample is seeded from (seed, class, index), so datasets do not depend on
how the worker pool schedules them.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.signal import lfilter

from errors import ConfigError, ParameterError, PulseTruncationError
from jamming import generate_jamming
from models import (
    CLASS_NAMES, CSJSpec, CombParams, DatasetManifest, FalseTargetParams, ISFJSpec, ISRJSpec,
    PullOffParams, RDFJSpec, RGJSpec, RVDJSpec, RVGJSpec, RadarConfig, SSJSpec, SamplingParams,
    SampleRecord, SceneSpec, SmearParams, TargetSpec, VDFJSpec, VGJSpec, complex_pairs, quantize,
)
from scheduler import WorkScheduler, scheduler as default_scheduler
from waveform import (
    SPEED_OF_LIGHT, PulseMatrix, doppler_frequency, receive_weights, spatial_gain, transmit_pulse,
)

logger = logging.getLogger(__name__)

NOISE_STREAM = 0
CLUTTER_STREAM = 1
# Range pull-off deviation cap in samples; drawn delays leave this much room
PULL_MARGIN = 4


@dataclass(frozen=True)
class LabeledSample:
    matrix: PulseMatrix
    label: int


@dataclass(frozen=True)
class ProtocolRanges:
    """Parameter ranges for one dataset protocol. Equal bounds mean a fixed value."""
    name: str
    carrier_f0: Tuple[float, float]
    bandwidth: Tuple[float, float]
    sample_rate: float
    pulse_width: Tuple[float, float]
    pri: Tuple[float, float]
    snr: Tuple[float, float]
    cnr: Optional[Tuple[float, float]]
    targets: Tuple[int, int]
    false_targets: Tuple[int, int]
    comb_teeth: Tuple[int, int]
    subpulses: Tuple[int, int]
    drag_speed: Tuple[float, float] = (300.0, 600.0)
    drag_accel: Tuple[float, float] = (50.0, 200.0)
    sampling: SamplingParams = field(default_factory=SamplingParams)
    fast_time_samples: Optional[int] = None
    num_pulses: int = 128
    max_velocity: float = 600.0


TRAIN_PROTOCOL = ProtocolRanges(
    name="train",
    carrier_f0=(10e9, 10e9),
    bandwidth=(40e6, 40e6),
    sample_rate=48e6,
    pulse_width=(1e-6, 1e-6),
    pri=(5e-6, 5e-6),
    snr=(-6.0, 10.0),
    cnr=None,
    targets=(1, 1),
    false_targets=(3, 9),
    comb_teeth=(10, 10),
    subpulses=(5, 5),
)

TEST_PROTOCOL = ProtocolRanges(
    name="test",
    carrier_f0=(8e9, 12e9),
    bandwidth=(20e6, 60e6),
    sample_rate=68e6,
    pulse_width=(1e-6, 2e-6),
    pri=(5e-6, 50e-6),
    snr=(-10.0, 15.0),
    cnr=(-10.0, 10.0),
    targets=(1, 3),
    false_targets=(4, 10),
    comb_teeth=(5, 15),
    subpulses=(4, 8),
    fast_time_samples=241,
)

PROTOCOLS: Dict[str, ProtocolRanges] = {"train": TRAIN_PROTOCOL, "test": TEST_PROTOCOL}


# ---------------------------------------------------------------------------
# Components
# ---------------------------------------------------------------------------

def target_echo(t: TargetSpec, config: RadarConfig) -> PulseMatrix:
    """Row q = amplitude * x(n - round(2R/c*fs)) * exp(j*2*pi*f_d*(q*Tr + n/fs))."""
    Q, L = config.shape
    pulse = transmit_pulse(config).samples
    start = quantize(2.0 * t.range_m / SPEED_OF_LIGHT, config.sample_rate)
    if start + pulse.shape[0] > L:
        raise PulseTruncationError(f"echo from {t.range_m} m starts at bin {start} and overruns the {L}-sample window")

    row = np.zeros(L, dtype=np.complex128)
    row[start:start + pulse.shape[0]] = pulse
    amplitude = complex(*t.amplitude)

    f_d = doppler_frequency(t.velocity, config.carrier_f0)
    if f_d == 0.0:
        return PulseMatrix(np.tile(amplitude * row, (Q, 1)), config)

    slow = np.arange(Q)[:, None] * config.pri
    fast = np.arange(L)[None, :] / config.sample_rate
    data = amplitude * row[None, :] * np.exp(2j * np.pi * f_d * (slow + fast))
    return PulseMatrix(data, config)


def complex_noise(shape: Tuple[int, int], seed) -> np.ndarray:
    """Circular complex Gaussian noise with unit expected power per sample."""
    rng = np.random.default_rng(seed)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def clutter(shape: Tuple[int, int], seed, correlation: float = 0.9) -> np.ndarray:
    """Unit-power AR(1) complex Gaussian clutter, correlated along fast time."""
    if not 0.0 <= correlation < 1.0:
        raise ParameterError(f"clutter correlation must lie in [0, 1), got {correlation}")
    white = complex_noise(shape, seed)
    gain = np.sqrt(1.0 - correlation ** 2)
    # initial state makes the first output equal the first innovation (stationary start)
    zi = (1.0 - gain) * white[:, :1]
    colored, _ = lfilter([gain], [1.0, -correlation], white, axis=1, zi=zi)
    return colored


def scale_to_ratio(signal, ratio_db: float, reference_power: float = 1.0):
    """
    Scale so the mean power over the signal's nonzero support equals
    reference_power * 10^(ratio_db/10). Accepts a PulseMatrix or a complex array
    and returns the same kind.
    """
    data = signal.data if isinstance(signal, PulseMatrix) else np.asarray(signal, dtype=np.complex128)
    power = np.abs(data) ** 2
    support = power > 0
    if not np.any(support):
        raise ParameterError("cannot scale a zero-energy signal to a power ratio")

    factor = np.sqrt(reference_power * 10.0 ** (ratio_db / 10.0) / power[support].mean())
    scaled = data * factor
    if isinstance(signal, PulseMatrix):
        return signal.with_data(scaled)
    return scaled


def _relative_gain(weights: np.ndarray, theta: float, look_gain: complex) -> complex:
    return spatial_gain(weights, theta) / look_gain


def compose_components(s: SceneSpec) -> Dict[str, np.ndarray]:
    """Scaled, beam-weighted components of a scene in summation order (noise last)."""
    config = s.config
    weights = receive_weights(config, s.look_angle)
    look_gain = spatial_gain(weights, s.look_angle)
    if look_gain == 0:
        raise ParameterError("receive beam has a null in the look direction")

    components: Dict[str, np.ndarray] = {}
    for i, target in enumerate(s.targets):
        echo = scale_to_ratio(target_echo(target, config).data, s.snr)
        components[f"target_{i}"] = echo * _relative_gain(weights, target.angle, look_gain)

    for i, jammer in enumerate(s.jammers):
        jamming = scale_to_ratio(generate_jamming(jammer, config).data, s.inr)
        components[f"jammer_{i}_{jammer.family}"] = jamming * _relative_gain(weights, jammer.theta, look_gain)

    if s.cnr is not None:
        seed = np.random.SeedSequence([s.seed, CLUTTER_STREAM])
        components["clutter"] = scale_to_ratio(clutter(config.shape, seed, s.clutter_correlation), s.cnr)

    components["noise"] = complex_noise(config.shape, np.random.SeedSequence([s.seed, NOISE_STREAM]))
    return components


def compose_scene(s: SceneSpec) -> PulseMatrix:
    """Sum of targets, jammers, clutter and unit-power noise for one CPI."""
    total = np.zeros(s.config.shape, dtype=np.complex128)
    for component in compose_components(s).values():
        total = total + component
    return PulseMatrix(total, s.config)


# ---------------------------------------------------------------------------
# Protocol draws
# ---------------------------------------------------------------------------

def _uniform(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    low, high = bounds
    if low == high:
        return float(low)
    return float(rng.uniform(low, high))


def _integer(rng: np.random.Generator, bounds: Tuple[int, int]) -> int:
    low, high = bounds
    return int(rng.integers(low, high + 1))


def _unit_gains(rng: np.random.Generator, count: int, low: float = 0.5) -> Tuple[Tuple[float, float], ...]:
    magnitudes = rng.uniform(low, 1.0, count)
    phases = rng.uniform(0.0, 2 * np.pi, count)
    return complex_pairs(magnitudes * np.exp(1j * phases))


def draw_radar_config(ranges: ProtocolRanges, rng: np.random.Generator) -> RadarConfig:
    return RadarConfig(
        num_pulses=ranges.num_pulses,
        carrier_f0=_uniform(rng, ranges.carrier_f0),
        bandwidth=_uniform(rng, ranges.bandwidth),
        sample_rate=ranges.sample_rate,
        pulse_width=_uniform(rng, ranges.pulse_width),
        pri=_uniform(rng, ranges.pri),
        fast_time_samples=ranges.fast_time_samples,
    )


def draw_target(config: RadarConfig, rng: np.random.Generator, max_velocity: float = 600.0) -> TargetSpec:
    """Point target whose echo starts on a whole sample inside the window."""
    start = int(rng.integers(0, config.num_samples - config.pulse_samples + 1))
    return TargetSpec(
        range_m=start * SPEED_OF_LIGHT / (2.0 * config.sample_rate),
        velocity=float(rng.uniform(-max_velocity, max_velocity)),
        amplitude=complex_pairs(np.exp(1j * rng.uniform(0.0, 2 * np.pi)))[0],
    )


def draw_jammer(family: str, config: RadarConfig, ranges: ProtocolRanges, rng: np.random.Generator):
    """Draw a fully specified JammingSpec of ``family`` that fits the window."""
    fs = config.sample_rate
    pulse_len = config.pulse_samples
    room = config.num_samples - pulse_len
    common = dict(
        velocity=float(rng.uniform(-ranges.max_velocity, ranges.max_velocity)),
        seed=int(rng.integers(0, 2 ** 63)),
    )
    max_doppler = 0.45 * config.prf

    def false_targets(with_delays: bool, with_dopplers: bool, margin: int = 0) -> Tuple[float, FalseTargetParams]:
        span = room - margin
        count = _integer(rng, ranges.false_targets)
        base = int(rng.integers(0, span // 2 + 1)) if with_delays else int(rng.integers(0, span + 1))
        delays = None
        if with_delays:
            delays = tuple(float(k) / fs for k in rng.integers(0, span - base + 1, count))
        dopplers = tuple(float(f) for f in rng.uniform(-max_doppler, max_doppler, count)) if with_dopplers else None
        params = FalseTargetParams(count=count, gains=_unit_gains(rng, count), delays=delays, dopplers=dopplers)
        return base / fs, params

    def pulloff(mode: str) -> PullOffParams:
        peak_range = PULL_MARGIN * SPEED_OF_LIGHT / (2.0 * fs) if mode != "velocity" else None
        return PullOffParams(mode=mode, drag_speed=_uniform(rng, ranges.drag_speed),
                             drag_accel=_uniform(rng, ranges.drag_accel), peak_range=peak_range)

    if family == "RDFJ":
        base, params = false_targets(True, False)
        return RDFJSpec(base_delay=base, false_targets=params, **common)
    if family == "VDFJ":
        base, params = false_targets(False, True)
        return VDFJSpec(base_delay=base, false_targets=params, **common)
    if family == "RVDJ":
        base, params = false_targets(True, True)
        return RVDJSpec(base_delay=base, false_targets=params, **common)
    if family == "RGJ":
        base, params = false_targets(True, False, PULL_MARGIN)
        return RGJSpec(base_delay=base, false_targets=params, pulloff=pulloff("range"), **common)
    if family == "VGJ":
        base, params = false_targets(False, True)
        return VGJSpec(base_delay=base, false_targets=params, pulloff=pulloff("velocity"), **common)
    if family == "RVGJ":
        base, params = false_targets(True, True, PULL_MARGIN)
        return RVGJSpec(base_delay=base, false_targets=params, pulloff=pulloff("both"), **common)
    if family == "ISFJ":
        start = int(rng.integers(0, room + 1))
        return ISFJSpec(base_delay=start / fs, sampling=ranges.sampling, **common)
    if family == "ISRJ":
        sampling = ranges.sampling
        extent = sampling.slice_count(config.pulse_width, fs) * quantize(sampling.repeat_spacing, fs)
        if extent >= room:
            raise ConfigError(f"ISRJ repeat train ({extent} samples) does not fit the window")
        start = int(rng.integers(0, room - extent))
        return ISRJSpec(base_delay=start / fs, sampling=sampling, **common)
    if family == "CSJ":
        teeth = _integer(rng, ranges.comb_teeth)
        spread = 0.9 * config.bandwidth / 2
        jitter = rng.uniform(-1.0, 1.0, teeth) * config.bandwidth / (4 * teeth)
        freqs = np.clip(np.linspace(-spread, spread, teeth) + jitter, -0.49 * fs, 0.49 * fs)
        comb = CombParams(teeth=teeth, amplitudes=_unit_gains(rng, teeth),
                          frequencies=tuple(float(f) for f in freqs))
        return CSJSpec(comb=comb, **common)
    if family == "SSJ":
        count = _integer(rng, ranges.subpulses)
        sub_len = -(-pulse_len // count)
        start = int(rng.integers(0, room - sub_len + 1))
        return SSJSpec(base_delay=start / fs, smear=SmearParams(subpulses=count), **common)
    raise ConfigError(f"unknown jamming family '{family}'")


def draw_scene(protocol: str, label: int, rng: np.random.Generator,
               snr_db: Optional[float] = None) -> SceneSpec:
    """Single-label scene: the point-target class holds targets only, jamming classes one jammer only."""
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol '{protocol}'")
    if not 0 <= label < len(CLASS_NAMES):
        raise ConfigError(f"label {label} is outside 0..{len(CLASS_NAMES) - 1}")

    ranges = PROTOCOLS[protocol]
    config = draw_radar_config(ranges, rng)
    snr = snr_db if snr_db is not None else _uniform(rng, ranges.snr)
    inr = snr_db if snr_db is not None else _uniform(rng, ranges.snr)
    cnr = _uniform(rng, ranges.cnr) if ranges.cnr is not None else None

    targets: List[TargetSpec] = []
    jammers = []
    if label == 0:
        targets = [draw_target(config, rng, ranges.max_velocity) for _ in range(_integer(rng, ranges.targets))]
    else:
        jammers = [draw_jammer(CLASS_NAMES[label], config, ranges, rng)]

    return SceneSpec(config=config, targets=targets, jammers=jammers, snr=snr, inr=inr, cnr=cnr,
                     seed=int(rng.integers(0, 2 ** 63)))


def sample_rng(seed: int, label: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, label, index]))


def generate_dataset(protocol: str, per_class: int, seed: int, snr_db: Optional[float] = None,
                     classes: Optional[Sequence[int]] = None,
                     workers: Optional[WorkScheduler] = None) -> Tuple[List[LabeledSample], DatasetManifest]:
    """
    Generate ``per_class`` samples for every class under a protocol.

    Args:
        protocol: "train" or "test"
        per_class: samples per class
        seed: dataset seed; sample (label, index) draws from SeedSequence([seed, label, index])
        snr_db: fixed SNR/INR instead of the protocol range
        classes: subset of class labels (default all eleven)

    Returns:
        samples in (label, index) order and the manifest describing every draw
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol '{protocol}'")
    if per_class < 1:
        raise ConfigError(f"per_class must be at least 1, got {per_class}")

    labels = list(classes) if classes is not None else list(range(len(CLASS_NAMES)))
    jobs = [(label, index) for label in labels for index in range(per_class)]
    if not jobs:
        raise ConfigError("no classes selected")
    logger.info(f"Generating {len(jobs)} {protocol}-protocol samples (seed {seed})")

    def build(job: Tuple[int, int]) -> Tuple[LabeledSample, SampleRecord]:
        label, index = job
        scene = draw_scene(protocol, label, sample_rng(seed, label, index), snr_db)
        sample = LabeledSample(compose_scene(scene), label)
        return sample, SampleRecord(index=index, label=label, class_name=CLASS_NAMES[label], scene=scene)

    built = (workers or default_scheduler).map(build, jobs, description="samples")
    samples = [sample for sample, _ in built]

    ranges = PROTOCOLS[protocol]
    first = built[0][1].scene.config
    manifest = DatasetManifest(
        protocol=protocol,
        seed=seed,
        per_class=per_class,
        num_samples=len(samples),
        num_pulses=first.num_pulses,
        fast_time_samples=first.num_samples,
        nominal_fast_time_samples=first.nominal_samples if ranges.pri[0] == ranges.pri[1] else None,
        snr_db=snr_db,
        samples=[record for _, record in built],
    )
    return samples, manifest
