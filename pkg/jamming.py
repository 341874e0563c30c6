"""
DRFM jamming generators.

Every generator starts from the intercepted pulse r (see waveform.drfm_intercept)
and returns a PulseMatrix with one row per pulse. The receive-array factor is not
applied here; scene composition multiplies each source by its spatial gain.

Dense false targets (RDFJ, VDFJ, RVDJ) and their pull-off variants (RGJ, VGJ,
RVGJ) share a single row builder, so the reductions between them hold bit for bit.
Time parameters are quantized to whole samples (half up) before use.
"""

from dataclasses import dataclass
from typing import Dict, Callable
import logging

import numpy as np

from errors import DimensionError, ParameterError, PulseTruncationError
from models import (
    CombParams, FalseTargetParams, PullOffParams, RadarConfig, SamplingParams, SmearParams,
    JammingFamily, quantize,
)
from waveform import SPEED_OF_LIGHT, ComplexSeries, PulseMatrix, drfm_intercept

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PullOffOffset:
    """Per-pulse deviation added to the false-target delays/Dopplers."""
    delay: float = 0.0
    doppler: float = 0.0
    vanished: bool = False


def _check_series(r: ComplexSeries, config: RadarConfig):
    if len(r) != config.num_samples:
        raise DimensionError(f"intercept has {len(r)} samples, window has {config.num_samples}")


def _shift(samples: np.ndarray, shift: int, length: int) -> np.ndarray:
    """Delay by ``shift`` samples inside a window; nonzero samples may not fall off the end."""
    if shift < 0:
        raise ParameterError(f"negative delay of {shift} samples")
    out = np.zeros(length, dtype=np.complex128)
    if shift >= length:
        if np.any(samples != 0):
            raise PulseTruncationError(f"delay of {shift} samples leaves the {length}-sample window")
        return out
    if np.any(samples[length - shift:] != 0):
        raise PulseTruncationError(f"delay of {shift} samples pushes the copy past the {length}-sample window")
    out[shift:] = samples[:length - shift]
    return out


def _false_target_rows(r: ComplexSeries, gains: np.ndarray, delay_samples: np.ndarray,
                       dopplers: np.ndarray, active: np.ndarray, config: RadarConfig) -> np.ndarray:
    """
    Row q = sum_i gains[i] * r(n - delay_samples[q, i]) * exp(j*2*pi*dopplers[q, i]*(q*Tr + n/fs)).

    Inactive rows stay zero. Copies with zero Doppler skip the phase term.
    """
    Q, L = config.shape
    t_fast = np.arange(L) / config.sample_rate
    out = np.zeros((Q, L), dtype=np.complex128)
    shifted_cache: Dict[int, np.ndarray] = {}

    for q in range(Q):
        if not active[q]:
            continue
        row = np.zeros(L, dtype=np.complex128)
        for i in range(gains.shape[0]):
            k = int(delay_samples[q, i])
            if k not in shifted_cache:
                shifted_cache[k] = _shift(r.samples, k, L)
            copy = shifted_cache[k]
            f = dopplers[q, i]
            if f != 0.0:
                copy = copy * np.exp(2j * np.pi * f * (q * config.pri + t_fast))
            row += gains[i] * copy
        out[q] = row
    return out


def _constant_rows(values: np.ndarray, num_pulses: int) -> np.ndarray:
    return np.broadcast_to(values, (num_pulses, values.shape[0]))


def _delays_to_samples(delays: np.ndarray, sample_rate: float) -> np.ndarray:
    return np.array([quantize(d, sample_rate) for d in np.ravel(delays)], dtype=np.int64).reshape(np.shape(delays))


def _check_unambiguous(dopplers: np.ndarray, config: RadarConfig):
    if np.any(np.abs(dopplers) >= config.prf / 2):
        logger.warning("false-target Doppler offsets reach the PRF/2 ambiguity limit")


def rdfj(r: ComplexSeries, p: FalseTargetParams, config: RadarConfig) -> PulseMatrix:
    """Range-dense false targets: N1 delayed, scaled copies of r on every pulse."""
    _check_series(r, config)
    Q = config.num_pulses
    delays = _constant_rows(_delays_to_samples(p.delay_vector(), config.sample_rate), Q)
    dopplers = np.zeros((Q, p.count))
    data = _false_target_rows(r, p.gain_vector(), delays, dopplers, np.ones(Q, dtype=bool), config)
    return PulseMatrix(data, config)


def vdfj(r: ComplexSeries, p: FalseTargetParams, config: RadarConfig, delay: float = 0.0) -> PulseMatrix:
    """Velocity-dense false targets: a common delay, per-copy Doppler offsets coherent across pulses."""
    _check_series(r, config)
    Q = config.num_pulses
    dopplers = p.doppler_vector()
    _check_unambiguous(dopplers, config)
    delays = np.full((Q, p.count), quantize(delay, config.sample_rate), dtype=np.int64)
    data = _false_target_rows(r, p.gain_vector(), delays, _constant_rows(dopplers, Q),
                              np.ones(Q, dtype=bool), config)
    return PulseMatrix(data, config)


def rvdj(r: ComplexSeries, p: FalseTargetParams, config: RadarConfig) -> PulseMatrix:
    """Joint range-velocity dense false targets: each copy has its own (delay, Doppler) pair."""
    _check_series(r, config)
    Q = config.num_pulses
    dopplers = p.doppler_vector()
    _check_unambiguous(dopplers, config)
    delays = _constant_rows(_delays_to_samples(p.delay_vector(), config.sample_rate), Q)
    data = _false_target_rows(r, p.gain_vector(), delays, _constant_rows(dopplers, Q),
                              np.ones(Q, dtype=bool), config)
    return PulseMatrix(data, config)


def _sampling_gate(r: ComplexSeries, p: SamplingParams, config: RadarConfig) -> np.ndarray:
    fs = config.sample_rate
    width = quantize(p.slice_width, fs)
    period = quantize(p.slice_period, fs)
    if width < 1:
        raise ParameterError(f"slice width {p.slice_width} s is shorter than one sample")
    if period < width:
        raise ParameterError("slice period is shorter than the slice width")

    slices = p.slice_count(config.pulse_width, fs)
    first, last = r.support()
    gate = np.zeros(len(r), dtype=bool)
    if last < first:
        return gate
    n = np.arange(len(r)) - first
    valid = n >= 0
    gate[valid] = (n[valid] % period < width) & (n[valid] // period < slices)
    return gate


def _isfj_row(r: ComplexSeries, p: SamplingParams, tau_c: float, config: RadarConfig) -> np.ndarray:
    _check_series(r, config)
    gate = _sampling_gate(r, p, config)
    gated = np.where(gate, r.samples, 0)
    return _shift(gated, quantize(tau_c, config.sample_rate), config.num_samples)


def isfj(r: ComplexSeries, p: SamplingParams, tau_c: float, config: RadarConfig) -> PulseMatrix:
    """Interrupted-sampling forwarding: r gated by a periodic slice train from its leading edge, delayed by tau_c."""
    row = _isfj_row(r, p, tau_c, config)
    return PulseMatrix(np.tile(row, (config.num_pulses, 1)), config)


def isrj(r: ComplexSeries, p: SamplingParams, tau_c: float, config: RadarConfig) -> PulseMatrix:
    """Interrupted-sampling repeater: the ISFJ output convolved with a delta train d*tau_a, d = 0..R."""
    gated = _isfj_row(r, p, tau_c, config)
    fs = config.sample_rate
    L = config.num_samples

    spacing = quantize(p.repeat_spacing, fs)
    if spacing < 1:
        raise ParameterError(f"repeat spacing {p.repeat_spacing} s is shorter than one sample")
    repeats = p.repeat_count if p.repeat_count is not None else p.slice_count(config.pulse_width, fs)

    nonzero = np.flatnonzero(gated)
    if nonzero.size and nonzero[-1] + repeats * spacing >= L:
        raise PulseTruncationError(
            f"{repeats} repeats at {spacing}-sample spacing overrun the {L}-sample window")

    row = np.zeros(L, dtype=np.complex128)
    for d in range(repeats + 1):
        offset = d * spacing
        row[offset:] += gated[:L - offset]
    return PulseMatrix(np.tile(row, (config.num_pulses, 1)), config)


def ssj(r: ComplexSeries, p: SmearParams, config: RadarConfig) -> PulseMatrix:
    """Smeared spectrum: the pulse decimated by N_s and replayed N_s times at Tp/N_s spacing."""
    _check_series(r, config)
    count = p.subpulses
    pulse_len = config.pulse_samples
    if count > pulse_len:
        raise ParameterError(f"{count} sub-pulses exceed the {pulse_len}-sample pulse")

    L = config.num_samples
    row = np.zeros(L, dtype=np.complex128)
    first, last = r.support()
    if last >= first:
        compressed = r.samples[first:first + pulse_len][::count]
        for i in range(1, count + 1):
            # round(i * P / N_s), half up, in integer arithmetic
            start = first + (2 * i * pulse_len + count) // (2 * count)
            end = start + compressed.shape[0]
            if end > L:
                raise PulseTruncationError(f"sub-pulse {i} ends at sample {end}, past the {L}-sample window")
            row[start:end] += compressed
    return PulseMatrix(np.tile(row, (config.num_pulses, 1)), config)


def csj(p: CombParams, config: RadarConfig) -> PulseMatrix:
    """Comb spectrum: K tones persisting over the whole window."""
    fs = config.sample_rate
    freqs = np.asarray(p.frequencies, dtype=np.float64)
    if np.any(np.abs(freqs) >= fs / 2):
        raise ParameterError(f"comb frequencies must stay below fs/2 = {fs / 2} Hz")

    n = np.arange(config.num_samples)
    row = np.zeros(config.num_samples, dtype=np.complex128)
    amplitudes = np.asarray(p.amplitudes, dtype=np.float64)
    for (re, im), f in zip(amplitudes, freqs):
        row += complex(re, im) * np.exp(2j * np.pi * f * n / fs)
    return PulseMatrix(np.tile(row, (config.num_pulses, 1)), config)


def pulloff_trajectory(p: PullOffParams, cpi_duration: float, pulse_index: int,
                       pri: float, carrier_f0: float) -> PullOffOffset:
    """
    Offset of pulse ``pulse_index`` in the stand-off / pull-off / close schedule.

    Stand-off pulses get no offset, pulling pulses a kinematic deviation measured
    from the start of the pull, and closing pulses are flagged as vanished.
    """
    total = p.standoff_frac + p.pull_frac + p.close_frac
    if abs(total - 1.0) > 1e-9:
        raise ParameterError(f"pull-off period fractions sum to {total}, expected 1")
    num_pulses = int(round(cpi_duration / pri))
    if not 0 <= pulse_index < num_pulses:
        raise ParameterError(f"pulse index {pulse_index} is outside 0..{num_pulses - 1}")

    t = pulse_index * pri
    t1 = p.standoff_frac * cpi_duration
    t2 = (p.standoff_frac + p.pull_frac) * cpi_duration
    if t < t1:
        return PullOffOffset()
    if t >= t2:
        return PullOffOffset(vanished=True)

    elapsed = t - t1
    delay = 0.0
    doppler = 0.0
    if p.mode in ("range", "both"):
        distance = p.drag_speed * elapsed + 0.5 * p.drag_accel * elapsed ** 2
        if p.peak_range is not None:
            distance = min(distance, p.peak_range)
        delay = 2.0 * distance / SPEED_OF_LIGHT
    if p.mode in ("velocity", "both"):
        speed = p.drag_speed + p.drag_accel * elapsed
        if p.peak_velocity is not None:
            speed = min(speed, p.peak_velocity)
        doppler = 2.0 * speed * carrier_f0 / SPEED_OF_LIGHT
    return PullOffOffset(delay=delay, doppler=doppler, vanished=False)


def apply_pulloff(r: ComplexSeries, p: PullOffParams, f_params: FalseTargetParams,
                  config: RadarConfig) -> PulseMatrix:
    """
    Gate-pull-off jamming on top of the dense false-target generator selected by the mode:
    range -> RDFJ, velocity -> VDFJ, both -> RVDJ. Closing-period rows are zero.
    """
    _check_series(r, config)
    Q = config.num_pulses
    cpi = Q * config.pri
    fs = config.sample_rate

    if p.mode == "range":
        base_delays, base_dopplers = f_params.delay_vector(), np.zeros(f_params.count)
    elif p.mode == "velocity":
        base_delays, base_dopplers = np.zeros(f_params.count), f_params.doppler_vector()
    else:
        base_delays, base_dopplers = f_params.delay_vector(), f_params.doppler_vector()

    delays = np.zeros((Q, f_params.count), dtype=np.int64)
    dopplers = np.zeros((Q, f_params.count))
    active = np.ones(Q, dtype=bool)
    for q in range(Q):
        offset = pulloff_trajectory(p, cpi, q, config.pri, config.carrier_f0)
        active[q] = not offset.vanished
        delays[q] = _delays_to_samples(base_delays + offset.delay, fs)
        dopplers[q] = base_dopplers + offset.doppler

    data = _false_target_rows(r, f_params.gain_vector(), delays, dopplers, active, config)
    return PulseMatrix(data, config)


def generate_jamming(spec, config: RadarConfig) -> PulseMatrix:
    """Build the jamming matrix for any JammingSpec variant."""
    family = JammingFamily(spec.family)

    if family is JammingFamily.CSJ:
        return csj(spec.comb, config)

    if family in (JammingFamily.ISFJ, JammingFamily.ISRJ):
        # Gate is measured from the pulse leading edge; tau_c carries the forwarding delay
        r = drfm_intercept(config, spec.theta, 0.0, spec.velocity)
        tau_c = spec.gate_delay if spec.gate_delay is not None else spec.base_delay
        generator = isfj if family is JammingFamily.ISFJ else isrj
        return generator(r, spec.sampling, tau_c, config)

    r = drfm_intercept(config, spec.theta, spec.base_delay, spec.velocity)
    if family is JammingFamily.SSJ:
        return ssj(r, spec.smear, config)

    dense: Dict[JammingFamily, Callable[..., PulseMatrix]] = {
        JammingFamily.RDFJ: rdfj,
        JammingFamily.VDFJ: vdfj,
        JammingFamily.RVDJ: rvdj,
    }
    if family in dense:
        return dense[family](r, spec.false_targets, config)
    return apply_pulloff(r, spec.pulloff, spec.false_targets, config)
