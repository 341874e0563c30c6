"""
Transmit waveform, array geometry and DRFM intercept primitives.

Conventions used by every generator built on top of this module:
- fast-time sample 0 is the transmit leading edge; delays are quantized to the
  nearest whole sample (half up)
- uniform linear arrays with half-wavelength spacing, so element n of a steering
  vector is exp(j*pi*n*sin(theta))
- the speed of light is fixed at 299 792 458 m/s

All functions are pure and safe to call from any number of threads.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple
import logging
import math

import numpy as np

from errors import DimensionError, NumericError, ParameterError, PulseTruncationError
from models import RadarConfig, as_complex, quantize

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ComplexSeries:
    """Sampled complex baseband signal."""
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        if samples.ndim != 1:
            raise DimensionError(f"series must be one-dimensional, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise NumericError("series contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def support(self) -> Tuple[int, int]:
        """[first, last] indices of nonzero samples, or (0, -1) when empty."""
        nonzero = np.flatnonzero(self.samples)
        if nonzero.size == 0:
            return 0, -1
        return int(nonzero[0]), int(nonzero[-1])


@dataclass(frozen=True)
class PulseMatrix:
    """Slow-time x fast-time echo matrix tied to the radar configuration that produced it."""
    data: np.ndarray
    config: RadarConfig

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.shape != self.config.shape:
            raise DimensionError(f"matrix shape {data.shape} does not match configuration {self.config.shape}")
        if not np.all(np.isfinite(data)):
            raise NumericError("pulse matrix contains non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def num_pulses(self) -> int:
        return self.data.shape[0]

    @property
    def num_samples(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "PulseMatrix":
        return PulseMatrix(data, self.config)

    def energy(self) -> float:
        return float(np.sum(np.abs(self.data) ** 2))


def lfm_baseband(pulse_width: float, bandwidth: float, sample_rate: float, up: bool = True) -> ComplexSeries:
    """
    Unit-modulus linear FM pulse sweeping -B/2..B/2, centered in the pulse.

    Args:
        pulse_width: Tp in seconds
        bandwidth: B in Hz, at most the sample rate
        sample_rate: fs in Hz
        up: sweep direction

    Returns:
        round(Tp*fs) samples of exp(+-j*pi*(B/Tp)*(t - Tp/2)^2)
    """
    if pulse_width <= 0 or bandwidth <= 0 or sample_rate <= 0:
        raise ParameterError(f"pulse width, bandwidth and sample rate must be positive "
                             f"(got {pulse_width}, {bandwidth}, {sample_rate})")
    if bandwidth > sample_rate:
        raise ParameterError(f"bandwidth {bandwidth} Hz exceeds the complex sample rate {sample_rate} Hz")

    n = quantize(pulse_width, sample_rate)
    if n < 1:
        raise ParameterError("pulse is shorter than one sample")

    t = np.arange(n) / sample_rate
    sign = 1.0 if up else -1.0
    phase = sign * np.pi * (bandwidth / pulse_width) * (t - pulse_width / 2) ** 2
    return ComplexSeries(np.exp(1j * phase), sample_rate)


def transmit_pulse(config: RadarConfig) -> ComplexSeries:
    return lfm_baseband(config.pulse_width, config.bandwidth, config.sample_rate, up=config.chirp_up)


def steering_vector(theta: float, n_elems: int) -> np.ndarray:
    """Half-wavelength ULA response: element n is exp(j*pi*n*sin(theta))."""
    if not abs(theta) < math.pi / 2:
        raise ParameterError(f"angle {theta} rad is outside (-pi/2, pi/2)")
    if n_elems < 1:
        raise ParameterError(f"array needs at least one element, got {n_elems}")
    n = np.arange(n_elems)
    return np.exp(1j * np.pi * n * math.sin(theta))


def receive_weights(config: RadarConfig, look_angle: float) -> np.ndarray:
    """Configured w_r, or the steering vector of the look direction."""
    if config.rx_weights is not None:
        return as_complex(config.rx_weights)
    return steering_vector(look_angle, config.num_rx)


def doppler_frequency(velocity: float, carrier_f0: float) -> float:
    """Two-way Doppler shift 2*v*f0/c in Hz."""
    return 2.0 * velocity * carrier_f0 / SPEED_OF_LIGHT


def spatial_gain(weights, theta: float, n_elems: Optional[int] = None) -> complex:
    """Beamformer response w^H a(theta)."""
    w = np.asarray(weights, dtype=np.complex128).ravel()
    if n_elems is not None and w.shape[0] != n_elems:
        raise DimensionError(f"{w.shape[0]} weights for an array of {n_elems} elements")
    # vdot conjugates its first argument
    return complex(np.vdot(w, steering_vector(theta, w.shape[0])))


def drfm_intercept(config: RadarConfig, theta: float, tau: float, velocity: float,
                   replay: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> ComplexSeries:
    """
    Signal captured by a DRFM at angle ``theta``: the transmit beam response
    times the delayed chirp, with the jammer's Doppler applied as exp(-j*2*pi*f_d*t).

    Every transmit element radiates the same chirp, so the element sum collapses to
    spatial_gain(w_t, theta). ``replay`` post-processes the captured samples
    (e.g. a replay quantizer) and must preserve the length.

    Raises:
        ParameterError: negative delay
        PulseTruncationError: the delayed pulse does not fit in the window
    """
    if tau < 0:
        raise ParameterError(f"intercept delay must be non-negative, got {tau}")

    pulse = transmit_pulse(config).samples
    length = config.num_samples
    start = quantize(tau, config.sample_rate)
    if start + pulse.shape[0] > length:
        raise PulseTruncationError(
            f"pulse delayed by {start} samples overruns the {length}-sample window")

    gain = spatial_gain(config.tx_weight_vector(), theta)
    samples = np.zeros(length, dtype=np.complex128)
    samples[start:start + pulse.shape[0]] = gain * pulse

    f_d = doppler_frequency(velocity, config.carrier_f0)
    if f_d != 0.0:
        n = np.arange(length)
        samples = samples * np.exp(-2j * np.pi * f_d * n / config.sample_rate)

    if replay is not None:
        samples = np.asarray(replay(samples), dtype=np.complex128)
        if samples.shape != (length,):
            raise DimensionError(f"replay hook changed the series shape to {samples.shape}")

    return ComplexSeries(samples, config.sample_rate)
