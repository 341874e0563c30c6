from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, model_validator
from typing import Annotated, Any, ClassVar, Dict, List, Literal, Optional, Tuple, Union
from datetime import datetime
from enum import Enum
from pathlib import Path
import math

import numpy as np


ComplexPair = Tuple[float, float]

# Class label order used by datasets, metrics and confusion matrices
CLASS_NAMES: Tuple[str, ...] = (
    "target", "RDFJ", "VDFJ", "RVDJ", "ISFJ", "ISRJ", "CSJ", "RGJ", "VGJ", "RVGJ", "SSJ",
)
BINARY_CLASS_NAMES: Tuple[str, ...] = ("target", "interference")
TARGET_LABEL = 0
MAX_SEED = 2 ** 64


def quantize(seconds: float, sample_rate: float) -> int:
    """Convert a duration to a whole number of samples, rounding half up."""
    return int(math.floor(seconds * sample_rate + 0.5))


def as_complex(pairs) -> np.ndarray:
    """(re, im) pairs -> complex128 vector."""
    arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    return arr[:, 0] + 1j * arr[:, 1]


def complex_pairs(values) -> Tuple[ComplexPair, ...]:
    """Complex vector -> tuple of (re, im) pairs for JSON."""
    return tuple((float(v.real), float(v.imag)) for v in np.atleast_1d(np.asarray(values, dtype=np.complex128)))


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# Radar and scene
# ---------------------------------------------------------------------------

class RadarConfig(StrictModel):
    """Radar, array and sampling parameters for one coherent processing interval."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    num_tx: int = Field(1, ge=1, description="Transmit elements M")
    num_rx: int = Field(1, ge=1, description="Receive elements N")
    num_pulses: int = Field(128, ge=1, description="Pulses per CPI Q")
    carrier_f0: float = Field(10e9, gt=0, description="Carrier frequency in Hz")
    bandwidth: float = Field(40e6, gt=0, description="Chirp bandwidth in Hz")
    sample_rate: float = Field(48e6, gt=0, description="Complex baseband sample rate in Hz")
    pulse_width: float = Field(1e-6, gt=0, description="Pulse width Tp in seconds")
    pri: float = Field(5e-6, gt=0, description="Pulse repetition interval Tr in seconds")
    guard_samples: int = Field(1, ge=0, description="Samples appended after round(Tr*fs)")
    fast_time_samples: Optional[int] = Field(None, ge=1, description="Recorded window override")
    tx_weights: Optional[Tuple[ComplexPair, ...]] = Field(None, description="w_t as (re, im) pairs")
    rx_weights: Optional[Tuple[ComplexPair, ...]] = Field(None, description="w_r as (re, im) pairs; default steers to the look angle")
    chirp_up: bool = True

    @model_validator(mode="after")
    def _check_timing(self):
        if self.pulse_width >= self.pri:
            raise ValueError(f"pulse width {self.pulse_width} must be shorter than the PRI {self.pri}")
        if self.bandwidth > self.sample_rate:
            raise ValueError(f"bandwidth {self.bandwidth} exceeds the sample rate {self.sample_rate}")
        if self.tx_weights is not None and len(self.tx_weights) != self.num_tx:
            raise ValueError(f"tx_weights has {len(self.tx_weights)} entries, expected {self.num_tx}")
        if self.rx_weights is not None and len(self.rx_weights) != self.num_rx:
            raise ValueError(f"rx_weights has {len(self.rx_weights)} entries, expected {self.num_rx}")
        for weights in (self.tx_weights, self.rx_weights):
            if weights is not None and not np.all(np.isfinite(np.asarray(weights, dtype=np.float64))):
                raise ValueError("array weights must be finite")
        if self.pulse_samples < 1:
            raise ValueError("pulse is shorter than one sample")
        if self.pulse_samples > self.num_samples:
            raise ValueError(f"pulse ({self.pulse_samples} samples) exceeds the window ({self.num_samples})")
        return self

    @property
    def nominal_samples(self) -> int:
        return quantize(self.pri, self.sample_rate)

    @property
    def num_samples(self) -> int:
        """Fast-time length L of the recorded window."""
        if self.fast_time_samples is not None:
            return self.fast_time_samples
        return self.nominal_samples + self.guard_samples

    @property
    def pulse_samples(self) -> int:
        return quantize(self.pulse_width, self.sample_rate)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.num_pulses, self.num_samples)

    @property
    def prf(self) -> float:
        return 1.0 / self.pri

    def tx_weight_vector(self) -> np.ndarray:
        if self.tx_weights is None:
            return np.ones(self.num_tx, dtype=np.complex128)
        return as_complex(self.tx_weights)


class TargetSpec(StrictModel):
    """Point target."""

    range_m: float = Field(..., ge=0, description="Range in meters")
    velocity: float = Field(0.0, description="Radial velocity in m/s")
    angle: float = Field(0.0, gt=-math.pi / 2, lt=math.pi / 2, description="Azimuth in radians")
    amplitude: ComplexPair = (1.0, 0.0)


# ---------------------------------------------------------------------------
# Jamming parameters
# ---------------------------------------------------------------------------

class JammingFamily(str, Enum):
    RDFJ = "RDFJ"
    VDFJ = "VDFJ"
    RVDJ = "RVDJ"
    ISFJ = "ISFJ"
    ISRJ = "ISRJ"
    CSJ = "CSJ"
    SSJ = "SSJ"
    RGJ = "RGJ"
    VGJ = "VGJ"
    RVGJ = "RVGJ"


class FalseTargetParams(StrictModel):
    """Dense false-target train: per-copy complex gains, delays and Doppler offsets."""

    count: int = Field(..., ge=1, description="Number of false targets N1")
    gains: Tuple[ComplexPair, ...]
    delays: Optional[Tuple[float, ...]] = Field(None, description="Per-copy delay offsets in seconds")
    dopplers: Optional[Tuple[float, ...]] = Field(None, description="Per-copy Doppler offsets in Hz")

    @model_validator(mode="after")
    def _check_lengths(self):
        for name in ("gains", "delays", "dopplers"):
            values = getattr(self, name)
            if values is not None and len(values) != self.count:
                raise ValueError(f"{name} has {len(values)} entries, expected {self.count}")
        if self.delays is not None and min(self.delays) < 0:
            raise ValueError("false-target delays must be non-negative")
        return self

    def gain_vector(self) -> np.ndarray:
        return as_complex(self.gains)

    def delay_vector(self) -> np.ndarray:
        if self.delays is None:
            return np.zeros(self.count)
        return np.asarray(self.delays, dtype=np.float64)

    def doppler_vector(self) -> np.ndarray:
        if self.dopplers is None:
            return np.zeros(self.count)
        return np.asarray(self.dopplers, dtype=np.float64)


class SamplingParams(StrictModel):
    """Intermittent sampling gate (ISFJ) and repeat train (ISRJ)."""

    slice_width: float = Field(0.05e-6, gt=0, description="Gate open time in seconds")
    slice_period: float = Field(0.25e-6, gt=0, description="Gate period T_a in seconds")
    repeat_spacing: float = Field(0.05e-6, gt=0, description="Repeat spacing tau_a in seconds")
    repeat_count: Optional[int] = Field(None, ge=0, description="Upper index of the repeat train; defaults to D")

    @model_validator(mode="after")
    def _check_gate(self):
        if self.slice_width > self.slice_period:
            raise ValueError("slice_width must not exceed slice_period")
        return self

    def slice_count(self, pulse_width: float, sample_rate: float) -> int:
        """D = floor(Tp / T_a) + 1, evaluated on sample counts."""
        period = max(quantize(self.slice_period, sample_rate), 1)
        return quantize(pulse_width, sample_rate) // period + 1


class CombParams(StrictModel):
    teeth: int = Field(..., ge=1, description="Number of comb teeth K")
    amplitudes: Tuple[ComplexPair, ...]
    frequencies: Tuple[float, ...]

    @model_validator(mode="after")
    def _check_lengths(self):
        if len(self.amplitudes) != self.teeth or len(self.frequencies) != self.teeth:
            raise ValueError(f"comb needs {self.teeth} amplitudes and frequencies")
        return self


class SmearParams(StrictModel):
    subpulses: int = Field(5, ge=2, description="Number of sub-pulses N_s")


class PullOffParams(StrictModel):
    """Stand-off / pull-off / close schedule over one CPI."""

    mode: Literal["range", "velocity", "both"]
    drag_speed: float = Field(0.0, ge=0, description="m/s")
    drag_accel: float = Field(0.0, ge=0, description="m/s^2")
    standoff_frac: float = Field(0.2, ge=0)
    pull_frac: float = Field(0.6, ge=0)
    close_frac: float = Field(0.2, ge=0)
    peak_range: Optional[float] = Field(None, gt=0, description="Range deviation cap in meters")
    peak_velocity: Optional[float] = Field(None, gt=0, description="Velocity deviation cap in m/s")

    @model_validator(mode="after")
    def _check_fractions(self):
        total = self.standoff_frac + self.pull_frac + self.close_frac
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"pull-off period fractions sum to {total}, expected 1")
        return self


class _JammerBase(StrictModel):
    theta: float = Field(0.0, gt=-math.pi / 2, lt=math.pi / 2, description="Jammer azimuth in radians")
    base_delay: float = Field(0.0, ge=0, description="Intercept delay tau in seconds")
    velocity: float = Field(0.0, description="Radial velocity of the mimicked platform in m/s")
    seed: int = Field(0, ge=0, lt=MAX_SEED)


class RDFJSpec(_JammerBase):
    family: Literal["RDFJ"] = "RDFJ"
    false_targets: FalseTargetParams


class VDFJSpec(_JammerBase):
    family: Literal["VDFJ"] = "VDFJ"
    false_targets: FalseTargetParams


class RVDJSpec(_JammerBase):
    family: Literal["RVDJ"] = "RVDJ"
    false_targets: FalseTargetParams


class ISFJSpec(_JammerBase):
    family: Literal["ISFJ"] = "ISFJ"
    sampling: SamplingParams = Field(default_factory=SamplingParams)
    gate_delay: Optional[float] = Field(None, ge=0, description="tau_c; defaults to base_delay")


class ISRJSpec(_JammerBase):
    family: Literal["ISRJ"] = "ISRJ"
    sampling: SamplingParams = Field(default_factory=SamplingParams)
    gate_delay: Optional[float] = Field(None, ge=0, description="tau_c; defaults to base_delay")


class CSJSpec(_JammerBase):
    family: Literal["CSJ"] = "CSJ"
    comb: CombParams


class SSJSpec(_JammerBase):
    family: Literal["SSJ"] = "SSJ"
    smear: SmearParams = Field(default_factory=SmearParams)


class _PullOffSpec(_JammerBase):
    false_targets: FalseTargetParams
    pulloff: PullOffParams

    expected_mode: ClassVar[str] = "range"

    @model_validator(mode="after")
    def _check_mode(self):
        if self.pulloff.mode != self.expected_mode:
            raise ValueError(f"{self.family} requires pull-off mode '{self.expected_mode}', got '{self.pulloff.mode}'")
        return self


class RGJSpec(_PullOffSpec):
    family: Literal["RGJ"] = "RGJ"
    expected_mode: ClassVar[str] = "range"


class VGJSpec(_PullOffSpec):
    family: Literal["VGJ"] = "VGJ"
    expected_mode: ClassVar[str] = "velocity"


class RVGJSpec(_PullOffSpec):
    family: Literal["RVGJ"] = "RVGJ"
    expected_mode: ClassVar[str] = "both"


JammingSpec = Annotated[
    Union[RDFJSpec, VDFJSpec, RVDJSpec, ISFJSpec, ISRJSpec, CSJSpec, SSJSpec, RGJSpec, VGJSpec, RVGJSpec],
    Field(discriminator="family"),
]
jamming_spec_adapter = TypeAdapter(JammingSpec)


class SceneSpec(StrictModel):
    """Everything needed to synthesize one echo matrix."""

    config: RadarConfig = Field(default_factory=RadarConfig)
    targets: List[TargetSpec] = Field(default_factory=list)
    jammers: List[JammingSpec] = Field(default_factory=list)
    snr: float = Field(10.0, description="Target power over unit noise, dB")
    inr: float = Field(10.0, description="Jammer power over unit noise, dB")
    cnr: Optional[float] = Field(None, description="Clutter power over unit noise, dB; None disables clutter")
    look_angle: float = Field(0.0, gt=-math.pi / 2, lt=math.pi / 2)
    seed: int = Field(0, ge=0, lt=MAX_SEED)
    clutter_correlation: float = Field(0.9, ge=0, lt=1)


# ---------------------------------------------------------------------------
# Feature extraction, training and detection settings
# ---------------------------------------------------------------------------

class ScatterConfig(StrictModel):
    scales: int = Field(3, ge=1, description="Scale depth J")
    max_order: int = Field(2, ge=1, le=2)
    orientations: Literal[6] = 6
    input_channels: Literal[2] = 2
    first_len: int = Field(13, description="Level-1 biorthogonal filter length")
    qshift_len: int = Field(14, description="Quarter-shift filter length")
    smoothing_sigma: float = Field(2.0, gt=0, description="Gaussian width in output-grid cells")
    wrap_cells: int = Field(4, ge=0, description="Periodic margin in output-grid cells around each plane")
    mode: Literal["dtcwt", "raw"] = Field("dtcwt", description="'raw' pools the planes without scattering")

    def paths_per_plane(self) -> int:
        if self.mode == "raw":
            return 1
        J, K = self.scales, self.orientations
        paths = 1 + K * J
        if self.max_order >= 2:
            paths += K * K * J * (J - 1) // 2
        return paths

    def channel_count(self) -> int:
        return self.input_channels * self.paths_per_plane()


class TrainConfig(StrictModel):
    batch_size: int = Field(64, ge=1, description="N_B samples per batch (3*N_B views)")
    epochs: int = Field(50, ge=0)
    learning_rate: float = Field(5e-4, ge=0)
    temperature: float = Field(0.07, gt=0)
    augment_noise_sigma: float = Field(0.1, ge=0)
    max_shift: int = Field(8, ge=0)
    seed: int = Field(0, ge=0, lt=MAX_SEED)
    embedding_dim: int = Field(64, ge=1)
    attention_reduction: int = Field(4, ge=1)
    use_attention: bool = True
    binary: bool = Field(False, description="Collapse labels to target vs interference")


class DetectionConfig(StrictModel):
    window_len: Optional[int] = Field(None, ge=1, description="L0; defaults to the pulse length")
    threshold_frac: float = Field(0.5, gt=0, le=1)
    target_class: int = Field(0, ge=0)
    merge_tol: float = Field(0.25, ge=0, lt=1, description="Relative valley depth that still joins two maxima")


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

class DatasetSection(StrictModel):
    protocol: Literal["train", "test"] = "train"
    per_class: int = Field(200, ge=1)
    snr_db: Optional[float] = Field(None, description="Fixed SNR/INR; None draws from the protocol range")
    export_features: bool = False


class SupportSection(StrictModel):
    protocol: Literal["train", "test"] = "train"
    per_class: int = Field(100, ge=1)
    snr_db: Optional[float] = None


class EvaluationSection(StrictModel):
    protocol: Literal["train", "test"] = "test"
    per_class: int = Field(100, ge=1)
    snrs: List[float] = Field(default_factory=lambda: [-10.0, -6.0, -3.0, 0.0, 10.0])
    export_embeddings: bool = False


class DetectionSection(DetectionConfig):
    scene_path: Optional[str] = None
    snr_db: float = 10.0
    inr_db: float = 10.0
    cnr_db: Optional[float] = None


class PathsSection(StrictModel):
    output_dir: Optional[str] = Field(None, description="Defaults to settings.artifacts_dir")
    dataset: str = "train_dataset.bin"
    features: str = "train_features.bin"
    weights: str = "encoder"
    loss_curve: str = "loss_curve.csv"
    prototypes: str = "prototypes.json"
    profile: str = "profile.csv"
    detections: str = "detections.json"

    def resolve(self, name: str, default_dir: str) -> Path:
        path = Path(getattr(self, name))
        if path.is_absolute():
            return path
        return Path(self.output_dir or default_dir) / path


class WorkbenchConfig(StrictModel):
    seed: int = Field(0, ge=0, lt=MAX_SEED)
    radar: RadarConfig = Field(default_factory=RadarConfig, description="Radar used by the reference detection scene")
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    scatter: ScatterConfig = Field(default_factory=ScatterConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    support: SupportSection = Field(default_factory=SupportSection)
    evaluation: EvaluationSection = Field(default_factory=EvaluationSection)
    detection: DetectionSection = Field(default_factory=DetectionSection)
    paths: PathsSection = Field(default_factory=PathsSection)


class RunConfig(StrictModel):
    command: Literal["gen", "train", "eval", "detect", "selftest"]
    config_path: Optional[str] = None
    overrides: Dict[str, str] = Field(default_factory=dict)
    seed: Optional[int] = Field(None, ge=0, lt=MAX_SEED)


# ---------------------------------------------------------------------------
# Artifact manifests and reports
# ---------------------------------------------------------------------------

class SampleRecord(StrictModel):
    index: int
    label: int
    class_name: str
    scene: SceneSpec


class DatasetManifest(StrictModel):
    format: Literal["AWSPDS01"] = "AWSPDS01"
    protocol: Literal["train", "test"]
    seed: int
    per_class: int
    num_samples: int
    num_pulses: int
    fast_time_samples: int
    nominal_fast_time_samples: Optional[int] = Field(None, description="round(Tr*fs) when the PRI is fixed")
    snr_db: Optional[float] = None
    classes: List[str] = Field(default_factory=lambda: list(CLASS_NAMES))
    samples: List[SampleRecord] = Field(default_factory=list)


class FeatureManifest(StrictModel):
    count: int
    channels: List[str]
    height: int
    width: int
    labels: List[int] = Field(default_factory=list)


class TensorEntry(StrictModel):
    name: str
    shape: List[int]
    offset: int
    dtype: Literal["f64"] = "f64"


class WeightsManifest(StrictModel):
    blob: str
    tensors: List[TensorEntry]
    metadata: Dict[str, Any] = Field(default_factory=dict)


class PrototypeRecord(StrictModel):
    class_ids: List[int]
    centers: List[List[float]]


class MetricsReport(StrictModel):
    snr_db: Optional[float] = None
    num_samples: int
    accuracy: float
    macro_f1: float
    per_class_f1: List[float]
    per_class_precision: List[float]
    per_class_recall: List[float]
    confusion: List[List[int]]
    class_names: List[str]
    num_parameters: Optional[int] = None
    generated_at: datetime = Field(default_factory=datetime.utcnow)


class DetectionRecord(StrictModel):
    bin: int = Field(..., description="Index into the accumulated profile")
    peak: float
    target_start: int = Field(..., description="Estimated fast-time bin of the pulse leading edge")


class DetectionReport(StrictModel):
    window_len: int
    threshold: float
    detections: List[DetectionRecord]
    true_target_bin: Optional[int] = None
    jammer_bins: List[int] = Field(default_factory=list)
