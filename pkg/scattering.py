"""
Dual-tree complex wavelet scattering.

The real and imaginary planes of a pulse matrix are scattered independently and
their channels concatenated, plane-major. Inside a plane the canonical order is

    s0                                   order 0, lowpass of the plane
    s1/j{j}k{k}     j = 1..J, k = 1..6   order 1, |x * psi_jk| * phi
    s2/j{a}k{b}-j{c}k{d}   c > a         order 2, ||x * psi_ab| * psi_cd| * phi

Orientations k = 1..6 follow the library's subband order (+15, +45, +75, -75,
-45, -15 degrees). Each plane is treated as periodic: it is wrapped out to a
multiple of 2^J plus `wrap_cells` grid cells on every side, scattered, and the
margin cropped away, so a circular shift of the input is a plain translation
for the transform. The extension is scaled down by the square root of its
worst-case sample repetition, so the map stays non-expansive.

Stability: every wavelet step uses the transform scaled by its frame bound, so
its analysis operator has norm at most 1. Each node that both emits a smoothed
output and propagates deeper splits its energy with a 1/sqrt(2) weight on each
branch, and smoothing is a normalized nonnegative Gaussian followed by
subsampling. The whole map is therefore non-expansive in the Frobenius norm.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Tuple, Union
import logging

import numpy as np
from dtcwt.coeffs import biort, qshift
from dtcwt.numpy import Pyramid, Transform1d, Transform2d
from dtcwt.numpy.lowlevel import coldfilt, colfilter
from scipy.ndimage import gaussian_filter

from errors import ConfigError, DimensionError, NumericError
from models import ScatterConfig
from scheduler import WorkScheduler, scheduler as default_scheduler
from waveform import PulseMatrix

logger = logging.getLogger(__name__)

ORIENTATIONS = 6
PLANES = ("re", "im")
BRANCH = 1.0 / np.sqrt(2.0)

# level-1 biorthogonal pairs by analysis lowpass/highpass length
FIRST_LEVEL_FILTERS: Dict[int, str] = {5: "near_sym_a", 7: "near_sym_a", 13: "near_sym_b", 19: "near_sym_b"}
QSHIFT_FILTERS: Dict[int, str] = {10: "qshift_a", 14: "qshift_b", 16: "qshift_c", 18: "qshift_d"}
# the shipped quarter-shift sets are tabulated to about 1e-6, so their highpass DC is not exactly 0
DC_LEAK_TOL = 1e-5


@dataclass(frozen=True)
class FilterBank:
    """Level-1 near-symmetric pair and quarter-shift pairs for levels >= 2 (tree a / tree b)."""
    first_name: str
    qshift_name: str
    h0o: np.ndarray
    g0o: np.ndarray
    h1o: np.ndarray
    g1o: np.ndarray
    h0a: np.ndarray
    h0b: np.ndarray
    g0a: np.ndarray
    g0b: np.ndarray
    h1a: np.ndarray
    h1b: np.ndarray
    g1a: np.ndarray
    g1b: np.ndarray
    transform: Transform2d = field(repr=False, compare=False)

    @property
    def key(self) -> Tuple[str, str]:
        return self.first_name, self.qshift_name

    def transform_1d(self) -> Transform1d:
        return Transform1d(biort=self.first_name, qshift=self.qshift_name)


@dataclass(frozen=True)
class DualTreeCoefficients:
    """Subbands of one real plane: highpasses[l] has shape (H/2^(l+1), W/2^(l+1), 6)."""
    highpasses: Tuple[np.ndarray, ...]
    lowpass: np.ndarray
    original_shape: Tuple[int, int]

    @property
    def levels(self) -> int:
        return len(self.highpasses)


@dataclass(frozen=True)
class ScatterFeatures:
    """Real channels x (H/2^J) x (W/2^J) feature tensor with its channel names."""
    tensor: np.ndarray
    channels: Tuple[str, ...]

    def __post_init__(self):
        if self.tensor.ndim != 3:
            raise DimensionError(f"feature tensor must be 3-D, got shape {self.tensor.shape}")
        if self.tensor.shape[0] != len(self.channels):
            raise DimensionError(f"{self.tensor.shape[0]} channels but {len(self.channels)} names")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.tensor.shape


def _flat(*arrays) -> Tuple[np.ndarray, ...]:
    return tuple(np.asarray(a, dtype=np.float64).ravel() for a in arrays)


@lru_cache(maxsize=None)
def build_filterbank(first_len: int = 13, qshift_len: int = 14) -> FilterBank:
    """
    Load the dual-tree coefficient sets.

    Args:
        first_len: level-1 filter length, 5/7 (near_sym_a) or 13/19 (near_sym_b)
        qshift_len: quarter-shift length, one of 10, 14, 16, 18

    Raises:
        ConfigError: odd quarter-shift length, no coefficient set of that length, or a highpass
            whose DC response exceeds DC_LEAK_TOL
    """
    if qshift_len % 2:
        raise ConfigError(f"quarter-shift filters have even length, got {qshift_len}")
    if first_len not in FIRST_LEVEL_FILTERS:
        raise ConfigError(f"no level-1 filter of length {first_len}; available: {sorted(FIRST_LEVEL_FILTERS)}")
    if qshift_len not in QSHIFT_FILTERS:
        raise ConfigError(f"no quarter-shift filter of length {qshift_len}; available: {sorted(QSHIFT_FILTERS)}")

    first_name = FIRST_LEVEL_FILTERS[first_len]
    qshift_name = QSHIFT_FILTERS[qshift_len]
    h0o, g0o, h1o, g1o = _flat(*biort(first_name))
    h0a, h0b, g0a, g0b, h1a, h1b, g1a, g1b = _flat(*qshift(qshift_name))
    leak = max(abs(np.sum(h)) for h in (h1o, h1a, h1b))
    if leak > DC_LEAK_TOL:
        raise ConfigError(f"highpass DC leak {leak:.2e} of {first_name}/{qshift_name} exceeds {DC_LEAK_TOL:.0e}")
    logger.debug(f"Loaded filter bank {first_name}/{qshift_name}")
    return FilterBank(
        first_name=first_name, qshift_name=qshift_name,
        h0o=h0o, g0o=g0o, h1o=h1o, g1o=g1o,
        h0a=h0a, h0b=h0b, g0a=g0a, g0b=g0b, h1a=h1a, h1b=h1b, g1a=g1a, g1b=g1b,
        transform=Transform2d(biort=first_name, qshift=qshift_name),
    )


def dtcwt_forward(plane: np.ndarray, bank: FilterBank, levels: int) -> DualTreeCoefficients:
    """J-level 2-D dual-tree transform of a real plane."""
    plane = np.asarray(plane)
    if np.iscomplexobj(plane):
        raise DimensionError("dtcwt_forward takes a real plane; split complex matrices first")
    if plane.ndim != 2:
        raise DimensionError(f"plane must be 2-D, got shape {plane.shape}")
    if levels < 1:
        raise DimensionError(f"need at least one level, got {levels}")
    if min(plane.shape) < 2 ** levels:
        raise DimensionError(f"plane {plane.shape} is smaller than 2^{levels} along some axis")

    pyramid = bank.transform.forward(plane.astype(np.float64), nlevels=levels)
    return DualTreeCoefficients(
        highpasses=tuple(np.asarray(h) for h in pyramid.highpasses),
        lowpass=np.asarray(pyramid.lowpass),
        original_shape=tuple(plane.shape),
    )


def _check_pyramid(c: DualTreeCoefficients):
    previous = None
    for level, h in enumerate(c.highpasses, start=1):
        if h.ndim != 3 or h.shape[2] != ORIENTATIONS:
            raise DimensionError(f"level {level} subbands have shape {h.shape}, expected (rows, cols, 6)")
        # odd-sized levels are extended by one sample before decimation
        if previous is not None and not all(0 <= 2 * n - p <= 2 for n, p in zip(h.shape[:2], previous)):
            raise DimensionError(f"level {level} subbands {h.shape[:2]} are not half of level {level - 1} {previous}")
        previous = h.shape[:2]
    if previous is not None and c.lowpass.shape != (2 * previous[0], 2 * previous[1]):
        raise DimensionError(f"lowpass shape {c.lowpass.shape} does not match the coarsest subbands {previous}")


def dtcwt_inverse(coefficients: DualTreeCoefficients, bank: FilterBank) -> np.ndarray:
    """Synthesis from ``dtcwt_forward`` output, cropped to the original plane shape."""
    _check_pyramid(coefficients)
    try:
        result = bank.transform.inverse(Pyramid(coefficients.lowpass, coefficients.highpasses))
    except ValueError as e:
        raise DimensionError(f"inconsistent subbands: {e}") from e
    rows, cols = coefficients.original_shape
    if result.shape[0] < rows or result.shape[1] < cols:
        raise DimensionError(f"reconstruction {result.shape} is smaller than the original {coefficients.original_shape}")
    return np.asarray(result[:rows, :cols])


# ---------------------------------------------------------------------------
# Frame normalization
# ---------------------------------------------------------------------------

def _analysis_norms(bank: FilterBank, n: int, levels: int) -> List[float]:
    """Operator norms of the 1-D per-level analysis stages on a length-n axis."""
    identity = np.eye(n)
    norms = [np.linalg.norm(np.vstack([colfilter(identity, bank.h0o), colfilter(identity, bank.h1o)]), 2)]
    for level in range(2, levels + 1):
        m = n // 2 ** (level - 2)
        if m % 4:
            raise DimensionError(f"axis of length {n} cannot be decimated through {levels} levels")
        eye = np.eye(m)
        stage = np.vstack([coldfilt(eye, bank.h0b, bank.h0a), coldfilt(eye, bank.h1b, bank.h1a)])
        norms.append(np.linalg.norm(stage, 2))
    return norms


@lru_cache(maxsize=256)
def _frame_scale(key: Tuple[str, str], rows: int, cols: int, levels: int) -> float:
    bank = build_filterbank_by_name(*key)
    row_norms = _analysis_norms(bank, rows, levels)
    col_norms = _analysis_norms(bank, cols, levels)
    bound = (row_norms[0] * col_norms[0]) ** 2
    for r, c in zip(row_norms[1:], col_norms[1:]):
        bound *= max(1.0, (r * c) ** 2)
    logger.debug(f"Frame bound {bound:.6f} for {rows}x{cols}, {levels} levels ({key[0]}/{key[1]})")
    return 1.0 / np.sqrt(bound)


def build_filterbank_by_name(first_name: str, qshift_name: str) -> FilterBank:
    first_len = next(k for k, v in FIRST_LEVEL_FILTERS.items() if v == first_name)
    qshift_len = next(k for k, v in QSHIFT_FILTERS.items() if v == qshift_name)
    return build_filterbank(first_len, qshift_len)


def normalized_highpasses(plane: np.ndarray, bank: FilterBank, levels: int) -> Tuple[np.ndarray, ...]:
    """Highpass subbands of the transform rescaled so the analysis operator norm is at most 1."""
    scale = _frame_scale(bank.key, plane.shape[0], plane.shape[1], levels)
    return tuple(scale * h for h in dtcwt_forward(plane, bank, levels).highpasses)


# ---------------------------------------------------------------------------
# Scattering
# ---------------------------------------------------------------------------

def _pool(x: np.ndarray, factor: int, sigma: float) -> np.ndarray:
    """Gaussian lowpass of width sigma*factor followed by decimation by factor."""
    smoothed = gaussian_filter(x, sigma=sigma * factor, mode="constant")
    offset = (factor - 1) // 2
    return smoothed[offset::factor, offset::factor]


def _wrap_indices(n: int, multiple: int, margin: int) -> np.ndarray:
    padded = -(-n // multiple) * multiple
    return np.arange(-margin, padded + margin) % n


def _circular_extend(plane: np.ndarray, multiple: int, margin: int) -> np.ndarray:
    """
    Periodic extension of a plane to the next multiple of `multiple` plus `margin` samples on every side.

    The result is weighted so its norm never exceeds the plane's: each sample is repeated
    at most ceil(extended / n) times along an axis.
    """
    rows = _wrap_indices(plane.shape[0], multiple, margin)
    cols = _wrap_indices(plane.shape[1], multiple, margin)
    repeats = -(-rows.size // plane.shape[0]) * -(-cols.size // plane.shape[1])
    return plane[np.ix_(rows, cols)] / np.sqrt(repeats)


def output_grid(shape: Tuple[int, int], cfg: ScatterConfig) -> Tuple[int, int]:
    size = 2 ** cfg.scales
    return -(-shape[0] // size), -(-shape[1] // size)


def channel_names(cfg: ScatterConfig) -> Tuple[str, ...]:
    if cfg.mode == "raw":
        return PLANES
    J = cfg.scales
    names = []
    for plane in PLANES:
        names.append(f"{plane}/s0")
        names.extend(f"{plane}/s1/j{j}k{k}" for j in range(1, J + 1) for k in range(1, ORIENTATIONS + 1))
        if cfg.max_order >= 2:
            names.extend(
                f"{plane}/s2/j{j1}k{k1}-j{j2}k{k2}"
                for j1 in range(1, J + 1) for k1 in range(1, ORIENTATIONS + 1)
                for j2 in range(j1 + 1, J + 1) for k2 in range(1, ORIENTATIONS + 1)
            )
    return tuple(names)


def _scatter_plane(plane: np.ndarray, bank: FilterBank, cfg: ScatterConfig) -> List[np.ndarray]:
    J = cfg.scales
    sigma = cfg.smoothing_sigma
    order0 = [BRANCH * _pool(plane, 2 ** J, sigma)]
    order1: List[np.ndarray] = []
    order2: List[np.ndarray] = []

    for j, subbands in enumerate(normalized_highpasses(plane, bank, J), start=1):
        remaining = J - j
        propagate = cfg.max_order >= 2 and remaining > 0
        for k in range(ORIENTATIONS):
            u1 = BRANCH * np.abs(subbands[:, :, k])
            if not propagate:
                order1.append(_pool(u1, 2 ** remaining, sigma))
                continue
            order1.append(BRANCH * _pool(u1, 2 ** remaining, sigma))
            for l, deeper in enumerate(normalized_highpasses(u1, bank, remaining), start=1):
                for k2 in range(ORIENTATIONS):
                    u2 = BRANCH * np.abs(deeper[:, :, k2])
                    order2.append(_pool(u2, 2 ** (remaining - l), sigma))

    return order0 + order1 + order2


def _block_mean(plane: np.ndarray, size: int) -> np.ndarray:
    rows, cols = plane.shape
    return plane.reshape(rows // size, size, cols // size, size).mean(axis=(1, 3))


def scatter(z: Union[PulseMatrix, np.ndarray], bank: FilterBank, cfg: ScatterConfig) -> ScatterFeatures:
    """
    Scattering features of a complex pulse matrix.

    Returns:
        ScatterFeatures with cfg.channel_count() channels on a ceil(Q/2^J) x ceil(L/2^J) grid

    Raises:
        DimensionError: the matrix is smaller than 2^J along an axis
    """
    data = z.data if isinstance(z, PulseMatrix) else np.asarray(z)
    if data.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {data.shape}")
    size = 2 ** cfg.scales
    if min(data.shape) < size:
        raise DimensionError(f"matrix {data.shape} is smaller than 2^J = {size}")
    if bank.key != build_filterbank(cfg.first_len, cfg.qshift_len).key:
        raise ConfigError(f"filter bank {bank.key} does not match the scatter configuration")

    rows, cols = output_grid(data.shape, cfg)
    first = cfg.wrap_cells
    channels: List[np.ndarray] = []
    for plane in (data.real, data.imag):
        plane = np.ascontiguousarray(plane, dtype=np.float64)
        if cfg.mode == "raw":
            index = np.ix_(_wrap_indices(plane.shape[0], size, 0), _wrap_indices(plane.shape[1], size, 0))
            channels.append(_block_mean(plane[index], size))
            continue
        extended = _circular_extend(plane, size, first * size)
        channels.extend(c[first:first + rows, first:first + cols] for c in _scatter_plane(extended, bank, cfg))

    tensor = np.stack(channels)
    if not np.all(np.isfinite(tensor)):
        raise NumericError("scattering produced non-finite features")
    return ScatterFeatures(tensor, channel_names(cfg))


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def feature_normalize(f: ScatterFeatures, scales: np.ndarray) -> ScatterFeatures:
    """sign(x) * log(1 + |x| / scale_c) per channel; channels with zero scale pass through."""
    scales = np.asarray(scales, dtype=np.float64)
    if scales.shape != (f.tensor.shape[0],):
        raise DimensionError(f"{scales.shape[0] if scales.ndim else 0} scales for {f.tensor.shape[0]} channels")
    x = f.tensor
    active = scales > 0
    out = x.copy()
    s = scales[active][:, None, None]
    out[active] = np.sign(x[active]) * np.log1p(np.abs(x[active]) / s)
    return ScatterFeatures(out, f.channels)


class FeatureNormalizer:
    """Per-channel scales frozen from a training set: median over samples of the mean |x_c|."""

    def __init__(self, scales: Optional[np.ndarray] = None):
        self.scales = None if scales is None else np.asarray(scales, dtype=np.float64)

    @property
    def fitted(self) -> bool:
        return self.scales is not None

    def fit(self, tensors: Iterable[np.ndarray]) -> "FeatureNormalizer":
        means = []
        for t in tensors:
            t = np.asarray(t)
            if t.ndim != 3:
                raise DimensionError(f"expected (C, H, W) tensors, got shape {t.shape}")
            means.append(np.abs(t).mean(axis=(1, 2), dtype=np.float64))
        if not means:
            raise DimensionError("cannot fit feature scales on an empty set")
        self.scales = np.median(np.stack(means), axis=0)
        logger.info(f"Froze feature scales for {self.scales.shape[0]} channels from {len(means)} samples")
        return self

    def transform(self, f: ScatterFeatures) -> ScatterFeatures:
        if self.scales is None:
            raise ConfigError("feature normalizer has not been fitted")
        return feature_normalize(f, self.scales)


@dataclass
class ScatteringPipeline:
    """Filter bank, scatter settings and optional frozen normalizer applied to many matrices."""
    cfg: ScatterConfig
    bank: Optional[FilterBank] = None
    normalizer: Optional[FeatureNormalizer] = None
    workers: Optional[WorkScheduler] = None

    def __post_init__(self):
        if self.bank is None:
            self.bank = build_filterbank(self.cfg.first_len, self.cfg.qshift_len)

    @property
    def channels(self) -> Tuple[str, ...]:
        return channel_names(self.cfg)

    def features(self, z: Union[PulseMatrix, np.ndarray], normalize: bool = True) -> ScatterFeatures:
        f = scatter(z, self.bank, self.cfg)
        if normalize and self.normalizer is not None:
            f = self.normalizer.transform(f)
        return f

    def run(self, matrices: Iterable[Union[PulseMatrix, np.ndarray]], normalize: bool = True,
            description: str = "scattering transforms") -> np.ndarray:
        """Stack of (N, C, H, W) features in input order."""
        items = list(matrices)
        if not items:
            return np.zeros((0, self.cfg.channel_count(), 0, 0))
        pool = self.workers or default_scheduler
        results = pool.map(lambda z: self.features(z, normalize).tensor, items, description=description)
        return np.stack(results)

    def fit_normalizer(self, tensors: Iterable[np.ndarray]) -> FeatureNormalizer:
        self.normalizer = FeatureNormalizer().fit(tensors)
        return self.normalizer
