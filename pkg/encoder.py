"""
Embedding network and supervised contrastive training.

The encoder maps normalized scattering features to a unit-norm embedding:

    channel gate -> conv 3x3 (32) -> ReLU -> conv 3x3 (64) -> ReLU
    -> global mean -> affine (D) -> L2 normalization

All parameters are float64. The contrastive loss and its gradient with respect
to the pre-normalization embeddings are computed in numpy and fed back through
autograd with ``z.backward(grad)``, so the loss can be checked in isolation.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import logging
import tempfile

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.special import logsumexp

from config import settings
from errors import ArtifactError, BatchError, ConfigError, DimensionError, NumericError, TrainingError
from models import ScatterConfig, TrainConfig
from scattering import FeatureNormalizer, ScatterFeatures, ScatteringPipeline
from storage import WeightsFile
from waveform import PulseMatrix

logger = logging.getLogger(__name__)

CONV1_CHANNELS = 32
CONV2_CHANNELS = 64
VIEWS_PER_SAMPLE = 3
EXTRACT_CHUNK = 256
NORMALIZER_TENSOR = "normalizer.scales"


def _finite(x: torch.Tensor, layer: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NumericError(f"non-finite values after layer '{layer}'")
    return x


class ChannelAttention(nn.Module):
    """Squeeze-style gate: spatial mean -> affine -> ReLU -> affine -> sigmoid, one gate per channel."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.squeeze = nn.Linear(channels, hidden, dtype=torch.float64)
        self.excite = nn.Linear(hidden, channels, dtype=torch.float64)

    def gates(self, x: torch.Tensor) -> torch.Tensor:
        descriptor = x.mean(dim=(2, 3))
        return torch.sigmoid(self.excite(F.relu(self.squeeze(descriptor))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gates(x)[:, :, None, None]


class ScatterEncoder(nn.Module):
    def __init__(self, channels: int, embedding_dim: int = 64, reduction: int = 4, use_attention: bool = True):
        super().__init__()
        self.channels = channels
        self.attention = ChannelAttention(channels, reduction) if use_attention else None
        self.conv1 = nn.Conv2d(channels, CONV1_CHANNELS, kernel_size=3, padding=1, dtype=torch.float64)
        self.conv2 = nn.Conv2d(CONV1_CHANNELS, CONV2_CHANNELS, kernel_size=3, padding=1, dtype=torch.float64)
        self.head = nn.Linear(CONV2_CHANNELS, embedding_dim, dtype=torch.float64)

    def forward(self, x: torch.Tensor, normalize: bool = True) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(f"expected (batch, {self.channels}, H, W) features, got {tuple(x.shape)}")
        if self.attention is not None:
            x = _finite(self.attention(x), "attention")
        x = _finite(F.relu(self.conv1(x)), "conv1")
        x = _finite(F.relu(self.conv2(x)), "conv2")
        x = _finite(self.head(x.mean(dim=(2, 3))), "head")
        if normalize:
            x = F.normalize(x, dim=1)
        return x


@dataclass
class EncoderParams:
    """Architecture hyperparameters plus a float64 copy of every weight tensor."""
    channels: int
    embedding_dim: int = 64
    reduction: int = 4
    use_attention: bool = True
    state: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_module(cls, model: ScatterEncoder, reduction: int) -> "EncoderParams":
        state = {name: t.detach().cpu().numpy().copy() for name, t in model.state_dict().items()}
        return cls(
            channels=model.channels,
            embedding_dim=model.head.out_features,
            reduction=reduction,
            use_attention=model.attention is not None,
            state=state,
        )

    @classmethod
    def initialize(cls, channels: int, cfg: TrainConfig, seed: int) -> "EncoderParams":
        torch.manual_seed(seed)
        model = ScatterEncoder(channels, cfg.embedding_dim, cfg.attention_reduction, cfg.use_attention)
        return cls.from_module(model, cfg.attention_reduction)

    def build(self) -> ScatterEncoder:
        model = ScatterEncoder(self.channels, self.embedding_dim, self.reduction, self.use_attention)
        if self.state:
            expected = model.state_dict()
            missing = set(expected) - set(self.state)
            if missing:
                raise DimensionError(f"encoder parameters missing tensors: {sorted(missing)}")
            for name, tensor in expected.items():
                if tuple(self.state[name].shape) != tuple(tensor.shape):
                    raise DimensionError(f"tensor '{name}' has shape {self.state[name].shape}, "
                                         f"expected {tuple(tensor.shape)}")
            model.load_state_dict({name: torch.from_numpy(np.asarray(v, dtype=np.float64)) for name, v in self.state.items()})
        model.eval()
        return model

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.state.values()))


def _as_batch(f: Union[ScatterFeatures, np.ndarray]) -> torch.Tensor:
    tensor = f.tensor if isinstance(f, ScatterFeatures) else np.asarray(f)
    if tensor.ndim == 3:
        tensor = tensor[None]
    return torch.from_numpy(np.ascontiguousarray(tensor, dtype=np.float64))


def attention_gate(f: ScatterFeatures, params: EncoderParams) -> ScatterFeatures:
    """Channel-gated copy of ``f``."""
    if not params.use_attention:
        raise ConfigError("encoder was built without the attention gate")
    if f.tensor.shape[0] != params.channels:
        raise DimensionError(f"{f.tensor.shape[0]} feature channels, encoder expects {params.channels}")
    model = params.build()
    with torch.no_grad():
        gated = model.attention(_as_batch(f))[0].numpy()
    return ScatterFeatures(gated, f.channels)


def embed_forward(f: Union[ScatterFeatures, np.ndarray], params: EncoderParams) -> np.ndarray:
    """Unit-norm embedding of one feature tensor."""
    model = params.build()
    with torch.no_grad():
        return model(_as_batch(f))[0].numpy()


# ---------------------------------------------------------------------------
# Augmentation and loss
# ---------------------------------------------------------------------------

def shift_fast_time(m: PulseMatrix, shift: int) -> PulseMatrix:
    """Circular shift along fast time."""
    if shift == 0:
        return m
    return m.with_data(np.roll(m.data, shift, axis=1))


def augment(sample: PulseMatrix, cfg: TrainConfig, draw_seed) -> PulseMatrix:
    """Additive circular Gaussian noise at augment_noise_sigma x RMS, then a random circular fast-time shift."""
    rng = np.random.default_rng(draw_seed)
    data = sample.data
    if cfg.augment_noise_sigma > 0:
        rms = np.sqrt(np.mean(np.abs(data) ** 2))
        noise = (rng.standard_normal(data.shape) + 1j * rng.standard_normal(data.shape)) / np.sqrt(2.0)
        data = data + cfg.augment_noise_sigma * rms * noise
    shift = int(rng.integers(-cfg.max_shift, cfg.max_shift + 1)) if cfg.max_shift > 0 else 0
    return shift_fast_time(sample.with_data(data), shift)


def scl_loss(embeddings: np.ndarray, labels: Sequence[int], temperature: float) -> Tuple[float, np.ndarray]:
    """
    Supervised contrastive loss over a batch of pre-normalization embeddings.

    loss = -sum_i 1/|P(i)| sum_{p in P(i)} log( exp(a_i.a_p/t) / sum_{b != i} exp(a_i.a_b/t) )

    with a = z/|z|. P(i) are the other batch entries sharing i's label.

    Returns:
        (loss, dloss/dz) with the gradient shaped like ``embeddings``

    Raises:
        BatchError: some anchor has no positive
    """
    z = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise DimensionError(f"embeddings {z.shape} and labels {labels.shape} do not form a batch")
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")

    positives = labels[:, None] == labels[None, :]
    np.fill_diagonal(positives, False)
    counts = positives.sum(axis=1)
    if np.any(counts == 0):
        lonely = np.flatnonzero(counts == 0).tolist()
        raise BatchError(f"anchors {lonely} have no positive in the batch")

    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise NumericError("cannot normalize a zero embedding")
    a = z / norms

    logits = a @ a.T / temperature
    np.fill_diagonal(logits, -np.inf)
    log_prob = logits - logsumexp(logits, axis=1, keepdims=True)
    loss = -float(np.sum(np.where(positives, log_prob, 0.0).sum(axis=1) / counts))

    # dL/dlogits = softmax - positives/|P(i)|
    m = np.exp(log_prob) - positives / counts[:, None]
    grad_a = (m + m.T) @ a / temperature
    grad_z = (grad_a - a * np.sum(grad_a * a, axis=1, keepdims=True)) / norms
    return loss, grad_z


# ---------------------------------------------------------------------------
# Trained encoder
# ---------------------------------------------------------------------------

@dataclass
class TrainedEncoder:
    """Encoder weights, frozen feature scales and the scattering settings they were trained with."""
    params: EncoderParams
    normalizer: FeatureNormalizer
    scatter: ScatterConfig
    input_shape: Tuple[int, int]
    binary: bool = False
    _model: Optional[ScatterEncoder] = field(default=None, init=False, repr=False)
    _pipeline: Optional[ScatteringPipeline] = field(default=None, init=False, repr=False)

    @property
    def input_width(self) -> int:
        return self.input_shape[1]

    @property
    def model(self) -> ScatterEncoder:
        if self._model is None:
            self._model = self.params.build()
        return self._model

    @property
    def pipeline(self) -> ScatteringPipeline:
        if self._pipeline is None:
            self._pipeline = ScatteringPipeline(self.scatter, normalizer=self.normalizer)
        return self._pipeline

    def embed(self, z: Union[PulseMatrix, np.ndarray]) -> np.ndarray:
        features = self.pipeline.features(z)
        with torch.no_grad():
            return self.model(_as_batch(features))[0].numpy()

    def embed_many(self, matrices: Sequence[Union[PulseMatrix, np.ndarray]],
                   description: str = "embeddings") -> np.ndarray:
        """(N, D) embeddings; features are extracted in chunks through the worker pool."""
        out = np.zeros((len(matrices), self.params.embedding_dim))
        for start in range(0, len(matrices), EXTRACT_CHUNK):
            chunk = matrices[start:start + EXTRACT_CHUNK]
            features = self.pipeline.run(chunk, description=description)
            with torch.no_grad():
                out[start:start + len(chunk)] = self.model(torch.from_numpy(features)).numpy()
        return out

    def parameter_count(self) -> int:
        return self.params.parameter_count()


def _extract_views(pipeline: ScatteringPipeline, count: int, view: Callable[[int], PulseMatrix],
                   scratch: Path) -> np.ndarray:
    """
    Raw float32 features of `count` views built on demand by `view`.

    Only EXTRACT_CHUNK matrices exist at a time. When the feature block is larger
    than settings.feature_memory_mb it lives in a memory-mapped file under `scratch`.
    """
    first = pipeline.features(view(0), normalize=False).tensor
    shape = (count,) + first.shape
    nbytes = int(np.prod(shape)) * np.dtype(np.float32).itemsize
    if nbytes > settings.feature_memory_mb * 2 ** 20:
        path = scratch / "views.npy"
        logger.info(f"Spilling {nbytes / 2 ** 20:.0f} MiB of training features to {path}")
        out = np.lib.format.open_memmap(path, mode="w+", dtype=np.float32, shape=shape)
    else:
        out = np.empty(shape, dtype=np.float32)
    out[0] = first
    for start in range(1, count, EXTRACT_CHUNK):
        stop = min(start + EXTRACT_CHUNK, count)
        out[start:stop] = pipeline.run((view(k) for k in range(start, stop)), normalize=False,
                                       description="training views")
        logger.info(f"Extracted features for {stop}/{count} views")
    return out


def _normalize_in_place(features: np.ndarray, normalizer: FeatureNormalizer):
    scales = normalizer.scales
    active = scales > 0
    for start in range(0, features.shape[0], EXTRACT_CHUNK):
        block = features[start:start + EXTRACT_CHUNK].astype(np.float64)
        s = scales[active][None, :, None, None]
        block[:, active] = np.sign(block[:, active]) * np.log1p(np.abs(block[:, active]) / s)
        features[start:start + EXTRACT_CHUNK] = block


def _fit(features: np.ndarray, labels: np.ndarray, cfg: TrainConfig, seed: int) -> Tuple[ScatterEncoder, List[float]]:
    """Adam over shuffled batches; each batch holds all views of its samples."""
    n = labels.size
    params = EncoderParams.initialize(features.shape[1], cfg, seed)
    model = params.build()
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    shuffler = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    view_labels = np.tile(labels, VIEWS_PER_SAMPLE)

    losses: List[float] = []
    for epoch in range(cfg.epochs):
        order = shuffler.permutation(n)
        total, anchors = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            index = np.concatenate([batch + v * n for v in range(VIEWS_PER_SAMPLE)])
            x = torch.from_numpy(np.asarray(features[index], dtype=np.float64))

            optimizer.zero_grad()
            try:
                z = model(x, normalize=False)
            except NumericError as e:
                raise TrainingError(str(e), epoch) from e
            loss, grad = scl_loss(z.detach().numpy(), view_labels[index], cfg.temperature)
            if not np.isfinite(loss):
                raise TrainingError("loss diverged", epoch)
            z.backward(torch.from_numpy(grad))
            optimizer.step()
            total += loss
            anchors += index.size

        mean_loss = total / anchors
        if not np.isfinite(mean_loss):
            raise TrainingError("loss diverged", epoch)
        losses.append(mean_loss)
        logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: mean loss {mean_loss:.6f}")

    model.eval()
    return model, losses


def train_encoder(samples: Sequence, cfg: TrainConfig, scatter_cfg: ScatterConfig,
                  seed: Optional[int] = None) -> Tuple[TrainedEncoder, List[float]]:
    """
    Train the encoder with the supervised contrastive loss.

    Every sample contributes three views to its batch: the original and two
    augmented copies drawn once from SeedSequence([seed, index, view]).

    Args:
        samples: LabeledSample list sharing one matrix shape
        cfg: optimizer, batch and augmentation settings
        scatter_cfg: feature extraction settings
        seed: overrides cfg.seed

    Returns:
        the trained encoder and the mean per-anchor loss of every epoch

    Raises:
        BatchError: fewer than two classes
        TrainingError: the loss became non-finite
    """
    seed = cfg.seed if seed is None else seed
    if len(samples) == 0:
        raise BatchError("training set is empty")
    labels = np.array([s.label for s in samples])
    if cfg.binary:
        labels = (labels != 0).astype(int)
    if np.unique(labels).size < 2:
        raise BatchError("training set needs at least two classes")
    shapes = {s.matrix.data.shape for s in samples}
    if len(shapes) != 1:
        raise DimensionError(f"training matrices differ in shape: {sorted(shapes)}")

    torch.set_num_threads(settings.threads)
    n = len(samples)
    pipeline = ScatteringPipeline(scatter_cfg)

    def view(k: int) -> PulseMatrix:
        i, v = k % n, k // n
        matrix = samples[i].matrix
        return matrix if v == 0 else augment(matrix, cfg, np.random.SeedSequence([seed, i, v]))

    logger.info(f"Training on {n} samples x {VIEWS_PER_SAMPLE} views, {cfg.epochs} epochs (seed {seed})")
    with tempfile.TemporaryDirectory(prefix="awsp-views-") as scratch:
        features = _extract_views(pipeline, VIEWS_PER_SAMPLE * n, view, Path(scratch))
        normalizer = FeatureNormalizer().fit(features[:n])
        _normalize_in_place(features, normalizer)
        model, losses = _fit(features, labels, cfg, seed)
        del features

    trained = TrainedEncoder(
        params=EncoderParams.from_module(model, cfg.attention_reduction),
        normalizer=normalizer,
        scatter=scatter_cfg,
        input_shape=shapes.pop(),
        binary=cfg.binary,
    )
    return trained, losses


def save_encoder(stem, trained: TrainedEncoder, extra: Optional[Dict] = None):
    """Weights plus frozen feature scales; architecture and scattering settings go into the metadata."""
    tensors = dict(trained.params.state)
    tensors[NORMALIZER_TENSOR] = trained.normalizer.scales
    metadata = {
        "channels": trained.params.channels,
        "embedding_dim": trained.params.embedding_dim,
        "attention_reduction": trained.params.reduction,
        "use_attention": trained.params.use_attention,
        "input_shape": list(trained.input_shape),
        "binary": trained.binary,
        "scatter": trained.scatter.model_dump(),
        "num_parameters": trained.parameter_count(),
    }
    metadata.update(extra or {})
    return WeightsFile.write(stem, tensors, metadata)


def load_encoder(stem) -> TrainedEncoder:
    tensors, metadata = WeightsFile.read(stem)
    try:
        scales = tensors.pop(NORMALIZER_TENSOR)
        params = EncoderParams(
            channels=int(metadata["channels"]),
            embedding_dim=int(metadata["embedding_dim"]),
            reduction=int(metadata["attention_reduction"]),
            use_attention=bool(metadata["use_attention"]),
            state=tensors,
        )
        trained = TrainedEncoder(
            params=params,
            normalizer=FeatureNormalizer(scales),
            scatter=ScatterConfig.model_validate(metadata["scatter"]),
            input_shape=tuple(metadata["input_shape"]),
            binary=bool(metadata.get("binary", False)),
        )
    except KeyError as e:
        raise ArtifactError(f"weights file {stem} is missing {e}") from e
    trained.params.build()
    return trained
