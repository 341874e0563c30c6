import numpy as np
import pytest

from encoder import train_encoder
from models import RadarConfig, ScatterConfig, TrainConfig
from protonet import compute_prototypes
from scattering import build_filterbank
from scene import generate_dataset
from scheduler import WorkScheduler


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def radar():
    """Training-column radar: 128 x 241 window, 48-sample pulse."""
    return RadarConfig()


@pytest.fixture
def small_radar():
    """Short CPI for tests that build many matrices."""
    return RadarConfig(num_pulses=16, pri=2e-6, guard_samples=0)


@pytest.fixture
def bank():
    return build_filterbank(13, 14)


@pytest.fixture
def small_scatter():
    return ScatterConfig(scales=2)


@pytest.fixture
def serial():
    return WorkScheduler(max_workers=1)


@pytest.fixture
def tiny_train():
    return TrainConfig(batch_size=4, epochs=2, embedding_dim=8, learning_rate=1e-3)


@pytest.fixture(scope="session")
def desk_model():
    """Encoder trained on the 10 dB desk protocol with prototypes from a held-out support set."""
    samples, _ = generate_dataset("train", 200, seed=0, snr_db=10.0)
    trained, _ = train_encoder(samples, TrainConfig(), ScatterConfig(), seed=0)
    support, _ = generate_dataset("train", 100, seed=1, snr_db=10.0)
    protos = compute_prototypes(trained.embed_many([s.matrix for s in support]), [s.label for s in support])
    return trained, protos
