from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.special import softmax
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support

from errors import DimensionError, SupportError
from models import MetricsReport, PrototypeRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrototypeSet:
    """Class centers (N_c x D) in class_ids order. Centers are plain means and are not re-normalized."""
    centers: np.ndarray
    class_ids: Tuple[int, ...]

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        if centers.shape[0] != len(self.class_ids) or centers.shape[0] < 1:
            raise SupportError(f"{centers.shape[0]} centers for class ids {list(self.class_ids)}")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise SupportError(f"duplicate class ids {list(self.class_ids)}")
        if not np.all(np.isfinite(centers)):
            raise SupportError("prototype centers must be finite")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "class_ids", tuple(int(c) for c in self.class_ids))

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def to_record(self) -> PrototypeRecord:
        return PrototypeRecord(class_ids=list(self.class_ids), centers=self.centers.tolist())

    @classmethod
    def from_record(cls, record: PrototypeRecord) -> "PrototypeSet":
        return cls(np.asarray(record.centers, dtype=np.float64), tuple(record.class_ids))


@dataclass(frozen=True)
class Prediction:
    class_index: int
    class_id: int
    confidence: float
    probabilities: np.ndarray


def compute_prototypes(embeddings: np.ndarray, labels: Sequence[int],
                       class_ids: Optional[Sequence[int]] = None) -> PrototypeSet:
    """
    Mean embedding per class.

    Args:
        embeddings: (N, D) support embeddings
        labels: class of every row
        class_ids: classes that must be present, in output order (default: sorted labels)

    Raises:
        SupportError: a requested class has no support embedding
    """
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    labels = np.asarray(labels)
    if labels.shape != (embeddings.shape[0],):
        raise DimensionError(f"{embeddings.shape[0]} embeddings but {labels.shape[0]} labels")

    ids = sorted(set(labels.tolist())) if class_ids is None else list(class_ids)
    if not ids:
        raise SupportError("support set is empty")
    centers = []
    for class_id in ids:
        members = embeddings[labels == class_id]
        if members.shape[0] == 0:
            raise SupportError(f"class {class_id} has no support embeddings")
        centers.append(members.mean(axis=0))
    logger.info(f"Built {len(ids)} prototypes from {embeddings.shape[0]} support embeddings")
    return PrototypeSet(np.stack(centers), tuple(ids))


def squared_distances(queries: np.ndarray, protos: PrototypeSet) -> np.ndarray:
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[1] != protos.dim:
        raise DimensionError(f"query dimension {queries.shape[1]} does not match prototypes ({protos.dim})")
    diff = queries[:, None, :] - protos.centers[None, :, :]
    return np.sum(diff * diff, axis=2)


def classify_many(queries: np.ndarray, protos: PrototypeSet) -> List[Prediction]:
    d2 = squared_distances(queries, protos)
    # argmin returns the first minimum, so ties go to the lowest class index
    winners = np.argmin(d2, axis=1)
    probs = softmax(-d2, axis=1)
    return [
        Prediction(
            class_index=int(c),
            class_id=protos.class_ids[int(c)],
            confidence=float(p[c]),
            probabilities=p,
        )
        for c, p in zip(winners, probs)
    ]


def classify(query: np.ndarray, protos: PrototypeSet) -> Prediction:
    """Nearest prototype by squared Euclidean distance; confidence is softmax(-d^2) at the winner."""
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1:
        raise DimensionError(f"query must be a single embedding, got shape {query.shape}")
    return classify_many(query[None], protos)[0]


def evaluate(predictions: Sequence[int], truths: Sequence[int], num_classes: int,
             class_names: Optional[Sequence[str]] = None, snr_db: Optional[float] = None) -> MetricsReport:
    """
    Accuracy, per-class precision/recall/F1 (0/0 -> 0), macro F1 and the confusion
    matrix with rows = truth and columns = prediction.
    """
    predictions = np.asarray(predictions, dtype=int)
    truths = np.asarray(truths, dtype=int)
    if predictions.shape != truths.shape:
        raise DimensionError(f"{predictions.shape[0]} predictions for {truths.shape[0]} truths")
    if num_classes < 1:
        raise DimensionError(f"need at least one class, got {num_classes}")

    labels = list(range(num_classes))
    if truths.size == 0:
        zeros = [0.0] * num_classes
        return MetricsReport(snr_db=snr_db, num_samples=0, accuracy=0.0, macro_f1=0.0, per_class_f1=zeros,
                             per_class_precision=zeros, per_class_recall=zeros,
                             confusion=[[0] * num_classes for _ in labels],
                             class_names=list(class_names or [str(c) for c in labels]))

    confusion = confusion_matrix(truths, predictions, labels=labels)
    precision, recall, f1, _ = precision_recall_fscore_support(
        truths, predictions, labels=labels, average=None, zero_division=0)

    return MetricsReport(
        snr_db=snr_db,
        num_samples=int(truths.size),
        accuracy=float(accuracy_score(truths, predictions)),
        macro_f1=float(np.mean(f1)),
        per_class_f1=[float(v) for v in f1],
        per_class_precision=[float(v) for v in precision],
        per_class_recall=[float(v) for v in recall],
        confusion=confusion.astype(int).tolist(),
        class_names=list(class_names or [str(c) for c in labels]),
    )

