"""
Artifact persistence: binary datasets, feature tensors, encoder weights and the
JSON/CSV reports written by the command-line front end.

Binary layouts (all little-endian):

  dataset   "AWSPDS01" | u32 count | u32 Q | u32 L | count x (u8 label, Q*L complex64)
            plus a sibling <name>.json DatasetManifest
  features  one JSON line (FeatureManifest) | count x (u32 C, u32 H, u32 W, C*H*W f32)
  weights   <stem>.json WeightsManifest | <stem>.bin concatenated f64 tensors
"""

from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union
import json
import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from errors import ArtifactError
from models import (
    DatasetManifest, DetectionReport, FeatureManifest, MetricsReport, PrototypeRecord, TensorEntry,
    WeightsManifest,
)
from scene import LabeledSample
from waveform import PulseMatrix

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DATASET_MAGIC = b"AWSPDS01"
HEADER = np.dtype([("count", "<u4"), ("rows", "<u4"), ("cols", "<u4")])
SHAPE = np.dtype("<u4")


def _ensure_parent(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ArtifactError(f"cannot create directory {path.parent}: {e}") from e


def manifest_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".json")


class JsonArtifact:
    """pydantic model <-> JSON file."""

    @staticmethod
    def write(path: PathLike, model: BaseModel) -> Path:
        path = Path(path)
        _ensure_parent(path)
        try:
            path.write_text(model.model_dump_json(indent=2))
        except OSError as e:
            raise ArtifactError(f"cannot write {path}: {e}") from e
        return path

    @staticmethod
    def read(path: PathLike, model_type):
        path = Path(path)
        try:
            return model_type.model_validate_json(path.read_text())
        except OSError as e:
            raise ArtifactError(f"cannot read {path}: {e}") from e
        except ValidationError as e:
            raise ArtifactError(f"{path} is not a valid {model_type.__name__}: {e}") from e


class DatasetFile:
    """Labeled pulse matrices in the AWSPDS01 container."""

    @staticmethod
    def write(path: PathLike, samples: Sequence, manifest: DatasetManifest) -> Path:
        path = Path(path)
        if not samples:
            raise ArtifactError("refusing to write an empty dataset")
        rows, cols = samples[0].matrix.data.shape
        _ensure_parent(path)
        try:
            with open(path, "wb") as f:
                f.write(DATASET_MAGIC)
                f.write(np.array([(len(samples), rows, cols)], dtype=HEADER).tobytes())
                for sample in samples:
                    if sample.matrix.data.shape != (rows, cols):
                        raise ArtifactError(f"sample shape {sample.matrix.data.shape} differs from {(rows, cols)}")
                    f.write(np.uint8(sample.label).tobytes())
                    f.write(sample.matrix.data.astype("<c8").tobytes())
        except OSError as e:
            raise ArtifactError(f"cannot write {path}: {e}") from e
        JsonArtifact.write(manifest_path(path), manifest)
        logger.info(f"Wrote {len(samples)} samples ({rows}x{cols}) to {path}")
        return path

    @staticmethod
    def read_arrays(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
        """(labels (N,), data (N, Q, L) complex64) without the manifest."""
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as e:
            raise ArtifactError(f"cannot read {path}: {e}") from e
        if raw[:len(DATASET_MAGIC)] != DATASET_MAGIC:
            raise ArtifactError(f"{path} is not an AWSPDS01 dataset")

        offset = len(DATASET_MAGIC)
        header = np.frombuffer(raw, dtype=HEADER, count=1, offset=offset)[0]
        count, rows, cols = int(header["count"]), int(header["rows"]), int(header["cols"])
        offset += HEADER.itemsize
        record = np.dtype([("label", "u1"), ("data", "<c8", (rows, cols))])
        if len(raw) - offset != count * record.itemsize:
            raise ArtifactError(f"{path} holds {len(raw) - offset} payload bytes, expected {count * record.itemsize}")
        records = np.frombuffer(raw, dtype=record, count=count, offset=offset)
        return records["label"].astype(int), records["data"]

    @staticmethod
    def read(path: PathLike) -> Tuple[List, DatasetManifest]:
        """Samples rebuilt as LabeledSample with the radar configuration recorded in the manifest."""
        labels, data = DatasetFile.read_arrays(path)
        manifest = JsonArtifact.read(manifest_path(path), DatasetManifest)
        if len(manifest.samples) != labels.shape[0]:
            raise ArtifactError(f"manifest lists {len(manifest.samples)} samples, file holds {labels.shape[0]}")
        samples = []
        for label, matrix, record in zip(labels, data, manifest.samples):
            if record.label != label:
                raise ArtifactError(f"label mismatch for sample {record.index}: file {label}, manifest {record.label}")
            samples.append(LabeledSample(PulseMatrix(matrix.astype(np.complex128), record.scene.config), int(label)))
        return samples, manifest


class FeatureFile:
    @staticmethod
    def write(path: PathLike, tensors: Iterable[np.ndarray], manifest: FeatureManifest) -> Path:
        path = Path(path)
        _ensure_parent(path)
        written = 0
        try:
            with open(path, "wb") as f:
                f.write(manifest.model_dump_json().encode() + b"\n")
                for tensor in tensors:
                    tensor = np.asarray(tensor)
                    if tensor.shape != (len(manifest.channels), manifest.height, manifest.width):
                        raise ArtifactError(f"feature tensor shape {tensor.shape} does not match the manifest")
                    f.write(np.asarray(tensor.shape, dtype=SHAPE).tobytes())
                    f.write(tensor.astype("<f4").tobytes())
                    written += 1
        except OSError as e:
            raise ArtifactError(f"cannot write {path}: {e}") from e
        if written != manifest.count:
            raise ArtifactError(f"wrote {written} feature tensors, manifest announces {manifest.count}")
        logger.info(f"Wrote {written} feature tensors to {path}")
        return path

    @staticmethod
    def read(path: PathLike) -> Tuple[np.ndarray, FeatureManifest]:
        path = Path(path)
        try:
            with open(path, "rb") as f:
                manifest = FeatureManifest.model_validate_json(f.readline())
                payload = f.read()
        except OSError as e:
            raise ArtifactError(f"cannot read {path}: {e}") from e
        except ValidationError as e:
            raise ArtifactError(f"{path} has a malformed feature manifest: {e}") from e

        shape = (len(manifest.channels), manifest.height, manifest.width)
        record = np.dtype([("shape", SHAPE, (3,)), ("data", "<f4", shape)])
        if len(payload) != manifest.count * record.itemsize:
            raise ArtifactError(f"{path} payload does not hold {manifest.count} tensors of shape {shape}")
        records = np.frombuffer(payload, dtype=record, count=manifest.count)
        if manifest.count and not np.all(records["shape"] == np.asarray(shape)):
            raise ArtifactError(f"{path} contains tensors whose header disagrees with the manifest")
        return records["data"].astype(np.float64), manifest


class WeightsFile:
    """Named float64 tensors: <stem>.json manifest next to a <stem>.bin blob."""

    @staticmethod
    def paths(stem: PathLike) -> Tuple[Path, Path]:
        stem = Path(stem)
        return stem.with_suffix(".json"), stem.with_suffix(".bin")

    @staticmethod
    def write(stem: PathLike, tensors: Dict[str, np.ndarray], metadata: Optional[Dict] = None) -> Path:
        manifest_file, blob_file = WeightsFile.paths(stem)
        _ensure_parent(manifest_file)
        entries = []
        offset = 0
        try:
            with open(blob_file, "wb") as f:
                for name in sorted(tensors):
                    array = np.ascontiguousarray(tensors[name], dtype="<f8")
                    f.write(array.tobytes())
                    entries.append(TensorEntry(name=name, shape=list(array.shape), offset=offset))
                    offset += array.nbytes
        except OSError as e:
            raise ArtifactError(f"cannot write {blob_file}: {e}") from e
        JsonArtifact.write(manifest_file, WeightsManifest(blob=blob_file.name, tensors=entries, metadata=metadata or {}))
        logger.info(f"Wrote {len(entries)} tensors ({offset} bytes) to {blob_file}")
        return manifest_file

    @staticmethod
    def read(stem: PathLike) -> Tuple[Dict[str, np.ndarray], Dict]:
        manifest_file, _ = WeightsFile.paths(stem)
        manifest = JsonArtifact.read(manifest_file, WeightsManifest)
        blob_file = manifest_file.parent / manifest.blob
        try:
            blob = blob_file.read_bytes()
        except OSError as e:
            raise ArtifactError(f"cannot read {blob_file}: {e}") from e

        tensors = {}
        for entry in manifest.tensors:
            count = int(np.prod(entry.shape)) if entry.shape else 1
            end = entry.offset + 8 * count
            if end > len(blob):
                raise ArtifactError(f"tensor '{entry.name}' runs past the end of {blob_file}")
            tensors[entry.name] = np.frombuffer(blob, dtype="<f8", count=count, offset=entry.offset) \
                .reshape(entry.shape).astype(np.float64)
        return tensors, manifest.metadata


class Reports:
    """CSV and JSON outputs for plotting and bookkeeping."""

    @staticmethod
    def _write_csv(path: PathLike, frame: pd.DataFrame, index: bool = False) -> Path:
        path = Path(path)
        _ensure_parent(path)
        try:
            frame.to_csv(path, index=index)
        except OSError as e:
            raise ArtifactError(f"cannot write {path}: {e}") from e
        return path

    @staticmethod
    def write_loss_curve(path: PathLike, losses: Sequence[float]) -> Path:
        frame = pd.DataFrame({"epoch": np.arange(1, len(losses) + 1), "mean_loss": list(losses)})
        return Reports._write_csv(path, frame)

    @staticmethod
    def read_loss_curve(path: PathLike) -> List[float]:
        try:
            return pd.read_csv(path)["mean_loss"].astype(float).tolist()
        except (OSError, KeyError) as e:
            raise ArtifactError(f"cannot read loss curve {path}: {e}") from e

    @staticmethod
    def write_confusion(path: PathLike, report: MetricsReport) -> Path:
        frame = pd.DataFrame(report.confusion, index=report.class_names, columns=report.class_names)
        frame.index.name = "truth"
        return Reports._write_csv(path, frame, index=True)

    @staticmethod
    def write_profile(path: PathLike, probs: np.ndarray, accumulated: np.ndarray) -> Path:
        """t, prob, accumulated; prob is blank past the end of the window sequence."""
        probs = pd.Series(np.asarray(probs, dtype=np.float64))
        frame = pd.DataFrame({
            "t": np.arange(len(accumulated)),
            "prob": probs.reindex(range(len(accumulated))),
            "accumulated": np.asarray(accumulated, dtype=np.float64),
        })
        return Reports._write_csv(path, frame)

    @staticmethod
    def write_summary(path: PathLike, reports: Sequence[MetricsReport]) -> Path:
        frame = pd.DataFrame({
            "snr_db": [r.snr_db for r in reports],
            "accuracy": [r.accuracy for r in reports],
            "macro_f1": [r.macro_f1 for r in reports],
            "num_samples": [r.num_samples for r in reports],
        })
        return Reports._write_csv(path, frame)

    @staticmethod
    def write_embeddings(path: PathLike, embeddings: np.ndarray, labels: Sequence[int],
                         predictions: Sequence[int]) -> Path:
        frame = pd.DataFrame(np.asarray(embeddings), columns=[f"e{i}" for i in range(np.asarray(embeddings).shape[1])])
        frame.insert(0, "predicted", list(predictions))
        frame.insert(0, "label", list(labels))
        return Reports._write_csv(path, frame)

    @staticmethod
    def write_metrics(path: PathLike, report: MetricsReport) -> Path:
        return JsonArtifact.write(path, report)

    @staticmethod
    def write_prototypes(path: PathLike, record: PrototypeRecord) -> Path:
        return JsonArtifact.write(path, record)

    @staticmethod
    def read_prototypes(path: PathLike) -> PrototypeRecord:
        return JsonArtifact.read(path, PrototypeRecord)

    @staticmethod
    def write_detections(path: PathLike, report: DetectionReport) -> Path:
        return JsonArtifact.write(path, report)

    @staticmethod
    def write_json(path: PathLike, payload: Dict) -> Path:
        path = Path(path)
        _ensure_parent(path)
        try:
            path.write_text(json.dumps(payload, indent=2))
        except OSError as e:
            raise ArtifactError(f"cannot write {path}: {e}") from e
        return path
