#!/usr/bin/env python3
"""
Command-line front end.

    python main.py gen      --config run.json --seed 7
    python main.py train    --set train.epochs=10
    python main.py eval     --set evaluation.snrs=[-6,0,10]
    python main.py detect   --set detection.cnr_db=10
    python main.py selftest

Configuration precedence: --seed / --set > --config file > defaults.
Exit codes: 0 ok, 2 configuration or usage, 3 I/O, 4 numeric, 5 self-test failure, 1 other.
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence
import argparse
import importlib
import json
import logging
import sys
import time

import numpy as np
from pydantic import ValidationError

from config import settings
from encoder import load_encoder, save_encoder, train_encoder
from errors import AcceptanceError, ArtifactError, ConfigError, WorkbenchError
from models import (
    BINARY_CLASS_NAMES, CLASS_NAMES, MAX_SEED, FeatureManifest, RunConfig, SceneSpec, WorkbenchConfig,
)
from protonet import PrototypeSet, classify_many, compute_prototypes, evaluate
from scattering import ScatteringPipeline, output_grid
from scene import compose_scene, generate_dataset
from storage import DatasetFile, FeatureFile, JsonArtifact, Reports
from suppression import reference_scene, run_detection

logger = logging.getLogger(__name__)

REQUIRED_PACKAGES = (
    ("numpy", "numpy"),
    ("scipy", "scipy"),
    ("dtcwt", "dtcwt"),
    ("torch", "torch"),
    ("scikit-learn", "sklearn"),
    ("pandas", "pandas"),
    ("pydantic", "pydantic"),
    ("pydantic-settings", "pydantic_settings"),
    ("python-dotenv", "dotenv"),
    ("PyWavelets", "pywt"),
    ("pytest", "pytest"),
)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: Dict, overrides: Dict[str, str]) -> Dict:
    """Patch nested config data with dotted ``section.key`` overrides."""
    for key, raw in overrides.items():
        parts = key.split(".")
        if not all(parts):
            raise ConfigError(f"malformed override key '{key}'")
        node = data
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override '{key}' descends into non-section '{part}'")
            node = child
        node[parts[-1]] = _parse_value(raw)
    return data


def load_config(run: RunConfig) -> WorkbenchConfig:
    data: Dict = {}
    if run.config_path:
        path = Path(run.config_path)
        try:
            data = json.loads(path.read_text())
        except OSError as e:
            raise ArtifactError(f"cannot read config file {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")

    apply_overrides(data, run.overrides)
    if run.seed is not None:
        data["seed"] = run.seed

    try:
        return WorkbenchConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def _parse_overrides(items: Sequence[str]) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        overrides[key.strip()] = value
    return overrides


def _output_dir(cfg: WorkbenchConfig) -> Path:
    return Path(cfg.paths.output_dir or settings.artifacts_dir)


def _derived_seed(cfg: WorkbenchConfig, offset: int) -> int:
    return (cfg.seed + offset) % MAX_SEED


def _train_seed(cfg: WorkbenchConfig) -> int:
    return cfg.train.seed if "seed" in cfg.train.model_fields_set else cfg.seed


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def command_gen(cfg: WorkbenchConfig):
    section = cfg.dataset
    samples, manifest = generate_dataset(section.protocol, section.per_class, cfg.seed, section.snr_db)
    DatasetFile.write(cfg.paths.resolve("dataset", settings.artifacts_dir), samples, manifest)

    if section.export_features:
        pipeline = ScatteringPipeline(cfg.scatter)
        height, width = output_grid(samples[0].matrix.data.shape, cfg.scatter)
        features = FeatureManifest(
            count=len(samples), channels=list(pipeline.channels), height=height, width=width,
            labels=[s.label for s in samples],
        )

        def stream():
            for start in range(0, len(samples), 256):
                chunk = [s.matrix for s in samples[start:start + 256]]
                yield from pipeline.run(chunk, normalize=False, description="exported features")

        FeatureFile.write(cfg.paths.resolve("features", settings.artifacts_dir), stream(), features)


def _training_samples(cfg: WorkbenchConfig) -> List:
    path = cfg.paths.resolve("dataset", settings.artifacts_dir)
    if path.exists():
        logger.info(f"Training on existing dataset {path}")
        samples, _ = DatasetFile.read(path)
        return samples
    section = cfg.dataset
    logger.info(f"No dataset at {path}; generating {section.per_class} samples per class")
    samples, _ = generate_dataset(section.protocol, section.per_class, cfg.seed, section.snr_db)
    return samples


def _class_setup(binary: bool):
    names = BINARY_CLASS_NAMES if binary else CLASS_NAMES
    return list(range(len(names))), list(names)


def _labels(samples, binary: bool) -> np.ndarray:
    labels = np.array([s.label for s in samples])
    return (labels != 0).astype(int) if binary else labels


def command_train(cfg: WorkbenchConfig):
    samples = _training_samples(cfg)
    trained, losses = train_encoder(samples, cfg.train, cfg.scatter, seed=_train_seed(cfg))
    save_encoder(cfg.paths.resolve("weights", settings.artifacts_dir), trained, {"seed": cfg.seed})
    Reports.write_loss_curve(cfg.paths.resolve("loss_curve", settings.artifacts_dir), losses)

    support = cfg.support
    support_samples, _ = generate_dataset(support.protocol, support.per_class, _derived_seed(cfg, 1), support.snr_db)
    embeddings = trained.embed_many([s.matrix for s in support_samples], description="support embeddings")
    class_ids, _ = _class_setup(trained.binary)
    protos = compute_prototypes(embeddings, _labels(support_samples, trained.binary), class_ids)
    Reports.write_prototypes(cfg.paths.resolve("prototypes", settings.artifacts_dir), protos.to_record())
    logger.info(f"Encoder has {trained.parameter_count()} parameters; final loss "
                f"{losses[-1] if losses else float('nan'):.6f}")


def _load_model(cfg: WorkbenchConfig):
    trained = load_encoder(cfg.paths.resolve("weights", settings.artifacts_dir))
    protos = PrototypeSet.from_record(Reports.read_prototypes(cfg.paths.resolve("prototypes", settings.artifacts_dir)))
    return trained, protos


def command_eval(cfg: WorkbenchConfig):
    trained, protos = _load_model(cfg)
    class_ids, class_names = _class_setup(trained.binary)
    out = _output_dir(cfg)
    section = cfg.evaluation

    reports = []
    timing = {}
    for i, snr in enumerate(section.snrs):
        logger.info(f"Evaluating at {snr:g} dB SNR ({i + 1}/{len(section.snrs)})")
        samples, _ = generate_dataset(section.protocol, section.per_class, _derived_seed(cfg, 2 + i), snr)
        started = time.perf_counter()
        embeddings = trained.embed_many([s.matrix for s in samples], description=f"{snr:g} dB embeddings")
        predictions = [p.class_id for p in classify_many(embeddings, protos)]
        timing[f"{snr:g}"] = (time.perf_counter() - started) / len(samples)

        truths = _labels(samples, trained.binary)
        report = evaluate(predictions, truths, len(class_ids), class_names, snr_db=snr)
        report.num_parameters = trained.parameter_count()
        reports.append(report)

        Reports.write_metrics(out / f"metrics_{snr:g}.json", report)
        Reports.write_confusion(out / f"confusion_{snr:g}.csv", report)
        if section.export_embeddings:
            Reports.write_embeddings(out / f"embeddings_{snr:g}.csv", embeddings, truths, predictions)
        logger.info(f"{snr:g} dB: accuracy {report.accuracy:.4f}, macro F1 {report.macro_f1:.4f}")

    Reports.write_summary(out / "summary.csv", reports)
    Reports.write_json(out / "timing.json", {
        "mean_seconds_per_sample": timing,
        "num_parameters": trained.parameter_count(),
    })


def command_detect(cfg: WorkbenchConfig):
    trained, protos = _load_model(cfg)
    section = cfg.detection
    target_bin: Optional[int] = None
    jammer_bins: List[int] = []
    if section.scene_path:
        matrix = compose_scene(JsonArtifact.read(section.scene_path, SceneSpec))
    else:
        ref = reference_scene(cfg.seed, section.snr_db, section.inr_db, section.cnr_db, cfg.radar)
        matrix, target_bin, jammer_bins = ref.matrix, ref.target_bin, ref.jammer_bins

    profile = run_detection(matrix, trained, protos, section)
    Reports.write_profile(cfg.paths.resolve("profile", settings.artifacts_dir), profile.probs, profile.accumulated)
    Reports.write_detections(cfg.paths.resolve("detections", settings.artifacts_dir),
                             profile.report(target_bin, jammer_bins))
    for d in profile.detections:
        logger.info(f"Detection at bin {d.bin} (peak {d.peak:.2f}, pulse start {d.target_start})")


def check_requirements() -> bool:
    """Print one line per dependency; False when any import fails."""
    ok = True
    for name, module in REQUIRED_PACKAGES:
        try:
            importlib.import_module(module)
            print(f"✅ {name}")
        except ImportError as e:
            print(f"❌ {name}: {e}")
            ok = False
    return ok


def command_selftest(cfg: WorkbenchConfig):
    import pytest

    if not check_requirements():
        print("Please run: pip install -r requirements.txt")
        raise AcceptanceError("missing dependencies")
    code = pytest.main([settings.tests_dir, "-q", "-m", "not slow"])
    if code != 0:
        print(f"❌ Test suite failed (pytest exit code {int(code)})")
        raise AcceptanceError(f"test suite failed with exit code {int(code)}")
    print("✅ All checks passed")


COMMANDS = {
    "gen": command_gen,
    "train": command_train,
    "eval": command_eval,
    "detect": command_detect,
    "selftest": command_selftest,
}


def run(run_config: RunConfig) -> int:
    cfg = load_config(run_config)
    logger.info(f"Running '{run_config.command}' with seed {cfg.seed}")
    COMMANDS[run_config.command](cfg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="Top-level seed (0 .. 2^64-1)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a configuration value, e.g. train.epochs=10 (repeatable)")

    parser = argparse.ArgumentParser(description="Radar jamming recognition and suppression workbench")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("gen", parents=[common], help="Generate a labeled dataset")
    commands.add_parser("train", parents=[common], help="Train the encoder and build prototypes")
    commands.add_parser("eval", parents=[common], help="Evaluate over an SNR sweep")
    commands.add_parser("detect", parents=[common], help="Localize targets in a jammed scene")
    commands.add_parser("selftest", parents=[common], help="Check dependencies and run the test suite")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else ConfigError.exit_code

    logging.basicConfig(level=settings.log_level.upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        run_config = RunConfig(command=args.command, config_path=args.config,
                               overrides=_parse_overrides(args.overrides), seed=args.seed)
        return run(run_config)
    except WorkbenchError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"Invalid arguments: {e}")
        return ConfigError.exit_code
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        return ArtifactError.exit_code
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
