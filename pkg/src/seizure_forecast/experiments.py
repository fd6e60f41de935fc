"""Experiment orchestration: general model, architecture comparison, personalization."""

from __future__ import annotations

import hashlib
import json
import logging
import subprocess
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from . import __version__
from .checkpoint import save_checkpoint
from .errors import ConfigError, ContractError, DegenerateDataError
from .evaluation import (
    MetricsReport,
    evaluate_model,
    render_reports,
    save_report_json,
)
from .layers import ARCHITECTURES, Hyperparameters, Model, create_model
from .pipeline.archive import read_archive, write_archive
from .pipeline.dataset import build_splits, data_inventory, ingest_corpus, write_inventory
from .pipeline.series import write_patient
from .pipeline.split import SplitSet
from .pipeline.synthetic import load_profiles, synth_generate
from .pipeline.windows import SampleSet, WindowParams
from .training import TrainConfig, class_weights_for, train

logger = logging.getLogger(__name__)

DATA_KINDS = ("synthetic_profile", "corpus_dir", "archive")
_TOP_KEYS = {"data", "architecture", "seed", "output_dir", "window", "model", "training", "personalization"}

BatchHook = Callable[[str, list], None]


@dataclass(frozen=True)
class ExperimentConfig:
    data_kind: str
    data_path: Path
    architecture: str = "cnn_bilstm"
    seed: int = 0
    output_dir: Path = Path("runs")
    window: WindowParams = field(default_factory=WindowParams)
    model: Hyperparameters = field(default_factory=Hyperparameters)
    training: TrainConfig = field(default_factory=TrainConfig)
    personalization_epochs: int | None = None
    min_seizures: int = 2

    def __post_init__(self):
        if self.data_kind not in DATA_KINDS:
            raise ConfigError(f"data source must be one of {DATA_KINDS}, got {self.data_kind!r}")
        if not Path(self.data_path).exists():
            raise ConfigError(f"data path not found: {self.data_path}")
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.personalization_epochs is not None and self.personalization_epochs < 0:
            raise ConfigError("personalization epochs must be >= 0")

    @property
    def fine_tune_epochs(self) -> int:
        return self.training.epochs if self.personalization_epochs is None else self.personalization_epochs

    @property
    def train_config(self) -> TrainConfig:
        return replace(self.training, rng_seed=self.seed)

    def to_dict(self) -> dict:
        training = self.training.to_dict()
        training.pop("rng_seed")
        return {
            "data": {self.data_kind: str(self.data_path)},
            "architecture": self.architecture,
            "seed": self.seed,
            "window": self.window.to_dict(),
            "model": self.model.to_dict(),
            "training": training,
            "personalization": {"epochs": self.personalization_epochs, "min_seizures": self.min_seizures},
        }

    def config_hash(self) -> str:
        # output_dir is excluded so the same experiment hashes identically wherever it is written
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def config_from_dict(doc: dict, base_dir: Path = Path("."), seed: int | None = None,
                     output_dir: str | Path | None = None) -> ExperimentConfig:
    """Build a config from a parsed document; relative paths resolve against ``base_dir``."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data = doc.get("data") or {}
    chosen = [k for k in DATA_KINDS if data.get(k)]
    if len(chosen) != 1 or set(data) - set(DATA_KINDS):
        raise ConfigError(f"data must name exactly one of {DATA_KINDS}")
    kind = chosen[0]
    data_path = Path(data[kind])
    if not data_path.is_absolute():
        data_path = base_dir / data_path
    training = dict(doc.get("training") or {})
    if "rng_seed" in training:
        raise ConfigError("training.rng_seed is not configurable; use the top-level seed")
    pers = dict(doc.get("personalization") or {})
    if set(pers) - {"epochs", "min_seizures"}:
        raise ConfigError(f"unknown personalization options: {sorted(set(pers) - {'epochs', 'min_seizures'})}")
    out = output_dir if output_dir is not None else doc.get("output_dir", "runs")
    out = Path(out)
    if output_dir is None and not out.is_absolute():
        out = base_dir / out
    try:
        return ExperimentConfig(
            data_kind=kind,
            data_path=data_path,
            architecture=doc.get("architecture", "cnn_bilstm"),
            seed=int(doc.get("seed", 0)) if seed is None else int(seed),
            output_dir=out,
            window=WindowParams.from_dict(doc.get("window")),
            model=Hyperparameters.from_dict(doc.get("model")),
            training=TrainConfig.from_dict(training),
            personalization_epochs=pers.get("epochs"),
            min_seizures=int(pers.get("min_seizures", 2)),
        )
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def load_config(path: str | Path, seed: int | None = None, output_dir: str | Path | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse config ({exc.__class__.__name__})") from None
    return config_from_dict(doc, path.parent, seed=seed, output_dir=output_dir)


def version_string() -> str:
    """``git describe``-style version, falling back to the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=5, check=True,
        ).stdout.strip()
        if out:
            return f"{__version__}+g{out}" if not out.startswith("v") else out
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def provenance(config: ExperimentConfig, **extra) -> dict:
    return {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "split_seed": config.seed,
        "init_seed": config.seed,
        "shuffle_seed": config.seed,
        "version": version_string(),
        "config": config.to_dict(),
        **extra,
    }


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    splits: SplitSet
    seizure_counts: dict[str, int]
    inventory: list[dict] = field(default_factory=list)


def synthesize(config: ExperimentConfig, corpus_dir: str | Path) -> list[str]:
    """Write the synthetic corpus described by the config's profile file."""
    if config.data_kind != "synthetic_profile":
        raise ConfigError("synth needs a config whose data source is a synthetic_profile")
    corpus = load_profiles(config.data_path)
    corpus_dir = Path(corpus_dir)
    written = []
    for profile in corpus.profiles:
        write_patient(corpus_dir / profile.patient_id, synth_generate(profile, corpus.duration_hours))
        written.append(profile.patient_id)
    return written


def _recordings(config: ExperimentConfig):
    if config.data_kind == "corpus_dir":
        return ingest_corpus(config.data_path)
    corpus = load_profiles(config.data_path)
    return [synth_generate(p, corpus.duration_hours) for p in corpus.profiles]


def prepare_dataset(config: ExperimentConfig, recordings=None) -> Dataset:
    """Window, split and scale a recording corpus (or read a prepared archive)."""
    if recordings is None and config.data_kind == "archive":
        return load_dataset_archive(config.data_path)
    recs = _recordings(config) if recordings is None else recordings
    splits, meta = build_splits(recs, config.window, config.seed)
    counts = {r.patient_id: len(r.annotations) for r in sorted(recs, key=lambda r: r.patient_id)}
    pooled = SampleSet.concat([splits.train, splits.validation, splits.test])
    return Dataset(splits, counts, data_inventory(recs, pooled, config.window))


def write_dataset_archive(dataset: Dataset, directory: str | Path, config: ExperimentConfig) -> None:
    write_archive(directory, dataset.splits, {
        "seizure_counts": dataset.seizure_counts,
        "window": config.window.to_dict(),
        "provenance": provenance(config),
    })
    if dataset.inventory:
        write_inventory(Path(directory) / "inventory.csv", dataset.inventory)


def load_dataset_archive(directory: str | Path) -> Dataset:
    splits, manifest = read_archive(directory)
    return Dataset(splits, dict(manifest.get("seizure_counts", {})))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _check_pool(splits: SplitSet) -> None:
    pooled = np.concatenate([p.labels for p in splits.parts().values()])
    patients = set()
    for p in splits.parts().values():
        patients.update(p.patients)
    if len(set(pooled.tolist())) < 2:
        raise DegenerateDataError("dataset contains a single class")
    if len(patients) < 2:
        raise DegenerateDataError(f"dataset needs at least 2 patients, found {len(patients)}")
    for name in ("train", "validation", "test"):
        if len(set(splits.parts()[name].labels.tolist())) < 2:
            raise DegenerateDataError(f"{name} split contains a single class")


def _hooked(hook: BatchHook | None, phase: str, samples: SampleSet):
    if hook is None:
        return None
    keys = samples.keys()
    return lambda idx: hook(phase, [keys[i] for i in idx])


def fit_model(config: ExperimentConfig, architecture: str, train_set: SampleSet, val_set: SampleSet,
              hook: BatchHook | None = None, phase: str = "train"):
    model = create_model(architecture, train_set.windows.shape[1:], config.model, rng_seed=config.seed)
    return train(model, train_set, val_set, class_weights_for(train_set.labels), config=config.train_config,
                 on_batch=_hooked(hook, phase, train_set))


@dataclass
class GeneralResult:
    report: MetricsReport
    model: Model
    history: object
    paths: list[Path]


def run_general(config: ExperimentConfig, dataset: Dataset | None = None, out_dir: str | Path | None = None,
                architecture: str | None = None) -> GeneralResult:
    """Pooled model trained on every patient's training split, scored on the test split."""
    dataset = dataset or prepare_dataset(config)
    arch = architecture or config.architecture
    s = dataset.splits
    _check_pool(s)
    model, history = fit_model(config, arch, s.train, s.validation)
    report = evaluate_model(model, s.test)
    paths = []
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths += render_reports(report, "general", out)
        history.to_csv(out / "history.csv")
        prov = provenance(config, experiment="general", architecture=arch, epochs_completed=len(history))
        paths.append(save_checkpoint(model, out / "model.ckpt", prov))
        save_report_json(out / "metrics.json", {"general": report.to_dict()})
        save_report_json(out / "provenance.json", prov)
        paths += [out / "history.csv", out / "metrics.json", out / "provenance.json"]
    return GeneralResult(report, model, history, paths)


def run_architecture_comparison(config: ExperimentConfig, dataset: Dataset | None = None,
                                out_dir: str | Path | None = None,
                                architectures=("bilstm", "cnn_lstm", "cnn_bilstm")) -> dict[str, MetricsReport]:
    """Train each architecture on the same splits and seeds."""
    dataset = dataset or prepare_dataset(config)
    _check_pool(dataset.splits)
    reports = {}
    for arch in architectures:
        logger.info("training %s", arch)
        reports[arch] = run_general(config, dataset, architecture=arch).report
    if out_dir is not None:
        out = Path(out_dir)
        render_reports(reports, "architecture_comparison", out)
        save_report_json(out / "comparison_metrics.json", {k: r.to_dict() for k, r in reports.items()})
        save_report_json(out / "comparison_provenance.json",
                         provenance(config, experiment="architecture_comparison", architectures=list(architectures)))
    return reports


@dataclass
class PersonalizationResult:
    patient_id: str
    before: MetricsReport
    after: MetricsReport
    model: Model


def _weights_for(samples: SampleSet, patient_id: str, boost: float) -> np.ndarray:
    return np.where(samples.patient_ids == patient_id, boost, 1.0).astype(np.float64)


def run_personalization(config: ExperimentConfig, patient_id: str, dataset: Dataset | None = None,
                        out_dir: str | Path | None = None, on_batch: BatchHook | None = None) -> PersonalizationResult:
    """Leave-one-patient-out base model, then fine-tuning with the patient up-weighted.

    The patient's samples carry the split of the pooled dataset, so "before"
    and "after" are scored on the identical test portion, which no training
    phase ever sees.  ``on_batch(phase, keys)`` receives the (patient,
    window start) keys of every training batch, phase "base" or "fine_tune".
    """
    dataset = dataset or prepare_dataset(config)
    s = dataset.splits
    all_patients = sorted(set(s.train.patients) | set(s.validation.patients) | set(s.test.patients))
    if patient_id not in all_patients:
        raise ContractError(f"unknown patient {patient_id!r}; known: {', '.join(all_patients)}")
    n_seizures = dataset.seizure_counts.get(patient_id)
    if n_seizures is not None and n_seizures < config.min_seizures:
        raise DegenerateDataError(f"patient {patient_id} has {n_seizures} seizure(s), at least {config.min_seizures} needed")
    mine = {k: v.where_patient(patient_id) for k, v in s.parts().items()}
    labels = np.concatenate([v.labels for v in mine.values()])
    if len(set(labels.tolist())) < 2:
        raise DegenerateDataError(f"patient {patient_id} has a single class")
    if len(set(mine["test"].labels.tolist())) < 2:
        raise DegenerateDataError(f"patient {patient_id} test portion has a single class")
    base_train = s.train.where_patient(patient_id, include=False)
    base_val = s.validation.where_patient(patient_id, include=False)
    if len(set(base_train.labels.tolist())) < 2:
        raise DegenerateDataError("base training pool contains a single class")

    base, base_history = fit_model(config, config.architecture, base_train, base_val, on_batch, "base")
    before = evaluate_model(base, mine["test"])

    personal = base.copy()
    epochs = config.fine_tune_epochs
    tune_history = None
    if epochs > 0:
        tune_set = SampleSet.concat([base_train, mine["train"], mine["validation"]])
        tc = replace(config.train_config, epochs=epochs)
        _, tune_history = train(
            personal, tune_set, base_val, class_weights_for(tune_set.labels),
            sample_weights=_weights_for(tune_set, patient_id, tc.sample_weight_boost), config=tc,
            on_batch=_hooked(on_batch, "fine_tune", tune_set),
        )
    after = evaluate_model(personal, mine["test"])

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        prov = provenance(config, experiment="personalization", patient_id=patient_id,
                          base_epochs_completed=len(base_history),
                          epochs_completed=len(tune_history) if tune_history else 0)
        save_checkpoint(personal, out / "model.ckpt", prov)
        save_report_json(out / "metrics.json", {"patient_id": patient_id, "before": before.to_dict(),
                                                "after": after.to_dict()})
        save_report_json(out / "provenance.json", prov)
        base_history.to_csv(out / "base_history.csv")
        if tune_history is not None:
            tune_history.to_csv(out / "fine_tune_history.csv")
        render_reports({patient_id: (before, after)}, "per_patient_before_after", out)
        render_reports({patient_id: (before, after)}, "appendix", out)
    return PersonalizationResult(patient_id, before, after, personal)


def patient_ids(dataset: Dataset) -> list[str]:
    s = dataset.splits
    return sorted(set(s.train.patients) | set(s.validation.patients) | set(s.test.patients))


def run_personalization_all(config: ExperimentConfig, dataset: Dataset | None = None,
                            out_dir: str | Path | None = None) -> dict[str, PersonalizationResult]:
    dataset = dataset or prepare_dataset(config)
    ids = patient_ids(dataset)
    results = {}
    for pid in ids:
        logger.info("personalizing %s", pid)
        sub = Path(out_dir) / "personalization" / pid if out_dir is not None else None
        results[pid] = run_personalization(config, pid, dataset, sub)
    if out_dir is not None:
        pairs = {pid: (r.before, r.after) for pid, r in sorted(results.items())}
        render_reports(pairs, "per_patient_before_after", out_dir, expected_ids=ids)
        render_reports(pairs, "appendix", out_dir, expected_ids=ids)
    return results
