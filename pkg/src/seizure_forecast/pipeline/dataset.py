"""End-to-end assembly: recordings to scaled, split samples."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from ..errors import DegenerateDataError, IngestionError
from .scaling import RobustScale, fit_robust_scale
from .series import MODEL_CHANNELS, PatientRecording, acc_magnitude_series, ingest_patient, resample
from .split import SplitSet, split
from .windows import SampleSet, WindowParams, classify_window, label_windows

logger = logging.getLogger(__name__)


def windows_for_recording(recording: PatientRecording, params: WindowParams) -> SampleSet:
    series = dict(recording.series)
    series["ACC_MAG"] = acc_magnitude_series(series)
    resampled = {}
    origin = max(series[c].start_time for c in MODEL_CHANNELS)
    for ch in MODEL_CHANNELS:
        resampled[ch] = resample(series[ch], params.common_rate, origin_ms=origin)
    return label_windows(resampled, recording.annotations, params)


def fit_patient_scalers(train: SampleSet) -> dict[str, list[RobustScale]]:
    scalers = {}
    for pid in train.patients:
        w = train.windows[train.patient_ids == pid]
        scalers[pid] = [fit_robust_scale(w[:, :, c]) for c in range(w.shape[2])]
    return scalers


def apply_scalers(samples: SampleSet, scalers: dict[str, list[RobustScale]]) -> SampleSet:
    out = samples.windows.copy()
    for pid in samples.patients:
        if pid not in scalers:
            raise DegenerateDataError(f"patient {pid} has no training windows to fit scaling on")
        mask = samples.patient_ids == pid
        for c, scale in enumerate(scalers[pid]):
            out[mask, :, c] = scale.apply(out[mask, :, c])
    return SampleSet(out, samples.labels, samples.patient_ids, samples.window_start_ms, samples.segment_ids)


def build_splits(recordings: list[PatientRecording], params: WindowParams, seed: int) -> tuple[SplitSet, dict]:
    """Window every patient, split 60/20/20 per (patient, label), then scale.

    Scaling is fitted per patient and channel on that patient's training
    windows only and applied to all of the patient's windows.
    """
    per_patient = [windows_for_recording(r, params) for r in sorted(recordings, key=lambda r: r.patient_id)]
    pooled = SampleSet.concat(per_patient)
    pooled = pooled.subset(pooled.canonical_order())
    if len(set(pooled.labels.tolist())) < 2:
        raise DegenerateDataError("pooled samples contain a single class")
    raw = split(pooled, seed=seed, by_patient=True)
    scalers = fit_patient_scalers(raw.train)
    splits = SplitSet(*(apply_scalers(p, scalers) for p in (raw.train, raw.validation, raw.test)), seed)
    scaler_meta = {
        pid: {ch: {"median": s.median, "iqr": s.iqr, "degenerate": s.degenerate}
              for ch, s in zip(MODEL_CHANNELS, scales)}
        for pid, scales in sorted(scalers.items())
    }
    return splits, {"scalers": scaler_meta}


def ingest_corpus(corpus_dir: str | Path) -> list[PatientRecording]:
    """Ingest every ``<corpus_dir>/<patient>/manifest.yaml``, sorted by directory."""
    corpus_dir = Path(corpus_dir)
    dirs = sorted(p.parent for p in corpus_dir.glob("*/manifest.yaml"))
    if not dirs:
        raise IngestionError(f"{corpus_dir}: no patient manifests found")
    return [ingest_patient(d) for d in dirs]


def data_inventory(recordings: list[PatientRecording], samples: SampleSet, params: WindowParams) -> list[dict]:
    """Per-patient seizure counts and labelled minutes (data inventory table)."""
    rows = []
    for rec in sorted(recordings, key=lambda r: r.patient_id):
        mine = samples.labels[samples.patient_ids == rec.patient_id]
        types = []
        for a in rec.annotations:
            if a.seizure_type and a.seizure_type not in types:
                types.append(a.seizure_type)
        rows.append({
            "Patient ID": rec.patient_id,
            "Seizure Types": ", ".join(types),
            "Number of Seizures": len(rec.annotations),
            "Total Pre-Ictal Data (min)": _minutes(np.sum(mine == 1), params),
            "Total Interictal Data (min)": _minutes(np.sum(mine == 0), params),
        })
    return rows


def _minutes(count, params: WindowParams) -> str:
    minutes = float(count) * params.stride_seconds / 60.0
    return f"{minutes:g}"


def write_inventory(path: str | Path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


__all__ = [
    "build_splits", "classify_window", "data_inventory", "ingest_corpus", "windows_for_recording",
    "write_inventory",
]
