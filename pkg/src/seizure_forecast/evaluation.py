"""Classification metrics, ROC/AUC and CSV report layouts."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError

THRESHOLD = 0.5

ARCH_LABELS = {"bilstm": "BiLSTM", "cnn_lstm": "CNN-LSTM", "cnn_bilstm": "CNN-BiLSTM"}
LAYOUTS = ("general", "per_patient_before_after", "appendix", "architecture_comparison")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float = THRESHOLD

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc_roc: float | None = None
    confusion: ConfusionMatrix | None = None
    roc_points: list[tuple[float, float]] = field(default_factory=list)
    roc_thresholds: list[float] = field(default_factory=list)
    n_samples: int = 0
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["roc_points"] = [list(p) for p in self.roc_points]
        d["roc_thresholds"] = [t if np.isfinite(t) else "inf" for t in self.roc_thresholds]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        cm = d.pop("confusion", None)
        d["confusion"] = ConfusionMatrix(**cm) if cm else None
        d["roc_points"] = [tuple(p) for p in d.get("roc_points", [])]
        d["roc_thresholds"] = [float(t) for t in d.get("roc_thresholds", [])]
        return cls(**d)


def confusion(scores, labels, threshold: float = THRESHOLD) -> ConfusionMatrix:
    """Counts with prediction = 1 iff score >= threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1 or len(scores) == 0:
        raise ContractError(f"scores and labels must be equal-length non-empty vectors, got {scores.shape} and {labels.shape}")
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)), fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)), fn=int(np.sum(~pred & pos)), threshold=threshold,
    )


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total < 1:
        raise ContractError("confusion matrix is empty")
    if cm.tp + cm.fn == 0:
        raise ContractError("recall undefined: no positives in ground truth")
    flags = []
    if cm.tp + cm.fp == 0:
        precision = 0.0
        flags.append("no positive predictions")
    else:
        precision = cm.tp / (cm.tp + cm.fp)
    recall = cm.tp / (cm.tp + cm.fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return MetricsReport(
        accuracy=(cm.tp + cm.tn) / cm.total, precision=precision, recall=recall, f1=f1,
        confusion=cm, n_samples=cm.total, flags=flags,
    )


def roc_auc(scores, labels) -> tuple[float, list[tuple[float, float]], list[float]]:
    """Trapezoidal AUC over the ROC swept at every distinct score.

    Returns ``(auc, points, thresholds)``; points run from (0, 0) to (1, 1)
    and tied scores move as a single step.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or len(scores) == 0:
        raise ContractError("scores and labels must be equal-length and non-empty")
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUC undefined: labels contain a single class")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order] == 1
    distinct = np.flatnonzero(np.diff(s)) if len(s) > 1 else np.array([], dtype=int)
    ends = np.concatenate([distinct, [len(s) - 1]])
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    tpr = np.concatenate([[0.0], tps / n_pos])
    fpr = np.concatenate([[0.0], fps / n_neg])
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    thresholds = [float("inf")] + s[ends].tolist()
    return auc, list(zip(fpr.tolist(), tpr.tolist())), thresholds


def report_from_scores(scores, labels, threshold: float = THRESHOLD) -> MetricsReport:
    report = metrics(confusion(scores, labels, threshold))
    report.auc_roc, report.roc_points, report.roc_thresholds = roc_auc(scores, labels)
    return report


def evaluate_model(model, samples) -> MetricsReport:
    if len(samples) == 0:
        raise ContractError("cannot evaluate on an empty sample set")
    scores = model.predict(samples.windows)
    return report_from_scores(scores, samples.labels)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _quantize(value: float, places: str, scale: int = 1) -> Decimal:
    # decimal arithmetic on the shortest repr avoids binary artefacts like 65.69999
    return (Decimal(repr(float(value))) * scale).quantize(Decimal(places), rounding=ROUND_HALF_UP)


def fmt_percent(value: float) -> str:
    return f"{_quantize(value, '0.01', 100)}%"


def fmt_metric(value: float | None) -> str:
    if value is None:
        return "NA"
    if float(value) == 1.0:
        return "1.000"
    return str(_quantize(value, "0.0001"))


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_confusion(path: Path, cm: ConfusionMatrix) -> Path:
    return _write_csv(path, ["tp", "fp", "tn", "fn"], [[cm.tp, cm.fp, cm.tn, cm.fn]])


def write_roc(path: Path, report: MetricsReport) -> Path:
    rows = [[repr(f), repr(t), "inf" if not np.isfinite(th) else repr(th)]
            for (f, t), th in zip(report.roc_points, report.roc_thresholds)]
    return _write_csv(path, ["fpr", "tpr", "threshold"], rows)


def _pairs(reports) -> list[tuple[str, object]]:
    items = list(reports.items()) if isinstance(reports, Mapping) else list(reports)
    if not items:
        raise ContractError("no reports to render")
    return [(str(k), v) for k, v in items]


def render_reports(reports, layout: str, out_dir: str | Path, expected_ids: Sequence[str] | None = None,
                   prefix: str = "") -> list[Path]:
    """Write the CSV tables for one layout and return the written paths.

    ``general`` takes one :class:`MetricsReport` (or a one-element list);
    ``architecture_comparison`` a mapping architecture -> report; the two
    per-patient layouts a mapping (or ordered pairs) patient -> (before,
    after).  Rows keep the order given.
    """
    out_dir = Path(out_dir)
    if layout not in LAYOUTS:
        raise ContractError(f"unknown layout {layout!r}")
    if layout == "general":
        if isinstance(reports, MetricsReport):
            reports = [reports]
        if not reports or len(reports) != 1:
            raise ContractError("general layout takes exactly one report")
        r = reports[0]
        paths = [_write_csv(out_dir / f"{prefix}general.csv", ["Accuracy", "Precision", "Recall", "F1 Score", "AUC-ROC"],
                            [[fmt_percent(r.accuracy), fmt_metric(r.precision), fmt_metric(r.recall),
                              fmt_metric(r.f1), fmt_metric(r.auc_roc)]])]
        if r.confusion is not None:
            paths.append(write_confusion(out_dir / f"{prefix}confusion.csv", r.confusion))
        if r.roc_points:
            paths.append(write_roc(out_dir / f"{prefix}roc.csv", r))
        return paths

    items = _pairs(reports)
    if expected_ids is not None:
        absent = sorted(set(map(str, expected_ids)) - {k for k, v in items if v is not None})
        if absent:
            raise ContractError(f"missing report rows for: {', '.join(absent)}")

    if layout == "architecture_comparison":
        rows = [[ARCH_LABELS.get(k, k), fmt_percent(r.accuracy), fmt_metric(r.f1), fmt_metric(r.precision),
                 fmt_metric(r.recall), fmt_metric(r.auc_roc)] for k, r in items]
        header = ["Model Architecture", "Accuracy", "F1 Score", "Precision", "Recall", "AUC-ROC"]
        return [_write_csv(out_dir / f"{prefix}architecture_comparison.csv", header, rows)]

    for pid, pair in items:
        if pair is None or len(pair) != 2 or pair[0] is None or pair[1] is None:
            raise ContractError(f"missing report rows for: {pid}")
    if layout == "per_patient_before_after":
        header = ["Patient ID", "Patient Accuracy Before Personalization (Tested on General Model)",
                  "Patient Accuracy After Personalization (Tested on Personalized Model)"]
        rows = [[pid, fmt_percent(b.accuracy), fmt_percent(a.accuracy)] for pid, (b, a) in items]
        return [_write_csv(out_dir / f"{prefix}personalization.csv", header, rows)]

    header = ["Patient ID", "Accuracy", "Precision", "Recall", "F1 Score"]
    paths = []
    for which, name in ((0, "appendix_before.csv"), (1, "appendix_after.csv")):
        rows = [[pid, fmt_percent(pair[which].accuracy), fmt_metric(pair[which].precision),
                 fmt_metric(pair[which].recall), fmt_metric(pair[which].f1)] for pid, pair in items]
        paths.append(_write_csv(out_dir / f"{prefix}{name}", header, rows))
    return paths


def save_report_json(path: str | Path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_report_json(path: str | Path):
    return json.loads(Path(path).read_text())
