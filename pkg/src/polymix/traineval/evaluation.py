"""Track-level prediction, prediction files and metric reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .. import audio, features
from ..audio import AudioClip
from ..dataset import INSTRUMENTS, N_CLASSES
from ..errors import ContractError, FormatError, TooShortError
from .metrics import PredictionMatrix, auc_scores, ensemble_average, f1_scores, lrap

ENSEMBLE_PRESETS = {
    # the random-mix model is left out of the combined ensemble
    "combined": ("monophonic", "genre", "tempo", "pitch"),
}


def track_segments(track: AudioClip) -> np.ndarray:
    """Model inputs for every whole 1-second segment of a track."""
    clip = audio.standardize(track)
    if clip.n_samples < features.CLIP_SAMPLES:
        raise TooShortError(f"track lasts {clip.duration:.3f} s, at least 1 s is needed")
    return features.extract_many(audio.segment_clip(clip, 1.0))


def predict_track(model, track: AudioClip) -> np.ndarray:
    """Mean of the per-segment scores (inference mode)."""
    return average_segments(model.predict(track_segments(track)))


def average_segments(segment_scores) -> np.ndarray:
    segment_scores = np.asarray(segment_scores, dtype=np.float64)
    if segment_scores.ndim != 2 or len(segment_scores) == 0:
        raise ContractError("need a non-empty (segments, classes) score matrix")
    return segment_scores.mean(axis=0)


# ---------------------------------------------------------------------------
# prediction files

def write_predictions(path, track_ids, pm: PredictionMatrix) -> None:
    if len(track_ids) != pm.n:
        raise ContractError("one track id per prediction row is required")
    header = (["track_id"] + [f"score_{c}" for c in INSTRUMENTS]
              + [f"label_{c}" for c in INSTRUMENTS])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for tid, s, y in zip(track_ids, pm.scores, pm.labels):
            w.writerow([tid] + [repr(float(v)) for v in s] + [int(v) for v in y])


def read_predictions(path):
    """Returns ``(track_ids, PredictionMatrix)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) != 1 + 2 * N_CLASSES or rows[0][0] != "track_id":
        raise FormatError(f"{path}: not a predictions file")
    ids, scores, labels = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 1 + 2 * N_CLASSES:
            raise FormatError(f"{path}: line {lineno} has {len(row)} fields")
        try:
            scores.append([float(v) for v in row[1:1 + N_CLASSES]])
            labels.append([int(v) for v in row[1 + N_CLASSES:]])
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: {exc}") from exc
        ids.append(row[0])
    pm = PredictionMatrix(np.array(scores).reshape(-1, N_CLASSES),
                          np.array(labels).reshape(-1, N_CLASSES))
    return ids, pm


def combine_prediction_files(paths):
    """Load several prediction files over the same tracks and average them."""
    loaded = [read_predictions(p) for p in paths]
    ids = loaded[0][0]
    for other_ids, _ in loaded[1:]:
        if other_ids != ids:
            raise ContractError("prediction files list different tracks or orders")
    return ids, ensemble_average([pm for _, pm in loaded])


# ---------------------------------------------------------------------------
# reports

@dataclass
class MetricsReport:
    lrap: float
    mean_auc: float
    per_class_auc: list
    f1_micro: float
    f1_macro: float
    per_class_f1: list
    notes: list

    def to_json(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        lines = [f"LRAP      {self.lrap:.3f}",
                 f"Mean AUC  {self.mean_auc:.3f}",
                 f"F1 micro  {self.f1_micro:.3f}",
                 f"F1 macro  {self.f1_macro:.3f}",
                 "",
                 "class   AUC     F1"]
        for code, auc, f1 in zip(INSTRUMENTS, self.per_class_auc, self.per_class_f1):
            auc_txt = "  n/a" if auc is None else f"{auc:.3f}"
            lines.append(f"{code:<6} {auc_txt}  {f1:.3f}")
        lines += self.notes
        return "\n".join(lines)


def evaluate_predictions(pm: PredictionMatrix, threshold: float = 0.5) -> MetricsReport:
    per_auc, mean_auc = auc_scores(pm)
    micro, macro, per_f1 = f1_scores(pm, threshold=threshold)
    notes = [f"AUC undefined for {INSTRUMENTS[c]} (needs positives and negatives)"
             for c in np.flatnonzero(np.isnan(per_auc))]
    return MetricsReport(
        lrap=lrap(pm), mean_auc=mean_auc,
        per_class_auc=[None if np.isnan(v) else float(v) for v in per_auc],
        f1_micro=micro, f1_macro=macro, per_class_f1=[float(v) for v in per_f1],
        notes=notes)


def predict_tracks(model, tracks) -> np.ndarray:
    return np.stack([predict_track(model, t) for t in tracks])


def evaluate(models, tracks, labels, ensemble: bool = True) -> MetricsReport | list:
    """Score every track with every model, then report on the average (or each).

    ``models`` may also be PredictionMatrix objects computed earlier.
    """
    labels = np.asarray(labels)
    pms = []
    for m in models:
        if isinstance(m, PredictionMatrix):
            pms.append(m)
        else:
            pms.append(PredictionMatrix(predict_tracks(m, tracks), labels))
    if ensemble:
        return evaluate_predictions(ensemble_average(pms))
    return [evaluate_predictions(pm) for pm in pms]


_SUMMARY_FIELDS = ("lrap", "mean_auc", "f1_micro", "f1_macro")


def summarize_folds(reports) -> dict:
    """Mean and sample standard deviation of each headline metric over folds."""
    out = {}
    for key in _SUMMARY_FIELDS:
        values = np.array([getattr(r, key) for r in reports], dtype=np.float64)
        std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        out[key] = (float(values.mean()), std)
    return out


def format_summary(name: str, summary: dict) -> str:
    """One table row in the ``0.767 ± 0.008`` style."""
    cells = [f"{summary[k][0]:.3f} ± {summary[k][1]:.3f}" for k in _SUMMARY_FIELDS]
    return " | ".join([name] + cells)


def f1_delta_table(report: MetricsReport, baseline: MetricsReport,
                   name: str = "run", baseline_name: str = "baseline") -> str:
    """Per-class F1 change of ``report`` against ``baseline``."""
    lines = [f"class  {baseline_name:>10} {name:>10}   delta"]
    for code, b, r in zip(INSTRUMENTS, baseline.per_class_f1, report.per_class_f1):
        lines.append(f"{code:<6} {b:>10.3f} {r:>10.3f} {r - b:+7.3f}")
    return "\n".join(lines)


def report_records(report: MetricsReport) -> str:
    return json.dumps(report.to_json(), sort_keys=True)
