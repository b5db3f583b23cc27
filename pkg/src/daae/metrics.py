"""Sensitivity-thresholded evaluation: specificity at fixed sensitivity
targets, ROC AUC, and report emission.

Predictions are malignant iff score >= threshold (inclusive).  For a
sensitivity target t, the reported operating point uses the LARGEST
threshold among the distinct scores plus 0 whose sensitivity is >= t;
that rule makes the achieved specificity maximal for the target.  All
functions are pure over an immutable `ScoredSet`.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, ProtocolError

DEFAULT_SENSITIVITY_TARGETS = (0.82, 0.89, 0.95, 0.99)


@dataclass(frozen=True)
class ScoredSet:
    """Scores in [0,1] with binary labels; both classes required for metrics."""

    scores: np.ndarray
    labels: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64).reshape(-1))
        if self.scores.shape != self.labels.shape:
            raise ContractError("scores and labels must have equal length")
        if self.scores.size and (self.scores.min() < 0 or self.scores.max() > 1):
            raise ContractError("scores must lie in [0, 1]")

    def __len__(self):
        return self.scores.size

    def _require_both_classes(self):
        if self.scores.size == 0:
            raise ContractError("empty scored set")
        if not (np.any(self.labels == 1) and np.any(self.labels == 0)):
            raise ContractError("threshold metrics need at least one positive and one negative")


def confusion(scored, threshold):
    """(tp, fp, tn, fn) with 'predict malignant iff score >= threshold'."""
    if len(scored) == 0:
        raise ContractError("empty scored set")
    pred = scored.scores >= threshold
    pos = scored.labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    tn = int(np.sum(~pred & ~pos))
    fn = int(np.sum(~pred & pos))
    return tp, fp, tn, fn


def specificity_at_sensitivity(scored, target):
    """(threshold, sensitivity, specificity) at the largest threshold whose
    sensitivity reaches `target`.

    Candidate thresholds are the distinct observed scores plus 0; threshold
    0 predicts everything malignant, so a feasible candidate always exists.
    """
    if not 0 < target <= 1:
        raise ContractError(f"sensitivity target must be in (0, 1], got {target}")
    scored._require_both_classes()
    n_pos = int(np.sum(scored.labels == 1))
    n_neg = len(scored) - n_pos

    order = np.argsort(-scored.scores, kind="stable")
    sorted_scores = scored.scores[order]
    sorted_pos = (scored.labels[order] == 1).astype(np.int64)
    cum_tp = np.cumsum(sorted_pos)

    # last index of each run of equal scores = counts with threshold at that score
    is_last = np.ones(len(scored), dtype=bool)
    is_last[:-1] = sorted_scores[:-1] != sorted_scores[1:]
    cand_thresholds = sorted_scores[is_last]
    cand_tp = cum_tp[is_last]
    cand_n = np.flatnonzero(is_last) + 1  # predicted-positive count at each threshold

    # the smallest observed score already yields sensitivity 1, so a feasible
    # candidate always exists and the extra threshold 0 can never be maximal
    sens = cand_tp / n_pos
    i = int(np.argmax(sens >= target))  # thresholds are descending: first feasible = largest
    threshold = float(cand_thresholds[i])
    tp, n_pred = int(cand_tp[i]), int(cand_n[i])
    fp = n_pred - tp
    sensitivity = tp / n_pos
    specificity = (n_neg - fp) / n_neg
    return threshold, float(sensitivity), float(specificity)


def roc_auc(scored):
    """Trapezoidal area under the ROC curve over all distinct thresholds.

    Equals the Mann-Whitney pairwise statistic with ties counted 1/2.
    """
    scored._require_both_classes()
    n_pos = int(np.sum(scored.labels == 1))
    n_neg = len(scored) - n_pos

    order = np.argsort(-scored.scores, kind="stable")
    sorted_scores = scored.scores[order]
    sorted_pos = (scored.labels[order] == 1).astype(np.int64)
    cum_tp = np.cumsum(sorted_pos)
    cum_fp = np.cumsum(1 - sorted_pos)

    is_last = np.ones(len(scored), dtype=bool)
    is_last[:-1] = sorted_scores[:-1] != sorted_scores[1:]
    tpr = np.concatenate(([0.0], cum_tp[is_last] / n_pos))
    fpr = np.concatenate(([0.0], cum_fp[is_last] / n_neg))
    return float(np.trapezoid(tpr, fpr))


@dataclass
class MetricsReport:
    """Per-target operating points plus AUC and the raw audit pairs."""

    targets: tuple
    rows: list  # (target, threshold, sensitivity, specificity)
    auc: float
    provenance: str = ""
    scored: ScoredSet = None

    def validate(self):
        for target, _, sens, _ in self.rows:
            if sens + 1e-12 < target:
                raise ContractError(f"achieved sensitivity {sens} below target {target}")
        specs = [row[3] for row in sorted(self.rows, key=lambda r: r[0])]
        if any(b > a + 1e-12 for a, b in zip(specs, specs[1:])):
            raise ContractError("specificity must be non-increasing in the sensitivity target")
        return self

    def specificity_at(self, target):
        for t, _, _, spec in self.rows:
            if abs(t - target) < 1e-9:
                return spec
        raise KeyError(f"no row for sensitivity target {target}")


def score_set(scored_or_pairs, targets=DEFAULT_SENSITIVITY_TARGETS, provenance=""):
    """Build a MetricsReport from a ScoredSet (threshold chosen on this set)."""
    scored = scored_or_pairs
    rows = []
    for target in targets:
        thr, sens, spec = specificity_at_sensitivity(scored, target)
        rows.append((float(target), thr, sens, spec))
    report = MetricsReport(
        targets=tuple(targets),
        rows=rows,
        auc=roc_auc(scored),
        provenance=provenance or scored.provenance,
        scored=scored,
    )
    return report.validate()


def apply_thresholds(scored, target_thresholds, provenance=""):
    """Report (target, threshold, sensitivity, specificity) at externally
    chosen thresholds (the stricter protocol: select on validation, apply
    here).  Achieved sensitivity may fall below the target, so no
    invariant validation is run."""
    scored._require_both_classes()
    rows = []
    for target, thr in target_thresholds:
        tp, fp, tn, fn = confusion(scored, thr)
        rows.append((float(target), float(thr), tp / (tp + fn), tn / (tn + fp)))
    return MetricsReport(
        targets=tuple(t for t, _ in target_thresholds),
        rows=rows,
        auc=roc_auc(scored),
        provenance=provenance,
        scored=scored,
    )


def predict_scores(model, images, batch_size=64):
    """Clean-input inference scores for an image array [N,3,64,64]."""
    chunks = []
    for start in range(0, images.shape[0], batch_size):
        batch = np.ascontiguousarray(images[start : start + batch_size])
        chunks.append(model.classify(Tensor(batch)).data.reshape(-1))
    return np.concatenate(chunks) if chunks else np.zeros(0)


def evaluate(model, dataset, targets=DEFAULT_SENSITIVITY_TARGETS, batch_size=64, provenance=""):
    """Score a labelled split with clean inputs and report all target rows.

    Corruption never applies here: it is a training-time regularizer, and
    deployment sees clean images.
    """
    if dataset.labels is None:
        raise ProtocolError("evaluation requires a labelled split")
    scores = predict_scores(model, dataset.images, batch_size=batch_size)
    scored = ScoredSet(scores, dataset.labels.reshape(-1), provenance=provenance)
    return score_set(scored, targets=targets, provenance=provenance)


def write_report_csv(report, path):
    """CSV rows (target, threshold, sensitivity, specificity) + one auc row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sensitivity_target", "threshold", "sensitivity", "specificity"])
        for row in report.rows:
            writer.writerow([f"{v:.6g}" for v in row])
        writer.writerow(["auc", f"{report.auc:.6g}", "", ""])


def write_scores_csv(scored, ids, path):
    """Audit sidecar: one (id, score, label) row per example."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "score", "label"])
        for i, (s, l) in enumerate(zip(scored.scores, scored.labels)):
            writer.writerow([ids[i] if ids else i, f"{s:.8g}", int(l)])
