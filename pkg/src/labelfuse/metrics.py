"""Confusion-matrix evaluation with ambiguity-aware counting.

A prediction is scored through its correspondence set in the evaluation
space: if the ground-truth class is among the correspondences the sample is
a true positive for it; otherwise the ground truth gains a false negative
and *every* correspondence gains a false positive. Ground-truth id 0 marks
unlabeled samples and is ignored; an unknown or unmappable prediction has an
empty correspondence set and can only miss.

Per-class IoU = TP / (TP + FP + FN) and Acc (recall) = TP / (TP + FN).
Classes with no observations (TP + FP + FN = 0) are excluded from the mIoU
and mAcc means rather than scored zero; this matches common mIoU tooling but
does affect comparability, so it is stated here prominently. A class observed
only through false positives contributes Acc = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spaces import LabelMap, MappingTable, MappingError, UNKNOWN_ID

__all__ = [
    "ConfusionMatrix",
    "ClassStats",
    "EvalReport",
    "accumulate",
    "report",
    "eval_pointcloud",
]


class ConfusionMatrix:
    """Per-class TP/FP/FN counters in a fixed evaluation space.

    Mergeable (counterwise addition), which is the parallel-reduction
    contract for frame- or chunk-level accumulation.
    """

    def __init__(self, table: MappingTable, space_id: str):
        self.space_id = space_id
        space = table.space(space_id)
        n = space.max_id + 1
        self.tp = np.zeros(n, dtype=np.int64)
        self.fp = np.zeros(n, dtype=np.int64)
        self.fn = np.zeros(n, dtype=np.int64)
        self.total_samples = 0
        self.total_correct = 0
        self.ignored_samples = 0
        self.fp_increments = 0
        self.missed_with_candidates = 0

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.space_id != other.space_id:
            raise MappingError(
                f"cannot merge confusion matrices over '{self.space_id}' and '{other.space_id}'")
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.total_samples += other.total_samples
        self.total_correct += other.total_correct
        self.ignored_samples += other.ignored_samples
        self.fp_increments += other.fp_increments
        self.missed_with_candidates += other.missed_with_candidates
        return self


def _as_labels(value, what: str):
    if isinstance(value, LabelMap):
        return value.values.reshape(-1), value.space_id
    arr = np.asarray(value).reshape(-1)
    if not np.issubdtype(arr.dtype, np.integer):
        raise MappingError(f"{what} must be integer labels")
    return arr, None


def accumulate(cm: ConfusionMatrix, predictions, ground_truth, table: MappingTable,
               pred_space: str | None = None) -> ConfusionMatrix:
    """Score prediction/ground-truth label pairs into the counters.

    ``predictions`` may live in any registered space; ``ground_truth`` must be
    in the matrix's space. Both are flattened and must match in length.
    Correspondence candidates with id 0 cannot be credited or penalized (the
    sentinel is not a class) and are dropped from the candidate set.
    """
    pred, inferred = _as_labels(predictions, "predictions")
    if inferred is not None:
        pred_space = inferred
    if pred_space is None:
        raise MappingError("pred_space required when predictions are a bare array")
    gt, gt_space = _as_labels(ground_truth, "ground truth")
    if gt_space is not None and gt_space != cm.space_id:
        raise MappingError(
            f"ground truth is in '{gt_space}' but the matrix evaluates '{cm.space_id}'")
    if pred.shape != gt.shape:
        raise MappingError(f"predictions {pred.shape} vs ground truth {gt.shape}")
    space = table.space(cm.space_id)
    if gt.size and int(gt.max()) > space.max_id:
        raise MappingError(f"ground truth contains ids beyond space '{cm.space_id}'")

    lut = table.lut(pred_space, cm.space_id)
    if pred.size and int(pred.max()) >= lut.declared.size:
        raise MappingError(f"predictions contain ids beyond space '{pred_space}'")

    scored = gt != UNKNOWN_ID
    cm.ignored_samples += int((~scored).sum())
    cm.total_samples += int(scored.sum())
    if not scored.any():
        return cm
    pred = pred[scored]
    gt = gt[scored]
    known = pred != UNKNOWN_ID

    hit = np.zeros(len(gt), dtype=bool)
    candidate_layers = []
    for layer in lut.layers:
        cand = np.where(known, layer[pred], -1)
        cand = np.where(cand == 0, -1, cand)  # sentinel is not a class
        candidate_layers.append(cand)
        hit |= cand == gt

    n = len(cm.tp)
    cm.tp += np.bincount(gt[hit], minlength=n)
    cm.fn += np.bincount(gt[~hit], minlength=n)
    cm.total_correct += int(hit.sum())
    missed_any = np.zeros(len(gt), dtype=bool)
    for cand in candidate_layers:
        fp = (~hit) & (cand >= 0)
        cm.fp += np.bincount(cand[fp], minlength=n)
        cm.fp_increments += int(fp.sum())
        missed_any |= fp
    cm.missed_with_candidates += int(missed_any.sum())
    return cm


@dataclass
class ClassStats:
    class_id: int
    name: str
    iou: float
    acc: float
    tp: int
    fp: int
    fn: int


@dataclass
class EvalReport:
    space_id: str
    miou: float
    macc: float
    tacc: float
    rows: list[ClassStats] = field(default_factory=list)
    evaluated_classes: int = 0
    ignored_samples: int = 0
    total_samples: int = 0
    extra_false_positives: int = 0

    def summary_line(self) -> str:
        return f"miou={self.miou:.6f} macc={self.macc:.6f} tacc={self.tacc:.6f}"

    def to_text(self) -> str:
        lines = [
            f"evaluation space: {self.space_id}",
            f"samples: {self.total_samples} scored, {self.ignored_samples} ignored "
            f"(unlabeled gt), {self.extra_false_positives} extra ambiguity FPs",
            f"mIoU  {self.miou:.4f}",
            f"mAcc  {self.macc:.4f}",
            f"tAcc  {self.tacc:.4f}",
        ]
        if self.rows:
            width = max(len(r.name) for r in self.rows)
            lines.append(f"{'class':>{width}}  {'id':>5}  {'IoU':>6}  {'Acc':>6}  "
                         f"{'TP':>8}  {'FP':>8}  {'FN':>8}")
            for r in self.rows:
                lines.append(f"{r.name:>{width}}  {r.class_id:>5}  {r.iou:>6.4f}  "
                             f"{r.acc:>6.4f}  {r.tp:>8}  {r.fp:>8}  {r.fn:>8}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["class_id,name,iou,acc,tp,fp,fn"]
        for r in self.rows:
            lines.append(f"{r.class_id},{r.name},{r.iou:.10g},{r.acc:.10g},{r.tp},{r.fp},{r.fn}")
        return "\n".join(lines)


def report(cm: ConfusionMatrix, table: MappingTable) -> EvalReport:
    """Reduce counters to mIoU/mAcc/tAcc plus per-class rows sorted by id."""
    space = table.space(cm.space_id)
    rows = []
    ious = []
    accs = []
    for cid in space.class_ids():
        if cid == UNKNOWN_ID:
            continue
        tp, fp, fn = int(cm.tp[cid]), int(cm.fp[cid]), int(cm.fn[cid])
        if tp + fp + fn == 0:
            continue
        iou = tp / (tp + fp + fn)
        acc = tp / (tp + fn) if tp + fn else 0.0
        rows.append(ClassStats(cid, space.name_of(cid), iou, acc, tp, fp, fn))
        ious.append(iou)
        accs.append(acc)
    tacc = cm.total_correct / cm.total_samples if cm.total_samples else 0.0
    extra = cm.fp_increments - cm.missed_with_candidates
    return EvalReport(
        space_id=cm.space_id,
        miou=float(np.mean(ious)) if ious else 0.0,
        macc=float(np.mean(accs)) if accs else 0.0,
        tacc=tacc,
        rows=rows,
        evaluated_classes=len(rows),
        ignored_samples=cm.ignored_samples,
        total_samples=cm.total_samples,
        extra_false_positives=extra,
    )


def eval_pointcloud(pred, gt, table: MappingTable, target: str) -> EvalReport:
    """Evaluate a labeled cloud against ground truth with identical ordering."""
    if len(pred.points) != len(gt.points):
        raise MappingError(
            f"point count mismatch: {len(pred.points)} predicted vs {len(gt.points)} ground truth")
    if gt.space_id != target:
        raise MappingError(
            f"ground-truth cloud is in '{gt.space_id}', expected evaluation space '{target}'")
    cm = ConfusionMatrix(table, target)
    accumulate(cm, pred.labels, gt.labels, table, pred_space=pred.space_id)
    return report(cm, table)
