"""Detection and classification metrics.

Detection side: greedy score-ordered matching of detections to ground
truths, average precision over the all-points interpolated PR envelope
(with an optional 11-point variant), COCO-style mAP presets including size
buckets, and average recall at a detections-per-image budget.

Classification side: confusion matrices, one-vs-rest per-class metrics,
ROC curves with trapezoidal AUC, stratified fold sampling and fold
averaging.

AP is computed in exact rational arithmetic (:class:`fractions.Fraction`)
and converted to float once at the end, so equal inputs give bit-equal
outputs regardless of summation order.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import BoundingBox, Detection, GroundTruth, iou

#: IoU thresholds 0.50:0.05:0.95 used by the strict mAP preset.
COCO_IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))

#: Object-size buckets by box area in square pixels.
SMALL_MAX_AREA = 32.0**2
MEDIUM_MAX_AREA = 96.0**2

SIZE_BUCKETS = ("small", "medium", "large")


def _area_in_bucket(area: float, bucket: str) -> bool:
    if bucket == "small":
        return area < SMALL_MAX_AREA
    if bucket == "medium":
        return SMALL_MAX_AREA <= area <= MEDIUM_MAX_AREA
    if bucket == "large":
        return area > MEDIUM_MAX_AREA
    raise ValueError(f"unknown size bucket {bucket!r}; expected one of {SIZE_BUCKETS}")


@dataclass(frozen=True)
class EvalSample:
    """One image's detections and ground truths, under a stable id."""

    image_id: str
    detections: tuple[Detection, ...]
    truths: tuple[GroundTruth, ...]

    def __init__(
        self,
        image_id: str,
        detections: Iterable[Detection] = (),
        truths: Iterable[GroundTruth] = (),
    ) -> None:
        object.__setattr__(self, "image_id", image_id)
        object.__setattr__(self, "detections", tuple(detections))
        object.__setattr__(self, "truths", tuple(truths))


@dataclass(frozen=True)
class MatchResult:
    """Per-detection TP flags and per-truth matched flags, input order."""

    detection_is_tp: tuple[bool, ...]
    truth_matched: tuple[bool, ...]

    @property
    def true_positives(self) -> int:
        return sum(self.detection_is_tp)

    @property
    def false_positives(self) -> int:
        return len(self.detection_is_tp) - self.true_positives

    @property
    def false_negatives(self) -> int:
        return len(self.truth_matched) - sum(self.truth_matched)


def match_detections(
    detections: Sequence[Detection],
    truths: Sequence[GroundTruth],
    iou_threshold: float,
) -> MatchResult:
    """Greedily match detections to ground truths of the same class.

    Detections are visited in score order (ties: lower class id, then input
    order).  Each takes the unmatched same-class truth with the highest IoU,
    provided that IoU reaches ``iou_threshold`` (inclusive); ties on IoU go
    to the lowest truth index.  Each truth matches at most once, so a
    duplicate detection of an already-claimed object is a false positive.
    """
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    is_tp = [False] * len(detections)
    matched = [False] * len(truths)
    order = sorted(
        range(len(detections)),
        key=lambda i: (-detections[i].score, detections[i].class_id, i),
    )
    for i in order:
        det = detections[i]
        best_j = -1
        best_iou = 0.0
        for j, gt in enumerate(truths):
            if matched[j] or gt.class_id != det.class_id:
                continue
            val = iou(det.box, gt.box)
            if val >= iou_threshold and val > best_iou:
                best_iou = val
                best_j = j
        # iou_threshold == 0 admits zero-overlap pairs; accept the first
        # unmatched truth in that degenerate configuration as well.
        if best_j < 0 and iou_threshold == 0.0:
            for j, gt in enumerate(truths):
                if not matched[j] and gt.class_id == det.class_id:
                    best_j = j
                    break
        if best_j >= 0:
            matched[best_j] = True
            is_tp[i] = True
    return MatchResult(tuple(is_tp), tuple(matched))


# ---------------------------------------------------------------------------
# Average precision
# ---------------------------------------------------------------------------


def _bucket_ok(box: BoundingBox, bucket: str | None) -> bool:
    return bucket is None or _area_in_bucket(box.area, bucket)


def _ranked_flags(
    samples: Sequence[EvalSample],
    class_id: int,
    iou_threshold: float,
    size_bucket: str | None,
) -> tuple[list[bool], int]:
    """TP/FP flags in global rank order plus the in-scope truth count.

    Both detections and truths are restricted to ``class_id``; a size
    bucket additionally restricts the *truths* (detections stay in the
    ranking and count as false positives when nothing in-bucket matches).
    Matching within each image follows the same greedy rule as
    :func:`match_detections`.
    """
    truths_by_image: dict[int, list[GroundTruth]] = {}
    n_truths = 0
    for si, sample in enumerate(samples):
        kept = [
            gt
            for gt in sample.truths
            if gt.class_id == class_id and _bucket_ok(gt.box, size_bucket)
        ]
        truths_by_image[si] = kept
        n_truths += len(kept)

    pool: list[tuple[float, int, int, Detection]] = []
    for si, sample in enumerate(samples):
        for di, det in enumerate(sample.detections):
            if det.class_id == class_id:
                pool.append((det.score, si, di, det))
    pool.sort(key=lambda item: (-item[0], item[1], item[2]))

    matched: dict[int, list[bool]] = {si: [False] * len(v) for si, v in truths_by_image.items()}
    flags: list[bool] = []
    for score, si, _di, det in pool:
        gts = truths_by_image[si]
        taken = matched[si]
        best_j = -1
        best_iou = 0.0
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            val = iou(det.box, gt.box)
            if val >= iou_threshold and val > best_iou:
                best_iou = val
                best_j = j
        if best_j < 0 and iou_threshold == 0.0:
            for j in range(len(gts)):
                if not taken[j]:
                    best_j = j
                    break
        if best_j >= 0:
            taken[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags, n_truths


def _ap_from_flags(flags: Sequence[bool], n_truths: int, eleven_point: bool) -> Fraction:
    """Exact AP from rank-ordered TP flags.

    All-points form: the precision envelope (running max from the right)
    integrated over recall.  Eleven-point form: mean of the envelope
    sampled at recalls 0.0, 0.1, ..., 1.0.  No truths or no detections
    give AP 0.
    """
    if n_truths == 0 or not flags:
        return Fraction(0)
    recalls: list[Fraction] = []
    precisions: list[Fraction] = []
    tp = 0
    for k, flag in enumerate(flags, start=1):
        if flag:
            tp += 1
        recalls.append(Fraction(tp, n_truths))
        precisions.append(Fraction(tp, k))

    envelope = list(precisions)
    for k in range(len(envelope) - 2, -1, -1):
        if envelope[k + 1] > envelope[k]:
            envelope[k] = envelope[k + 1]

    if eleven_point:
        total = Fraction(0)
        for tenth in range(11):
            target = Fraction(tenth, 10)
            best = Fraction(0)
            for r, p in zip(recalls, envelope):
                if r >= target:
                    best = max(best, p)
            total += best
        return total / 11

    ap = Fraction(0)
    prev_recall = Fraction(0)
    for r, p in zip(recalls, envelope):
        if r > prev_recall:
            ap += (r - prev_recall) * p
            prev_recall = r
    return ap


def average_precision(
    samples: Sequence[EvalSample],
    iou_threshold: float,
    class_id: int,
    *,
    eleven_point: bool = False,
    size_bucket: str | None = None,
) -> float:
    """AP for one class at one IoU threshold across a set of images."""
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    if size_bucket is not None:
        _area_in_bucket(0.0, size_bucket)  # validate the bucket name
    flags, n_truths = _ranked_flags(samples, class_id, iou_threshold, size_bucket)
    return float(_ap_from_flags(flags, n_truths, eleven_point))


def _classes_with_truths(samples: Sequence[EvalSample], size_bucket: str | None) -> list[int]:
    seen: set[int] = set()
    for sample in samples:
        for gt in sample.truths:
            if _bucket_ok(gt.box, size_bucket):
                seen.add(gt.class_id)
    return sorted(seen)


def ap_table(
    samples: Sequence[EvalSample],
    iou_thresholds: Sequence[float],
    *,
    class_ids: Sequence[int] | None = None,
    eleven_point: bool = False,
    size_bucket: str | None = None,
) -> dict[int, dict[float, float]]:
    """AP per (class, IoU threshold).

    Classes default to those with at least one in-scope ground truth, so a
    class absent from the annotations cannot drag a later mean down.
    """
    if not iou_thresholds:
        raise ValueError("iou_thresholds must be non-empty")
    ids = list(class_ids) if class_ids is not None else _classes_with_truths(samples, size_bucket)
    table: dict[int, dict[float, float]] = {}
    for cid in ids:
        row: dict[float, float] = {}
        for thr in iou_thresholds:
            if not (0.0 <= thr <= 1.0):
                raise ValueError(f"iou threshold must be in [0, 1], got {thr}")
            flags, n_truths = _ranked_flags(samples, cid, thr, size_bucket)
            row[thr] = float(_ap_from_flags(flags, n_truths, eleven_point))
        table[cid] = row
    return table


def mean_ap(
    per_class_results: Mapping[int, Mapping[float, float]],
    iou_thresholds: Sequence[float] | None = None,
) -> float:
    """Flat mean of an AP table over classes and thresholds.

    ``iou_thresholds`` selects which thresholds to average (all present by
    default); an explicitly empty list is rejected, as is an empty table.
    """
    if not per_class_results:
        raise ValueError("need at least one class of AP results")
    if iou_thresholds is not None and not iou_thresholds:
        raise ValueError("iou_thresholds must be non-empty")
    cells: list[float] = []
    for cid in sorted(per_class_results):
        row = per_class_results[cid]
        keys = iou_thresholds if iou_thresholds is not None else sorted(row)
        for thr in keys:
            cells.append(row[thr])
    if not cells:
        raise ValueError("AP table has no thresholds")
    return math.fsum(cells) / len(cells)


def _map_preset(
    samples: Sequence[EvalSample],
    iou_thresholds: Sequence[float],
    size_bucket: str | None = None,
    **kwargs,
) -> float:
    table = ap_table(samples, iou_thresholds, size_bucket=size_bucket, **kwargs)
    if not table:
        return 0.0
    return mean_ap(table, iou_thresholds)


def map_at_50(samples: Sequence[EvalSample], **kwargs) -> float:
    """mAP at IoU 0.50."""
    return _map_preset(samples, (0.5,), **kwargs)


def map_at_75(samples: Sequence[EvalSample], **kwargs) -> float:
    """mAP at IoU 0.75."""
    return _map_preset(samples, (0.75,), **kwargs)


def map_coco(samples: Sequence[EvalSample], **kwargs) -> float:
    """mAP averaged over IoU 0.50:0.05:0.95."""
    return _map_preset(samples, COCO_IOU_THRESHOLDS, **kwargs)


def map_small(samples: Sequence[EvalSample], **kwargs) -> float:
    """Strict-preset mAP over ground truths with area < 32^2."""
    return _map_preset(samples, COCO_IOU_THRESHOLDS, size_bucket="small", **kwargs)


def map_medium(samples: Sequence[EvalSample], **kwargs) -> float:
    """Strict-preset mAP over ground truths with area in [32^2, 96^2]."""
    return _map_preset(samples, COCO_IOU_THRESHOLDS, size_bucket="medium", **kwargs)


def map_large(samples: Sequence[EvalSample], **kwargs) -> float:
    """Strict-preset mAP over ground truths with area > 96^2."""
    return _map_preset(samples, COCO_IOU_THRESHOLDS, size_bucket="large", **kwargs)


def average_recall_at_k(
    samples: Sequence[EvalSample],
    k: int,
    iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
    *,
    size_bucket: str | None = None,
) -> float:
    """Recall with at most ``k`` detections per image, averaged over the
    IoU thresholds and over classes that have in-scope ground truths.

    Within each image only the top-k detections by score survive (ties:
    lower class id, then input order); beyond-budget detections can never
    match anything.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if not iou_thresholds:
        raise ValueError("iou_thresholds must be non-empty")
    truncated = []
    for sample in samples:
        order = sorted(
            range(len(sample.detections)),
            key=lambda i: (
                -sample.detections[i].score,
                sample.detections[i].class_id,
                i,
            ),
        )[:k]
        kept = tuple(sample.detections[i] for i in sorted(order))
        truncated.append(EvalSample(sample.image_id, kept, sample.truths))

    ids = _classes_with_truths(truncated, size_bucket)
    if not ids:
        return 0.0
    total = Fraction(0)
    count = 0
    for cid in ids:
        for thr in iou_thresholds:
            if not (0.0 <= thr <= 1.0):
                raise ValueError(f"iou threshold must be in [0, 1], got {thr}")
            flags, n_truths = _ranked_flags(truncated, cid, thr, size_bucket)
            total += Fraction(sum(flags), n_truths) if n_truths else Fraction(0)
            count += 1
    return float(total / count)


# ---------------------------------------------------------------------------
# Confusion matrices and per-class metrics
# ---------------------------------------------------------------------------


class ConfusionMatrix:
    """Square label-by-label count matrix; rows are truth, columns prediction."""

    def __init__(self, labels: Sequence[str], counts: np.ndarray | None = None) -> None:
        labels = tuple(labels)
        if not labels:
            raise ValueError("need at least one label")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels in {labels}")
        self.labels = labels
        n = len(labels)
        if counts is None:
            self._counts = np.zeros((n, n), dtype=np.int64)
        else:
            arr = np.asarray(counts, dtype=np.int64)
            if arr.shape != (n, n):
                raise ValueError(f"counts must be {n}x{n}, got {arr.shape}")
            if (arr < 0).any():
                raise ValueError("counts must be non-negative")
            self._counts = arr.copy()
        self._index = {lab: i for i, lab in enumerate(labels)}

    @classmethod
    def from_pairs(
        cls, labels: Sequence[str], pairs: Iterable[tuple[str, str]]
    ) -> "ConfusionMatrix":
        cm = cls(labels)
        for true_label, predicted_label in pairs:
            cm.add(true_label, predicted_label)
        return cm

    def add(self, true_label: str, predicted_label: str, count: int = 1) -> None:
        if count < 0:
            raise ValueError(f"count must be non-negative, got {count}")
        self._counts[self._index[true_label], self._index[predicted_label]] += count

    def count(self, true_label: str, predicted_label: str) -> int:
        return int(self._counts[self._index[true_label], self._index[predicted_label]])

    @property
    def counts(self) -> np.ndarray:
        return self._counts.copy()

    def total(self) -> int:
        return int(self._counts.sum())

    def support(self, label: str) -> int:
        """Number of samples whose true label is ``label``."""
        return int(self._counts[self._index[label]].sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.labels != other.labels:
            raise ValueError("cannot add confusion matrices with different labels")
        return ConfusionMatrix(self.labels, self._counts + other._counts)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.labels == other.labels and bool((self._counts == other._counts).all())

    def __repr__(self) -> str:
        return f"ConfusionMatrix(labels={self.labels}, total={self.total()})"


@dataclass(frozen=True)
class ClassMetrics:
    """One-vs-rest metrics for a single class (or an across-class average)."""

    accuracy: float
    precision: float
    sensitivity: float
    specificity: float
    f1: float
    support: float

    FIELDS = ("accuracy", "precision", "sensitivity", "specificity", "f1")


def _safe_div(num: float, den: float) -> float:
    """num/den with the 0/0 (and x/0) convention of 0."""
    return num / den if den != 0 else 0.0


def per_class_metrics(cm: ConfusionMatrix, label: str) -> ClassMetrics:
    """One-vs-rest accuracy/precision/sensitivity/specificity/F1 for a label.

    TP is the diagonal cell; FP the rest of the column; FN the rest of the
    row; TN everything else.  Every ratio uses the divide-by-zero -> 0
    convention, including F1 when precision + sensitivity is 0.
    """
    if label not in cm.labels:
        raise KeyError(f"label {label!r} not in {cm.labels}")
    i = cm.labels.index(label)
    counts = cm.counts
    tp = float(counts[i, i])
    fp = float(counts[:, i].sum() - counts[i, i])
    fn = float(counts[i, :].sum() - counts[i, i])
    tn = float(counts.sum() - tp - fp - fn)
    precision = _safe_div(tp, tp + fp)
    sensitivity = _safe_div(tp, tp + fn)
    specificity = _safe_div(tn, tn + fp)
    accuracy = _safe_div(tp + tn, tp + tn + fp + fn)
    f1 = _safe_div(2.0 * precision * sensitivity, precision + sensitivity)
    return ClassMetrics(
        accuracy=accuracy,
        precision=precision,
        sensitivity=sensitivity,
        specificity=specificity,
        f1=f1,
        support=tp + fn,
    )


@dataclass(frozen=True)
class MetricReport:
    """Per-class metric rows plus an across-class average row."""

    per_class: Mapping[str, ClassMetrics]
    overall: ClassMetrics

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self.per_class.keys())


def _mean_metrics(rows: Sequence[ClassMetrics], support: float) -> ClassMetrics:
    n = len(rows)
    values = {
        name: math.fsum(getattr(row, name) for row in rows) / n
        for name in ClassMetrics.FIELDS
    }
    return ClassMetrics(support=support, **values)


def report_from_confusion(cm: ConfusionMatrix) -> MetricReport:
    """Per-class metrics for every label plus their unweighted mean."""
    per_class = {label: per_class_metrics(cm, label) for label in cm.labels}
    rows = list(per_class.values())
    overall = _mean_metrics(rows, support=float(cm.total()))
    return MetricReport(per_class=per_class, overall=overall)


def aggregate_folds(reports: Sequence[MetricReport]) -> MetricReport:
    """Average per-class metrics across folds (plain mean, equal weight).

    All folds must carry the same class set.  The overall row of the result
    is the across-class mean of the averaged per-class rows; supports are
    averaged like any other column.
    """
    if not reports:
        raise ValueError("need at least one fold report")
    labels = reports[0].labels
    for rep in reports[1:]:
        if rep.labels != labels:
            raise ValueError(f"fold class sets differ: {labels} vs {rep.labels}")
    n = len(reports)
    averaged: dict[str, ClassMetrics] = {}
    for label in labels:
        rows = [rep.per_class[label] for rep in reports]
        values = {
            name: math.fsum(getattr(row, name) for row in rows) / n
            for name in ClassMetrics.FIELDS
        }
        support = math.fsum(row.support for row in rows) / n
        averaged[label] = ClassMetrics(support=support, **values)
    overall_support = math.fsum(rep.overall.support for rep in reports) / n
    overall = _mean_metrics(list(averaged.values()), support=overall_support)
    return MetricReport(per_class=averaged, overall=overall)


# ---------------------------------------------------------------------------
# ROC / AUC
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RocCurve:
    """ROC points (FPR, TPR) from (0,0) to (1,1) plus trapezoidal AUC."""

    points: tuple[tuple[float, float], ...]
    auc: float


def roc_auc(scored: Sequence[tuple[float, bool]]) -> RocCurve:
    """ROC curve for (score, is_positive) pairs, sweeping the threshold
    from high to low.

    Tied scores move along a single diagonal segment, so the trapezoidal
    AUC equals the Mann-Whitney statistic with ties counted half.  Needs at
    least one positive and one negative.
    """
    n_pos = sum(1 for _s, y in scored if y)
    n_neg = len(scored) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"need at least one positive and one negative, got {n_pos} and {n_neg}"
        )
    by_score: dict[float, list[bool]] = {}
    for score, y in scored:
        by_score.setdefault(float(score), []).append(bool(y))

    points: list[tuple[Fraction, Fraction]] = [(Fraction(0), Fraction(0))]
    tp = 0
    fp = 0
    for score in sorted(by_score, reverse=True):
        group = by_score[score]
        tp += sum(group)
        fp += len(group) - sum(group)
        points.append((Fraction(fp, n_neg), Fraction(tp, n_pos)))

    area = Fraction(0)
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2
    floated = tuple((float(x), float(y)) for x, y in points)
    return RocCurve(points=floated, auc=float(area))


# ---------------------------------------------------------------------------
# Stratified folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSpec:
    """One evaluation fold: sampled image ids grouped by class."""

    fold_index: int
    ids_by_class: Mapping[str, tuple[str, ...]]

    @property
    def image_ids(self) -> tuple[str, ...]:
        out: list[str] = []
        for label in sorted(self.ids_by_class):
            out.extend(self.ids_by_class[label])
        return tuple(out)

    @property
    def size(self) -> int:
        return sum(len(v) for v in self.ids_by_class.values())


def make_folds(
    catalog: Mapping[str, Sequence[str]],
    per_class: int = 29,
    folds: int = 10,
    rng_seed: int = 0,
) -> list[FoldSpec]:
    """Draw ``folds`` independent stratified samples from a class catalog.

    Each fold draws exactly ``per_class`` ids per class without replacement
    *within* the fold; folds are sampled independently, so ids recur across
    folds.  Classes are visited in sorted order and ids are sorted before
    sampling, making the output a pure function of (catalog contents, seed).
    Raises if any class has fewer than ``per_class`` ids or if an id appears
    under two classes.
    """
    if per_class < 1:
        raise ValueError(f"per_class must be positive, got {per_class}")
    if folds < 1:
        raise ValueError(f"folds must be positive, got {folds}")
    if not catalog:
        raise ValueError("catalog must be non-empty")
    seen: dict[str, str] = {}
    pools: dict[str, list[str]] = {}
    for label in sorted(catalog):
        ids = sorted(catalog[label])
        if len(set(ids)) != len(ids):
            raise ValueError(f"class {label!r} lists a duplicate image id")
        for image_id in ids:
            if image_id in seen:
                raise ValueError(
                    f"image id {image_id!r} appears under both {seen[image_id]!r} and {label!r}"
                )
            seen[image_id] = label
        if len(ids) < per_class:
            raise ValueError(
                f"class {label!r} has {len(ids)} images, needs at least {per_class}"
            )
        pools[label] = ids

    rng = random.Random(rng_seed)
    out: list[FoldSpec] = []
    for fold_index in range(1, folds + 1):
        ids_by_class = {
            label: tuple(rng.sample(pools[label], per_class)) for label in sorted(pools)
        }
        out.append(FoldSpec(fold_index=fold_index, ids_by_class=ids_by_class))
    return out
