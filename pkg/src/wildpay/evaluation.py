"""Image-level evaluation: fold protocol, confusion, ROC and detection suites.

Ground truth arrives as a directory of VOC XML files, predictions as a
JSON-lines file keyed by image id.  Each image is reduced to a 13-way
classification decision (12 species + blank): the true label is the
majority class among the annotated boxes, the predicted label is the
class of the highest-scoring detection.  On top of that sit stratified
folds with per-fold metric tables, a pooled confusion matrix, one-vs-rest
ROC curves, and box-level AP/AR summaries.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig
from .events import SpeciesDetection
from .geometry import BoundingBox, Detection, GroundTruth
from .ledger import PaymentTable
from .metrics import (
    ConfusionMatrix,
    EvalSample,
    FoldSpec,
    MetricReport,
    RocCurve,
    aggregate_folds,
    average_recall_at_k,
    make_folds,
    map_at_50,
    map_at_75,
    map_coco,
    map_large,
    map_medium,
    map_small,
    report_from_confusion,
    roc_auc,
)
from .voc import parse_voc_xml


class EvaluationError(ValueError):
    """Raised when ground truth and predictions cannot be reconciled."""


@dataclass(frozen=True)
class ImageEval:
    """One image's ground-truth boxes and predicted detections."""

    image_id: str
    truths: tuple[tuple[str, BoundingBox], ...]
    detections: tuple[SpeciesDetection, ...]

    def true_label(self, blank_label: str) -> str:
        """Majority class among the annotated boxes; ties go to the class
        whose first box appears earliest in the annotation."""
        if not self.truths:
            return blank_label
        counts: dict[str, int] = {}
        for name, _box in self.truths:
            counts[name] = counts.get(name, 0) + 1
        best = self.truths[0][0]
        for name in counts:
            if counts[name] > counts[best]:
                best = name
        # dict preserves first-occurrence order, so the scan above already
        # prefers the earliest class on equal counts.
        return best

    def predicted_label(self, blank_label: str) -> str:
        if not self.detections:
            return blank_label
        best = self.detections[0]
        for det in self.detections[1:]:
            if det.score > best.score:
                best = det
        return best.species

    def class_scores(self) -> dict[str, float]:
        """Highest detection score per predicted class."""
        out: dict[str, float] = {}
        for det in self.detections:
            if det.score > out.get(det.species, -1.0):
                out[det.species] = det.score
        return out


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def load_ground_truth(gt_dir: str | Path) -> dict[str, tuple[tuple[str, BoundingBox], ...]]:
    """Parse every ``*.xml`` under ``gt_dir`` into image_id -> labelled boxes.

    The image id is the annotation's ``<filename>`` verbatim; two files
    claiming the same id is an error.
    """
    gt_dir = Path(gt_dir)
    if not gt_dir.is_dir():
        raise EvaluationError(f"ground-truth directory {gt_dir} does not exist")
    out: dict[str, tuple[tuple[str, BoundingBox], ...]] = {}
    for path in sorted(gt_dir.rglob("*.xml")):
        doc = parse_voc_xml(path.read_text(encoding="utf-8"))
        if doc.filename in out:
            raise EvaluationError(
                f"image id {doc.filename!r} annotated more than once (second copy: {path})"
            )
        out[doc.filename] = tuple(
            (obj.name, obj.to_bounding_box()) for obj in doc.objects
        )
    if not out:
        raise EvaluationError(f"no VOC XML files found under {gt_dir}")
    return out


def load_predictions(path: str | Path) -> dict[str, tuple[SpeciesDetection, ...]]:
    """Parse a predictions JSONL file: one object per line with an
    ``image_id`` and a ``detections`` list of {class, score, box} dicts."""
    path = Path(path)
    out: dict[str, tuple[SpeciesDetection, ...]] = {}
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvaluationError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            if not isinstance(data, dict) or "image_id" not in data:
                raise EvaluationError(f"{path}:{lineno}: expected an image_id field")
            image_id = str(data["image_id"])
            if image_id in out:
                raise EvaluationError(f"{path}:{lineno}: duplicate image id {image_id!r}")
            try:
                dets = tuple(
                    SpeciesDetection.from_dict(d) for d in data.get("detections", [])
                )
            except (TypeError, KeyError, ValueError) as exc:
                raise EvaluationError(f"{path}:{lineno}: bad detection: {exc}") from exc
            out[image_id] = dets
    return out


def build_image_evals(
    ground_truth: Mapping[str, Sequence[tuple[str, BoundingBox]]],
    predictions: Mapping[str, Sequence[SpeciesDetection]],
) -> tuple[ImageEval, ...]:
    """Join ground truth and predictions on image id.

    Every predicted id must be annotated; annotated images without a
    prediction line simply have no detections.
    """
    unknown = sorted(set(predictions) - set(ground_truth))
    if unknown:
        raise EvaluationError(
            f"predictions reference unannotated image ids: {unknown[:5]}"
        )
    return tuple(
        ImageEval(
            image_id=image_id,
            truths=tuple(ground_truth[image_id]),
            detections=tuple(predictions.get(image_id, ())),
        )
        for image_id in sorted(ground_truth)
    )


def class_catalog(
    evals: Sequence[ImageEval], blank_label: str
) -> dict[str, list[str]]:
    """Group image ids by true label, the shape make_folds expects."""
    out: dict[str, list[str]] = {}
    for ev in evals:
        out.setdefault(ev.true_label(blank_label), []).append(ev.image_id)
    return out


# ---------------------------------------------------------------------------
# Classification metrics over folds
# ---------------------------------------------------------------------------


def confusion_for_images(
    evals_by_id: Mapping[str, ImageEval],
    image_ids: Sequence[str],
    labels: Sequence[str],
    blank_label: str,
) -> ConfusionMatrix:
    cm = ConfusionMatrix(labels)
    for image_id in image_ids:
        ev = evals_by_id[image_id]
        true = ev.true_label(blank_label)
        pred = ev.predicted_label(blank_label)
        if true not in cm.labels:
            raise EvaluationError(f"image {image_id!r}: unknown true class {true!r}")
        if pred not in cm.labels:
            raise EvaluationError(f"image {image_id!r}: unknown predicted class {pred!r}")
        cm.add(true, pred)
    return cm


def roc_by_class(
    evals: Sequence[ImageEval], labels: Sequence[str], blank_label: str
) -> dict[str, RocCurve]:
    """One-vs-rest ROC per class over all images.

    The score for a class is the image's best detection score for that
    class (0 when nothing was predicted); for the blank class the score is
    1 minus the best overall detection score, so confidently-empty images
    rank first.  Classes without both a positive and a negative example
    are skipped.
    """
    out: dict[str, RocCurve] = {}
    for label in labels:
        scored: list[tuple[float, bool]] = []
        for ev in evals:
            scores = ev.class_scores()
            if label == blank_label:
                score = 1.0 - max(scores.values(), default=0.0)
            else:
                score = scores.get(label, 0.0)
            scored.append((score, ev.true_label(blank_label) == label))
        n_pos = sum(1 for _s, y in scored if y)
        if 0 < n_pos < len(scored):
            out[label] = roc_auc(scored)
    return out


# ---------------------------------------------------------------------------
# Box-level detection metrics
# ---------------------------------------------------------------------------


def detection_samples(
    evals: Sequence[ImageEval], species: Sequence[str]
) -> list[EvalSample]:
    """Convert images to box-level samples; class ids index into the
    sorted species roster.  Unknown prediction classes are an error."""
    index = {name: i for i, name in enumerate(sorted(species))}
    samples: list[EvalSample] = []
    for ev in evals:
        truths = []
        for name, box in ev.truths:
            if name not in index:
                raise EvaluationError(
                    f"image {ev.image_id!r}: unknown ground-truth class {name!r}"
                )
            truths.append(GroundTruth(box=box, class_id=index[name]))
        dets = []
        for det in ev.detections:
            if det.species not in index:
                raise EvaluationError(
                    f"image {ev.image_id!r}: unknown predicted class {det.species!r}"
                )
            dets.append(
                Detection(
                    box=BoundingBox(*det.box),
                    score=det.score,
                    class_id=index[det.species],
                )
            )
        samples.append(EvalSample(ev.image_id, dets, truths))
    return samples


def detection_summary(samples: Sequence[EvalSample]) -> dict[str, float]:
    """The headline AP/AR numbers, COCO-style."""
    return {
        "map_50": map_at_50(samples),
        "map_75": map_at_75(samples),
        "map_50_95": map_coco(samples),
        "map_small": map_small(samples),
        "map_medium": map_medium(samples),
        "map_large": map_large(samples),
        "ar_1": average_recall_at_k(samples, 1),
        "ar_10": average_recall_at_k(samples, 10),
        "ar_100": average_recall_at_k(samples, 100),
    }


# ---------------------------------------------------------------------------
# The bundle cmd_eval writes out
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportBundle:
    """Everything one evaluation run produces, ready for the CSV writers."""

    labels: tuple[str, ...]
    folds: tuple[FoldSpec, ...]
    fold_reports: tuple[MetricReport, ...]
    averaged: MetricReport
    confusion: ConfusionMatrix
    roc: Mapping[str, RocCurve]
    detection: Mapping[str, float]
    metadata: Mapping[str, object]
    payments: PaymentTable | None = None


def run_evaluation(
    ground_truth: Mapping[str, Sequence[tuple[str, BoundingBox]]],
    predictions: Mapping[str, Sequence[SpeciesDetection]],
    config: RunConfig,
) -> ReportBundle:
    """Fold, score and summarize one (ground truth, predictions) pair."""
    evals = build_image_evals(ground_truth, predictions)
    evals_by_id = {ev.image_id: ev for ev in evals}
    labels = config.class_labels
    blank = config.blank_label

    catalog = class_catalog(evals, blank)
    missing = sorted(set(catalog) - set(labels))
    if missing:
        raise EvaluationError(f"ground truth uses classes outside the roster: {missing}")
    folds = make_folds(
        catalog, per_class=config.per_class, folds=config.folds, rng_seed=config.seed
    )

    fold_confusions = [
        confusion_for_images(evals_by_id, spec.image_ids, labels, blank)
        for spec in folds
    ]
    fold_reports = tuple(report_from_confusion(cm) for cm in fold_confusions)
    pooled = fold_confusions[0]
    for cm in fold_confusions[1:]:
        pooled = pooled + cm

    samples = detection_samples(evals, config.species)
    metadata = {
        "config_digest": config.digest(),
        "images": len(evals),
        "classes": list(labels),
        "folds": config.folds,
        "per_class": config.per_class,
        "seed": config.seed,
    }
    return ReportBundle(
        labels=labels,
        folds=tuple(folds),
        fold_reports=fold_reports,
        averaged=aggregate_folds(fold_reports),
        confusion=pooled,
        roc=roc_by_class(evals, labels, blank),
        detection=detection_summary(samples),
        metadata=metadata,
    )


def run_evaluation_files(
    predictions_path: str | Path, gt_dir: str | Path, config: RunConfig
) -> ReportBundle:
    """File-path front end for :func:`run_evaluation`."""
    return run_evaluation(
        load_ground_truth(gt_dir), load_predictions(predictions_path), config
    )
