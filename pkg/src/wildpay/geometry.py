"""Axis-aligned box geometry for detector post-processing.

Everything in this module is deliberately scalar Python: intersection/union
ratios, anchor grids, greedy suppression, the log-space box-delta codec and
the anchor/proposal labelling rules that feed training.  The functions are
small enough that exactness and auditability beat vectorisation.

Conventions: boxes are ``(x_min, y_min, x_max, y_max)`` in pixels with
``x_min <= x_max`` and ``y_min <= y_max``; a degenerate box (zero width or
height) is legal and has zero area.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence, Union


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned rectangle in pixel coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValueError(
                f"invalid box: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @classmethod
    def from_center(cls, cx: float, cy: float, width: float, height: float) -> "BoundingBox":
        """Build a box from its center point and side lengths."""
        if width < 0 or height < 0:
            raise ValueError(f"negative side length: width={width} height={height}")
        return cls(cx - width / 2.0, cy - height / 2.0, cx + width / 2.0, cy + height / 2.0)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center_x(self) -> float:
        return (self.x_min + self.x_max) / 2.0

    @property
    def center_y(self) -> float:
        return (self.y_min + self.y_max) / 2.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


BoxLike = Union[BoundingBox, Sequence[float]]


def as_box(value: BoxLike) -> BoundingBox:
    """Coerce a 4-sequence or BoundingBox into a BoundingBox."""
    if isinstance(value, BoundingBox):
        return value
    coords = tuple(float(v) for v in value)
    if len(coords) != 4:
        raise ValueError(f"expected 4 coordinates, got {len(coords)}")
    return BoundingBox(*coords)


def intersection_area(a: BoxLike, b: BoxLike) -> float:
    """Area of overlap between two boxes (zero if they do not touch)."""
    a, b = as_box(a), as_box(b)
    dx = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    dy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if dx <= 0.0 or dy <= 0.0:
        return 0.0
    return dx * dy


def iou(a: BoxLike, b: BoxLike) -> float:
    """Intersection over union of two boxes.

    The union is computed as ``area(a) + area(b) - intersection`` so it is
    never negative.  Two boxes whose union is empty (both degenerate) have
    IoU 0 by convention rather than 0/0.
    """
    a, b = as_box(a), as_box(b)
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


# ---------------------------------------------------------------------------
# Anchor grids
# ---------------------------------------------------------------------------

DEFAULT_ANCHOR_SCALES: tuple[float, ...] = (128.0, 256.0, 512.0)
DEFAULT_ANCHOR_RATIOS: tuple[float, ...] = (0.5, 1.0, 2.0)
DEFAULT_FEATURE_STRIDE = 16


@dataclass(frozen=True)
class Anchor:
    """One anchor box plus the grid/scale/ratio indices that produced it."""

    box: BoundingBox
    row: int
    col: int
    scale_index: int
    ratio_index: int


def anchor_box(
    row: int, col: int, scale: float, ratio: float, stride: int = DEFAULT_FEATURE_STRIDE
) -> BoundingBox:
    """Anchor at feature cell (row, col): width ``scale * sqrt(ratio)``,
    height ``scale / sqrt(ratio)``, centered on the cell center in pixels."""
    if scale <= 0 or ratio <= 0:
        raise ValueError(f"scale and ratio must be positive, got {scale}, {ratio}")
    root = math.sqrt(ratio)
    cx = (col + 0.5) * stride
    cy = (row + 0.5) * stride
    return BoundingBox.from_center(cx, cy, scale * root, scale / root)


def generate_anchors(
    grid_width: int,
    grid_height: int,
    stride: int = DEFAULT_FEATURE_STRIDE,
    scales: Sequence[float] = DEFAULT_ANCHOR_SCALES,
    ratios: Sequence[float] = DEFAULT_ANCHOR_RATIOS,
) -> list[Anchor]:
    """Enumerate the full anchor grid in row-major, scale-major, ratio-minor order.

    Produces ``grid_width * grid_height * len(scales) * len(ratios)`` anchors.
    Anchors may extend beyond the image; no clipping is applied here.
    """
    if grid_width < 1 or grid_height < 1:
        raise ValueError(f"grid must be at least 1x1, got {grid_width}x{grid_height}")
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    if not scales or not ratios:
        raise ValueError("scales and ratios must be non-empty")
    anchors: list[Anchor] = []
    for row in range(grid_height):
        for col in range(grid_width):
            for si, scale in enumerate(scales):
                for ri, ratio in enumerate(ratios):
                    anchors.append(
                        Anchor(
                            box=anchor_box(row, col, scale, ratio, stride),
                            row=row,
                            col=col,
                            scale_index=si,
                            ratio_index=ri,
                        )
                    )
    return anchors


# ---------------------------------------------------------------------------
# Detections and suppression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Detection:
    """A scored, classified box."""

    box: BoundingBox
    class_id: int
    score: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")


def _ranking_key(dets: Sequence[Detection]):
    # Deterministic total order: score descending, then class id, then
    # original position.  Ties in score therefore favour earlier input.
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].class_id, i))


def nms_indices(detections: Sequence[Detection], iou_threshold: float) -> list[int]:
    """Greedy per-class non-maximum suppression; returns kept input indices.

    Indices come back in keep order (best first).  A detection is suppressed
    only by a *kept* detection of the same class whose IoU with it strictly
    exceeds ``iou_threshold``; suppression never chains through an already
    suppressed box.
    """
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    order = _ranking_key(detections)
    suppressed = [False] * len(detections)
    kept: list[int] = []
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        kept.append(i)
        for j in order[pos + 1 :]:
            if suppressed[j] or detections[j].class_id != detections[i].class_id:
                continue
            if iou(detections[i].box, detections[j].box) > iou_threshold:
                suppressed[j] = True
    return kept


def nms(detections: Sequence[Detection], iou_threshold: float = 0.6) -> list[Detection]:
    """Greedy per-class NMS returning surviving detections, best first."""
    return [detections[i] for i in nms_indices(detections, iou_threshold)]


# ---------------------------------------------------------------------------
# Box-delta codec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxDelta:
    """Log-space regression offsets from an anchor to a target box."""

    d_center_x: float
    d_center_y: float
    d_width: float
    d_height: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.d_center_x, self.d_center_y, self.d_width, self.d_height)


def encode_deltas(anchor: BoxLike, target: BoxLike) -> BoxDelta:
    """Encode ``target`` relative to ``anchor``.

    Center offsets are normalised by the anchor's sides; size offsets are
    log-ratios.  Both boxes must have strictly positive width and height,
    otherwise the encoding is undefined and a ValueError is raised.
    """
    anchor, target = as_box(anchor), as_box(target)
    if anchor.width <= 0 or anchor.height <= 0:
        raise ValueError(f"anchor must have positive size, got {anchor}")
    if target.width <= 0 or target.height <= 0:
        raise ValueError(f"target must have positive size, got {target}")
    return BoxDelta(
        d_center_x=(target.center_x - anchor.center_x) / anchor.width,
        d_center_y=(target.center_y - anchor.center_y) / anchor.height,
        d_width=math.log(target.width / anchor.width),
        d_height=math.log(target.height / anchor.height),
    )


def decode_deltas(anchor: BoxLike, delta: BoxDelta) -> BoundingBox:
    """Apply regression offsets to an anchor, inverting :func:`encode_deltas`."""
    anchor = as_box(anchor)
    if anchor.width <= 0 or anchor.height <= 0:
        raise ValueError(f"anchor must have positive size, got {anchor}")
    cx = anchor.center_x + delta.d_center_x * anchor.width
    cy = anchor.center_y + delta.d_center_y * anchor.height
    width = anchor.width * math.exp(delta.d_width)
    height = anchor.height * math.exp(delta.d_height)
    return BoundingBox.from_center(cx, cy, width, height)


# ---------------------------------------------------------------------------
# Training label assignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroundTruth:
    """An annotated object: a box and its class."""

    box: BoundingBox
    class_id: int


class LabelKind(Enum):
    FOREGROUND = "foreground"
    BACKGROUND = "background"
    IGNORE = "ignore"


@dataclass(frozen=True)
class AssignmentLabel:
    """Training label for one anchor or proposal.

    ``gt_index`` and ``class_id`` are populated only for foreground labels
    (``class_id`` only where a classifier target is meaningful, i.e. for
    proposals rather than objectness anchors).
    """

    kind: LabelKind
    gt_index: int | None = None
    class_id: int | None = None

    @classmethod
    def foreground(cls, gt_index: int, class_id: int | None = None) -> "AssignmentLabel":
        return cls(LabelKind.FOREGROUND, gt_index=gt_index, class_id=class_id)

    @classmethod
    def background(cls) -> "AssignmentLabel":
        return cls(LabelKind.BACKGROUND)

    @classmethod
    def ignore(cls) -> "AssignmentLabel":
        return cls(LabelKind.IGNORE)

    @property
    def is_foreground(self) -> bool:
        return self.kind is LabelKind.FOREGROUND

    @property
    def is_background(self) -> bool:
        return self.kind is LabelKind.BACKGROUND

    @property
    def is_ignore(self) -> bool:
        return self.kind is LabelKind.IGNORE


def _boxes_of(items: Iterable[object]) -> list[BoundingBox]:
    out = []
    for item in items:
        if isinstance(item, Anchor):
            out.append(item.box)
        else:
            out.append(as_box(item))  # type: ignore[arg-type]
    return out


def assign_rpn_labels(
    anchors: Sequence[Anchor] | Sequence[BoxLike],
    ground_truths: Sequence[GroundTruth],
    fg_iou: float = 0.7,
    bg_iou: float = 0.3,
) -> list[AssignmentLabel]:
    """Objectness labels for anchors.

    An anchor is foreground when its best IoU against any ground truth is at
    least ``fg_iou``, background when strictly below ``bg_iou``, and ignored
    in between.  Afterwards, any ground truth left without a foreground
    anchor promotes its highest-IoU anchor (lowest index on ties) among the
    anchors not already claimed as foreground, so every object keeps at
    least one positive whenever enough anchors exist.  With no ground truths
    every anchor is background.
    """
    if not (0.0 <= bg_iou < fg_iou <= 1.0):
        raise ValueError(f"need 0 <= bg_iou < fg_iou <= 1, got bg={bg_iou} fg={fg_iou}")
    boxes = _boxes_of(anchors)
    if not ground_truths:
        return [AssignmentLabel.background() for _ in boxes]

    n = len(boxes)
    best_iou = [0.0] * n
    best_gt = [0] * n
    overlaps = [[iou(box, gt.box) for gt in ground_truths] for box in boxes]
    for i in range(n):
        for j, val in enumerate(overlaps[i]):
            if val > best_iou[i]:
                best_iou[i] = val
                best_gt[i] = j

    labels: list[AssignmentLabel] = []
    for i in range(n):
        if best_iou[i] >= fg_iou:
            labels.append(AssignmentLabel.foreground(best_gt[i]))
        elif best_iou[i] < bg_iou:
            labels.append(AssignmentLabel.background())
        else:
            labels.append(AssignmentLabel.ignore())

    covered = {lab.gt_index for lab in labels if lab.is_foreground}
    for j in range(len(ground_truths)):
        if j in covered:
            continue
        candidate = -1
        candidate_iou = -1.0
        for i in range(n):
            if labels[i].is_foreground:
                continue
            if overlaps[i][j] > candidate_iou:
                candidate_iou = overlaps[i][j]
                candidate = i
        if candidate >= 0:
            labels[candidate] = AssignmentLabel.foreground(j)
            covered.add(j)
    return labels


def sample_minibatch(
    labels: Sequence[AssignmentLabel],
    batch_size: int = 256,
    fg_fraction: float = 0.5,
    rng_seed: int = 0,
) -> list[int]:
    """Sample anchor indices for one training minibatch.

    At most ``int(batch_size * fg_fraction)`` foreground indices are drawn
    (without replacement), then background indices fill the remainder.  The
    foreground cap binds even when backgrounds are scarce.  Ignored labels
    are never sampled.  Deterministic for a given seed.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    if not (0.0 < fg_fraction < 1.0):
        raise ValueError(f"fg_fraction must be in (0, 1), got {fg_fraction}")
    fg = [i for i, lab in enumerate(labels) if lab.is_foreground]
    bg = [i for i, lab in enumerate(labels) if lab.is_background]
    fg_cap = int(batch_size * fg_fraction)
    n_fg = min(len(fg), fg_cap)
    n_bg = min(len(bg), batch_size - n_fg)
    rng = random.Random(rng_seed)
    picked = rng.sample(fg, n_fg) + rng.sample(bg, n_bg)
    return picked


def assign_proposal_labels(
    proposals: Sequence[BoxLike],
    ground_truths: Sequence[GroundTruth],
    fg_iou: float = 0.5,
    bg_low: float = 0.1,
) -> list[AssignmentLabel]:
    """Classifier labels for region proposals.

    Best-IoU ``>= fg_iou`` makes a proposal foreground for that ground
    truth's class (lowest ground-truth index wins IoU ties); best IoU in
    ``[bg_low, fg_iou)`` is background; anything below ``bg_low`` is ignored
    as uninformative.  No promotion pass here — proposals are plentiful.
    """
    if not (0.0 <= bg_low < fg_iou <= 1.0):
        raise ValueError(f"need 0 <= bg_low < fg_iou <= 1, got low={bg_low} fg={fg_iou}")
    labels: list[AssignmentLabel] = []
    for prop in proposals:
        box = as_box(prop)
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(ground_truths):
            val = iou(box, gt.box)
            if val > best_iou:
                best_iou = val
                best_j = j
        if best_j >= 0 and best_iou >= fg_iou:
            gt = ground_truths[best_j]
            labels.append(AssignmentLabel.foreground(best_j, class_id=gt.class_id))
        elif best_iou >= bg_low:
            labels.append(AssignmentLabel.background())
        else:
            labels.append(AssignmentLabel.ignore())
    return labels
