"""Lesion detection metrics: FROC sensitivity at FPs per image, and AP50.

Boxes are inclusive pixel boxes ``(y0, x0, y1, x1)``.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import pandas as pd
from scipy import ndimage

from pyvolatt.errors import ContractError, DimensionError, ParseError
from pyvolatt.utilities import atomic_write_text

logger = logging.getLogger(__name__)

IOU_THRESHOLD = 0.5
FPPI_POINTS = (0.5, 1.0, 2.0)


def iou(a, b) -> float:
    """Intersection over union of two inclusive pixel boxes."""
    y0, x0 = max(a[0], b[0]), max(a[1], b[1])
    y1, x1 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0.0, y1 - y0 + 1) * max(0.0, x1 - x0 + 1)
    area_a = (a[2] - a[0] + 1) * (a[3] - a[1] + 1)
    area_b = (b[2] - b[0] + 1) * (b[3] - b[1] + 1)
    return float(inter / (area_a + area_b - inter))


def _boxes(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 4))
    return arr.reshape(-1, 4)


@dataclass
class DetectionRecord:
    """Predicted and ground truth boxes of one image.

    Attributes
    ----------
    image_id : str
        Identifier of the image (for volumes: ``<case>:<z>``).

    boxes : np.ndarray
        n×4 predicted boxes.

    scores : np.ndarray
        n prediction scores in [0, 1].

    gt_boxes : np.ndarray
        m×4 ground truth boxes.
    """

    image_id: str
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gt_boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    def __post_init__(self):
        self.boxes = _boxes(self.boxes)
        self.gt_boxes = _boxes(self.gt_boxes)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(self.scores) != len(self.boxes):
            raise DimensionError(
                f"record {self.image_id}: one score per box required",
                self.boxes.shape,
                self.scores.shape,
            )
        for label, b in (("boxes", self.boxes), ("gt_boxes", self.gt_boxes)):
            if np.any(b[:, 0] > b[:, 2]) or np.any(b[:, 1] > b[:, 3]):
                raise ContractError(f"record {self.image_id}: {label} need min <= max")
        if np.any(self.scores < 0) or np.any(self.scores > 1):
            raise ContractError(f"record {self.image_id}: scores must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "boxes": self.boxes.tolist(),
            "scores": self.scores.tolist(),
            "gt_boxes": self.gt_boxes.tolist(),
        }


def match_detections(record: DetectionRecord, iou_threshold: float = IOU_THRESHOLD) -> tuple:
    """Greedily matches the predictions of one image to its ground truth.

    Predictions are visited by descending score (ties by input order); each
    takes the unmatched ground truth box of highest IoU if that IoU reaches
    the threshold.

    Returns
    -------
    order : np.ndarray
        The visiting order of the predictions.

    is_tp : np.ndarray
        Whether each visited prediction is a true positive.
    """
    order = np.argsort(-record.scores, kind="stable")
    matched = np.zeros(len(record.gt_boxes), dtype=bool)
    is_tp = np.zeros(len(order), dtype=bool)
    for rank, i in enumerate(order):
        best, best_iou = -1, iou_threshold
        for j, gt in enumerate(record.gt_boxes):
            if matched[j]:
                continue
            overlap = iou(record.boxes[i], gt)
            if overlap >= best_iou:
                if best < 0 or overlap > best_iou:
                    best, best_iou = j, overlap
        if best >= 0:
            matched[best] = True
            is_tp[rank] = True
    return order, is_tp


def _ranked(records: Sequence[DetectionRecord], iou_threshold: float) -> tuple:
    """Pools every prediction, sorted by descending score (ties by image then
    prediction order), with its true positive flag."""
    records = list(records)
    if not records:
        raise ContractError("no detection records to evaluate")
    scores, flags = [], []
    for record in records:
        order, is_tp = match_detections(record, iou_threshold)
        scores.append(record.scores[order])
        flags.append(is_tp)
    scores = np.concatenate(scores) if scores else np.zeros(0)
    flags = np.concatenate(flags) if flags else np.zeros(0, dtype=bool)
    rank = np.argsort(-scores, kind="stable")
    n_gt = int(sum(len(r.gt_boxes) for r in records))
    return scores[rank], flags[rank], n_gt, len(records)


def froc_curve(records: Sequence[DetectionRecord], iou_threshold: float = IOU_THRESHOLD):
    """The FROC staircase.

    Returns
    -------
    pd.DataFrame
        Columns 'threshold', 'fppi' and 'sensitivity', one row per distinct
        score threshold (plus the empty operating point at threshold inf),
        ordered by descending threshold.
    """
    scores, flags, n_gt, n_images = _ranked(records, iou_threshold)
    if n_gt == 0:
        raise ContractError("no ground truth boxes; sensitivity is undefined")
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    # a threshold admits every prediction with an equal score
    last_of_tie = np.r_[scores[1:] != scores[:-1], True] if len(scores) else np.zeros(0, bool)
    df = pd.DataFrame(
        {
            "threshold": np.r_[np.inf, scores[last_of_tie]],
            "fppi": np.r_[0.0, fp[last_of_tie] / n_images],
            "sensitivity": np.r_[0.0, tp[last_of_tie] / n_gt],
        }
    )
    return df


def froc_sensitivity(
    records: Sequence[DetectionRecord],
    fppi: Sequence[float] = FPPI_POINTS,
    iou_threshold: float = IOU_THRESHOLD,
) -> dict:
    """Sensitivity at each FPs-per-image operating point.

    For an operating point f the score threshold is lowered as far as the
    false positive rate FP/num_images stays at or below f; the sensitivity
    at that threshold is reported.

    Returns
    -------
    dict
        {f: sensitivity}
    """
    curve = froc_curve(records, iou_threshold)
    result = {}
    for f in fppi:
        admissible = curve[curve["fppi"] <= f]
        result[float(f)] = float(admissible["sensitivity"].max())
    return result


def ap50(records: Sequence[DetectionRecord], iou_threshold: float = IOU_THRESHOLD) -> float:
    """Average precision at IoU 0.5, all-point interpolation of the
    precision-recall curve."""
    scores, flags, n_gt, _ = _ranked(records, iou_threshold)
    if n_gt == 0:
        raise ContractError("no ground truth boxes; AP is undefined")
    if len(scores) == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    mrec = np.r_[0.0, recall, 1.0]
    mpre = np.r_[0.0, precision, 0.0]
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mask_to_boxes(mask, prob=None) -> tuple:
    """Boxes of the 8-connected components of a 2D mask.

    Parameters
    ----------
    mask : np.ndarray
        A binary H×W mask.

    prob : np.ndarray, optional
        A probability map; each component is scored by its maximum. Without
        it every box scores 1.0.

    Returns
    -------
    boxes : np.ndarray
        n×4 inclusive boxes in raster order of the components.

    scores : np.ndarray
        n scores.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise DimensionError("mask_to_boxes needs a 2D mask", mask.shape)
    labels, count = ndimage.label(mask, structure=np.ones((3, 3)))
    boxes, scores = [], []
    for i, window in enumerate(ndimage.find_objects(labels), start=1):
        boxes.append([window[0].start, window[1].start, window[0].stop - 1, window[1].stop - 1])
        if prob is None:
            scores.append(1.0)
        else:
            scores.append(float(np.max(np.asarray(prob)[window][labels[window] == i])))
    return _boxes(boxes), np.asarray(scores, dtype=np.float64)


def records_from_volumes(pred, gt, prob=None, case_id: str = "case") -> List[DetectionRecord]:
    """One detection record per axial slice of a predicted/ground truth
    lesion volume pair."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise DimensionError("prediction and ground truth differ in shape", pred.shape, gt.shape)
    records = []
    for z in range(pred.shape[0]):
        boxes, scores = mask_to_boxes(pred[z], None if prob is None else prob[z])
        gt_boxes, _ = mask_to_boxes(gt[z])
        records.append(
            DetectionRecord(image_id=f"{case_id}:{z}", boxes=boxes, scores=scores, gt_boxes=gt_boxes)
        )
    return records


def write_records(path: str, records: Sequence[DetectionRecord]) -> None:
    """Writes detection records as JSON lines, one image per line."""
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in records]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_records(path: str) -> List[DetectionRecord]:
    records, offset = [], 0
    with open(path, "rb") as f:
        for raw in f:
            line = raw.strip()
            if line:
                try:
                    obj = json.loads(line)
                    records.append(
                        DetectionRecord(
                            image_id=str(obj["image_id"]),
                            boxes=obj.get("boxes", []),
                            scores=obj.get("scores", []),
                            gt_boxes=obj.get("gt_boxes", []),
                        )
                    )
                except json.JSONDecodeError as e:
                    raise ParseError(f"malformed detection record: {e.msg}", offset + e.pos) from e
                except KeyError as e:
                    raise ParseError(f"detection record lacks {e}", offset) from e
            offset += len(raw)
    return records
