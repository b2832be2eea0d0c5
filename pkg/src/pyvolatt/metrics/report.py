"""Combined segmentation and detection report."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from pyvolatt.errors import ContractError
from pyvolatt.metrics.detection import (
    FPPI_POINTS,
    DetectionRecord,
    ap50,
    froc_sensitivity,
    records_from_volumes,
)
from pyvolatt.metrics.segmentation import (
    dice,
    lesion_dice_scores,
    mask_and_postprocess,
    stratify,
)
from pyvolatt.utilities import ordered_map, write_json
from pyvolatt.volume.volume import lesion_mask, liver_mask

logger = logging.getLogger(__name__)


def froc_key(f: float) -> str:
    """Column / JSON key of an FPs-per-image operating point, e.g. '0.5'."""
    return f"{float(f):g}"


@dataclass
class MetricsReport:
    """Evaluation summary of a set of cases.

    Attributes
    ----------
    dice_per_case : float
        Mean per-volume lesion Dice.

    dice_s, dice_m, dice_l : float or None
        Size-stratified per-lesion Dice; None for a stratum without lesions.

    froc : dict
        {FPs per image: sensitivity}.

    ap50 : float or None
        AP at IoU 0.5; None when no ground truth box exists.

    per_case : list of float, optional
        The lesion Dice of each case, in case order.
    """

    dice_per_case: float
    dice_s: Optional[float] = None
    dice_m: Optional[float] = None
    dice_l: Optional[float] = None
    froc: Dict[float, Optional[float]] = field(default_factory=dict)
    ap50: Optional[float] = None
    per_case: Optional[List[float]] = None

    def to_dict(self) -> dict:
        d = {
            "dice_per_case": self.dice_per_case,
            "dice_s": self.dice_s,
            "dice_m": self.dice_m,
            "dice_l": self.dice_l,
            "froc": {froc_key(f): s for f, s in sorted(self.froc.items())},
            "ap50": self.ap50,
        }
        if self.per_case is not None:
            d["per_case"] = list(self.per_case)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            dice_per_case=d["dice_per_case"],
            dice_s=d.get("dice_s"),
            dice_m=d.get("dice_m"),
            dice_l=d.get("dice_l"),
            froc={float(k): v for k, v in d.get("froc", {}).items()},
            ap50=d.get("ap50"),
            per_case=d.get("per_case"),
        )

    def to_row(self) -> dict:
        """Flat view for tables: FROC points become 'froc@<f>' columns."""
        row = {
            "dice_per_case": self.dice_per_case,
            "dice_s": self.dice_s,
            "dice_m": self.dice_m,
            "dice_l": self.dice_l,
        }
        for f, s in sorted(self.froc.items()):
            row[f"froc@{froc_key(f)}"] = s
        row["ap50"] = self.ap50
        return row

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.to_row()])

    def write(self, path: str) -> None:
        write_json(path, self.to_dict())


def report_from_scores(
    case_dice: Sequence[float],
    lesion_scores: Sequence,
    records: Sequence[DetectionRecord],
    fppi: Sequence[float] = FPPI_POINTS,
) -> MetricsReport:
    """Assembles a report from per-case Dice values, pooled (diameter, dice)
    lesion scores and detection records."""
    case_dice = list(case_dice)
    if not case_dice:
        raise ContractError("no cases to report")
    strata = stratify(lesion_scores)
    n_gt = sum(len(r.gt_boxes) for r in records)
    if records and n_gt:
        froc = froc_sensitivity(records, fppi)
        ap = ap50(records)
    else:
        logger.warning("No ground truth boxes; FROC and AP50 are reported as absent.")
        froc = {float(f): None for f in fppi}
        ap = None
    return MetricsReport(
        dice_per_case=float(np.mean(case_dice)),
        dice_s=strata["dice_s"],
        dice_m=strata["dice_m"],
        dice_l=strata["dice_l"],
        froc=froc,
        ap50=ap,
    )


def evaluate_cases(
    pred_labels: Sequence[np.ndarray],
    gt_labels: Sequence[np.ndarray],
    spacings: Sequence,
    case_ids: Sequence[str] = None,
    probs: Sequence[np.ndarray] = None,
    detections: List[DetectionRecord] = None,
    gate_liver: bool = False,
    fppi: Sequence[float] = FPPI_POINTS,
) -> MetricsReport:
    """Evaluates paired prediction and ground truth label volumes.

    Parameters
    ----------
    pred_labels, gt_labels : list of np.ndarray
        Label volumes (0 background, 1 liver, 2 lesion). Boolean predictions
        are read as lesion masks; any other dtype is decoded as labels.

    spacings : list of tuple
        Voxel spacing of each case in mm.

    case_ids : list of str, optional
        Case names used in detection image ids.

    probs : list of np.ndarray, optional
        Lesion probability volumes for scoring detections.

    detections : list of DetectionRecord, optional
        Scored detection records; when given they replace the records
        derived from the prediction masks.

    gate_liver : bool, optional
        Remove predicted lesion voxels outside the predicted liver.

    Returns
    -------
    MetricsReport
    """
    pred_labels, gt_labels = list(pred_labels), list(gt_labels)
    if len(pred_labels) != len(gt_labels) or len(spacings) != len(gt_labels):
        raise ContractError(
            f"{len(pred_labels)} predictions, {len(gt_labels)} ground truths and "
            f"{len(spacings)} spacings are not paired"
        )
    if not gt_labels:
        raise ContractError("no cases to evaluate")
    if case_ids is None:
        case_ids = [f"case{i}" for i in range(len(gt_labels))]

    def _lesions(i):
        pred = np.asarray(pred_labels[i])
        lesion = pred.copy() if pred.dtype == bool else lesion_mask(pred)
        if gate_liver:
            lesion = mask_and_postprocess(liver_mask(pred), lesion)
        return lesion, lesion_mask(gt_labels[i])

    pairs = ordered_map(_lesions, range(len(gt_labels)))
    case_dice = [dice(p, g) for p, g in pairs]
    lesion_scores = []
    for (p, g), spacing in zip(pairs, spacings):
        lesion_scores.extend(lesion_dice_scores(p, g, spacing))

    if detections is None:
        detections = []
        for i, (p, g) in enumerate(pairs):
            prob = None if probs is None else probs[i]
            detections.extend(records_from_volumes(p, g, prob, case_ids[i]))

    report = report_from_scores(case_dice, lesion_scores, detections, fppi)
    report.per_case = case_dice
    logger.info(f"Evaluated {len(gt_labels)} cases: dice per case {report.dice_per_case:.4f}.")
    return report
