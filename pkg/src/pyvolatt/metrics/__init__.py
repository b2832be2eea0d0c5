"""Segmentation and detection metrics."""

from .segmentation import (
    LARGE_MM,
    SMALL_MM,
    Lesion,
    LesionSet,
    connected_components,
    dice,
    dice_per_case,
    lesion_dice_scores,
    lesion_diameter,
    mask_and_postprocess,
    stratified_dice,
    stratify,
    stratum,
)
from .detection import (
    FPPI_POINTS,
    IOU_THRESHOLD,
    DetectionRecord,
    ap50,
    froc_curve,
    froc_sensitivity,
    iou,
    mask_to_boxes,
    match_detections,
    read_records,
    records_from_volumes,
    write_records,
)
from .report import MetricsReport, evaluate_cases, froc_key, report_from_scores
