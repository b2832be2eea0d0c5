"""Detection metric tests.

Hand-computed FROC fixture (4 images, 4 ground truth boxes, 6 predictions):

=====  =====  ======  ======================
image  score  result  notes
=====  =====  ======  ======================
0      0.9    TP      exact box on gt A
0      0.6    FP      away from everything
1      0.8    TP      exact box on gt B
1      0.4    FP      gt C stays missed
2      0.3    TP      exact box on gt D
3      0.7    FP      image without gt
=====  =====  ======  ======================

Descending score: TP TP FP FP FP TP, so the staircase is (FPPI, sens)
(0, .25) (0, .5) (.25, .5) (.5, .5) (.75, .5) (.75, .75), giving
FROC@0.5 = 0.5, FROC@1 = FROC@2 = 0.75 and all-point AP
.25·1 + .25·1 + .25·.5 = 0.625.
"""

import numpy as np
import pytest

from pyvolatt.errors import ContractError, DimensionError, ParseError
from pyvolatt.metrics import (
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

A = [0, 0, 9, 9]
FAR = [20, 20, 29, 29]


def hand_records():
    return [
        DetectionRecord("img0", [A, FAR], [0.9, 0.6], [A]),
        DetectionRecord("img1", [A, [50, 50, 59, 59]], [0.8, 0.4], [A, FAR]),
        DetectionRecord("img2", [A], [0.3], [A]),
        DetectionRecord("img3", [[0, 0, 4, 4]], [0.7], []),
    ]


def _oracle_iou(a, b):
    h = min(a[2], b[2]) - max(a[0], b[0]) + 1
    w = min(a[3], b[3]) - max(a[1], b[1]) + 1
    inter = max(h, 0) * max(w, 0)
    area = lambda r: (r[2] - r[0] + 1) * (r[3] - r[1] + 1)
    return inter / (area(a) + area(b) - inter)


def _oracle_counts(records, t):
    """TP and FP counts of the predictions scoring at least t."""
    tp = fp = 0
    for r in records:
        keep = [i for i in range(len(r.scores)) if r.scores[i] >= t]
        keep.sort(key=lambda i: (-r.scores[i], i))
        taken = set()
        for i in keep:
            best, best_iou = None, 0.0
            for j, gt in enumerate(r.gt_boxes):
                o = _oracle_iou(r.boxes[i], gt)
                if j not in taken and o >= 0.5 and o > best_iou:
                    best, best_iou = j, o
            if best is None:
                fp += 1
            else:
                taken.add(best)
                tp += 1
    return tp, fp


def _oracle_froc(records, fppi):
    n_gt = sum(len(r.gt_boxes) for r in records)
    thresholds = {np.inf} | {float(s) for r in records for s in r.scores}
    result = {}
    for f in fppi:
        best = 0.0
        for t in thresholds:
            tp, fp = _oracle_counts(records, t)
            if fp / len(records) <= f:
                best = max(best, tp / n_gt)
        result[f] = best
    return result


def _random_records(rng):
    while True:
        records = []
        for k in range(int(rng.integers(1, 5))):
            def box():
                y, x = rng.integers(0, 8, size=2)
                h, w = rng.integers(0, 4, size=2)
                return [y, x, y + h, x + w]

            n_pred, n_gt = int(rng.integers(0, 5)), int(rng.integers(0, 4))
            scores = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=n_pred)
            records.append(
                DetectionRecord(
                    f"img{k}", [box() for _ in range(n_pred)], scores, [box() for _ in range(n_gt)]
                )
            )
        if sum(len(r.gt_boxes) for r in records):
            return records


def test_iou_inclusive_boxes():
    assert iou(A, A) == 1.0
    assert iou([0, 0, 1, 1], [1, 1, 2, 2]) == 1 / 7
    assert iou([0, 0, 1, 1], [3, 3, 4, 4]) == 0.0


def test_froc_matches_threshold_sweep():
    rng = np.random.default_rng(12)
    for _ in range(200):
        records = _random_records(rng)
        ours = froc_sensitivity(records, (0.5, 1.0, 2.0))
        oracle = _oracle_froc(records, (0.5, 1.0, 2.0))
        for f in oracle:
            assert abs(ours[f] - oracle[f]) <= 1e-12, f"FROC@{f}: {ours[f]} vs {oracle[f]}"


def test_hand_fixture_froc_and_ap():
    records = hand_records()
    assert froc_sensitivity(records) == {0.5: 0.5, 1.0: 0.75, 2.0: 0.75}
    assert abs(ap50(records) - 0.625) <= 1e-12
    curve = froc_curve(records)
    assert curve["fppi"].tolist() == [0.0, 0.0, 0.0, 0.25, 0.5, 0.75, 0.75]
    assert curve["sensitivity"].tolist() == [0.0, 0.25, 0.5, 0.5, 0.5, 0.5, 0.75]
    assert curve["threshold"].iloc[0] == np.inf


def test_ap_five_box_fixture():
    """Scores .9 TP, .8 FP, .7 TP, .6 FP, .5 TP on 3 gt boxes:
    AP = (1 + 2/3 + 3/5) / 3 = 34/45."""
    gts = [[0, 0, 4, 4], [10, 10, 14, 14], [20, 20, 24, 24]]
    boxes = [gts[0], [40, 40, 44, 44], gts[1], [50, 50, 54, 54], gts[2]]
    record = DetectionRecord("img", boxes, [0.9, 0.8, 0.7, 0.6, 0.5], gts)
    assert abs(ap50([record]) - 34 / 45) <= 1e-12


def test_perfect_detector():
    records = [DetectionRecord(f"i{k}", [A], [1.0], [A]) for k in range(3)]
    assert froc_sensitivity(records) == {0.5: 1.0, 1.0: 1.0, 2.0: 1.0}
    assert ap50(records) == 1.0


def test_ap_invariant_to_monotone_rescoring():
    rng = np.random.default_rng(3)
    for _ in range(20):
        records = _random_records(rng)
        halved = [
            DetectionRecord(r.image_id, r.boxes, r.scores * 0.5, r.gt_boxes) for r in records
        ]
        assert abs(ap50(records) - ap50(halved)) <= 1e-12


def test_no_true_positives():
    records = [DetectionRecord("i", [FAR], [0.9], [A])]
    assert ap50(records) == 0.0
    assert froc_sensitivity(records) == {0.5: 0.0, 1.0: 0.0, 2.0: 0.0}
    assert ap50([DetectionRecord("i", gt_boxes=[A])]) == 0.0, "no predictions"


def test_froc_curve_is_monotone():
    rng = np.random.default_rng(4)
    for _ in range(50):
        curve = froc_curve(_random_records(rng))
        assert np.all(np.diff(curve["fppi"]) >= 0)
        assert np.all(np.diff(curve["sensitivity"]) >= 0)
        assert np.all(np.diff(curve["threshold"]) < 0)


def test_greedy_matching_by_score():
    # the low-score exact box arrives second and finds the gt taken
    record = DetectionRecord("i", [A, [0, 0, 9, 8]], [0.2, 0.9], [A])
    order, is_tp = match_detections(record)
    assert order.tolist() == [1, 0]
    assert is_tp.tolist() == [True, False]
    duplicate = DetectionRecord("i", [A, A], [0.5, 0.5], [A])
    assert match_detections(duplicate)[1].tolist() == [True, False]


def test_mask_to_boxes():
    mask = np.zeros((6, 6), dtype=bool)
    mask[0, 0] = mask[1, 1] = True
    mask[4:6, 3:6] = True
    prob = np.zeros((6, 6))
    prob[1, 1], prob[5, 5] = 0.7, 0.4
    boxes, scores = mask_to_boxes(mask, prob)
    assert boxes.tolist() == [[0, 0, 1, 1], [4, 3, 5, 5]], "diagonal pixels are one component"
    assert scores.tolist() == [0.7, 0.4]
    assert mask_to_boxes(mask)[1].tolist() == [1.0, 1.0]
    with pytest.raises(DimensionError):
        mask_to_boxes(np.zeros((2, 2, 2)))


def test_records_from_volumes():
    gt = np.zeros((3, 8, 8), dtype=bool)
    gt[1, 2:4, 2:4] = True
    records = records_from_volumes(gt, gt, case_id="liver7")
    assert [r.image_id for r in records] == ["liver7:0", "liver7:1", "liver7:2"]
    assert records[1].gt_boxes.tolist() == [[2, 2, 3, 3]]
    assert ap50(records) == 1.0


def test_records_roundtrip(tmp_path):
    path = str(tmp_path / "det.jsonl")
    write_records(path, hand_records())
    loaded = read_records(path)
    assert [r.to_dict() for r in loaded] == [r.to_dict() for r in hand_records()]


def test_malformed_record_offset(tmp_path):
    first = b'{"image_id": "a", "boxes": [], "scores": [], "gt_boxes": []}\n'
    path = tmp_path / "bad.jsonl"
    path.write_bytes(first + b'{"image_id": "b", "boxes": [}\n')
    with pytest.raises(ParseError) as info:
        read_records(str(path))
    assert info.value.offset > len(first)


def test_record_contracts():
    with pytest.raises(ContractError):
        froc_curve([])
    with pytest.raises(ContractError):
        froc_sensitivity([DetectionRecord("i", [A], [0.5], [])])
    with pytest.raises(ContractError):
        DetectionRecord("i", [A], [1.5], [])
    with pytest.raises(ContractError):
        DetectionRecord("i", [[5, 0, 1, 9]], [0.5], [])
    with pytest.raises(DimensionError):
        DetectionRecord("i", [A, A], [0.5], [])


if __name__ == "__main__":
    test_hand_fixture_froc_and_ap()
