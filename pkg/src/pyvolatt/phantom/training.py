"""Training and evaluation of the toy model on phantoms."""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from pyvolatt.errors import ConfigurationError, ContractError, NumericError
from pyvolatt.metrics.detection import DetectionRecord, froc_curve, mask_to_boxes
from pyvolatt.metrics.report import MetricsReport, evaluate_cases
from pyvolatt.phantom.model import ToyModel
from pyvolatt.tensor import Tape, Tensor, ops, zero_grad
from pyvolatt.volume.volume import Volume, lesion_mask

logger = logging.getLogger(__name__)

TREND_WINDOW = 10


@dataclass
class TrainConfig:
    """Optimisation settings.

    Attributes
    ----------
    epochs : int
        Passes over every (phantom, slice) target. The default is 4.

    lr : float
        Fixed gradient descent step. The default is 0.1.

    pos_weight : float
        Weight of lesion voxels in the cross entropy. The default is 4.0.

    seed : int
        Seed of the target order.

    progress : bool
        Show a tqdm progress bar. The default is False.
    """

    epochs: int = 4
    lr: float = 0.1
    pos_weight: float = 4.0
    seed: int = 0
    progress: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr < 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {self.lr}")
        if self.pos_weight <= 0:
            raise ConfigurationError(f"positive weight must be > 0, got {self.pos_weight}")


@dataclass
class TrainResult:
    """A trained model with its per-step loss curve."""

    model: ToyModel
    loss_curve: List[float] = field(default_factory=list)
    trend_ok: bool = True


def loss_trend_ok(curve: Sequence[float], window: int = TREND_WINDOW) -> bool:
    """True unless the mean of the last window of losses is no lower than
    the mean of the first window. Curves shorter than two windows pass."""
    curve = np.asarray(curve, dtype=np.float64)
    if len(curve) < 2 * window:
        return True
    return bool(curve[-window:].mean() < curve[:window].mean())


def train_step(
    model: ToyModel,
    volume: Volume,
    gt: np.ndarray,
    z: int,
    cfg: TrainConfig,
    context: Sequence[Tensor] = None,
) -> float:
    """One gradient descent step on the centre slice z. Returns the loss."""
    params = model.parameters()
    zero_grad(params)
    with Tape() as tape:
        logits = model.forward(volume, z, context)
        target = lesion_mask(gt[z])[None].astype(np.float64)
        loss = ops.bce_with_logits(logits, target, pos_weight=cfg.pos_weight)
    tape.backward(loss)
    for p in params:
        p.data -= cfg.lr * p.grad
    return loss.item()


def train_toy(model: ToyModel, data: Sequence[Tuple[Volume, np.ndarray]], cfg: TrainConfig = None) -> TrainResult:
    """Trains the toy model by plain gradient descent.

    Every epoch visits each (phantom, slice) target once, in an order drawn
    from the configured seed; each visit is one step of per-voxel binary
    cross entropy on the centre slice. With attention, the backbone
    features of every slab are refreshed at the start of each epoch and
    serve as the constant feature bag of that epoch's steps.

    Parameters
    ----------
    model : ToyModel
        The model, updated in place.

    data : list of (Volume, np.ndarray)
        Training phantoms and their label volumes.

    cfg : TrainConfig, optional
        Optimisation settings.

    Returns
    -------
    TrainResult

    Raises
    ------
    NumericError
        If the loss or a gradient becomes non-finite; the error names the
        epoch.
    """
    cfg = cfg if cfg is not None else TrainConfig()
    data = list(data)
    if not data:
        raise ContractError("no training phantoms")
    rng = np.random.default_rng(cfg.seed)
    targets = [(i, z) for i, (v, _) in enumerate(data) for z in range(v.Z)]

    curve = []
    with tqdm(total=cfg.epochs * len(targets), disable=not cfg.progress, desc="train") as bar:
        for epoch in range(cfg.epochs):
            contexts = [None] * len(data)
            if model.va is not None:
                contexts = [model.slab_features(v) for v, _ in data]
            for t in rng.permutation(len(targets)):
                i, z = targets[t]
                volume, gt = data[i]
                try:
                    loss = train_step(model, volume, gt, z, cfg, contexts[i])
                except NumericError as e:
                    raise NumericError("training diverged", op=e.op, epoch=epoch) from e
                if not np.isfinite(loss):
                    raise NumericError("loss is not finite", op="bce_with_logits", epoch=epoch)
                for p in model.parameters():
                    if not np.all(np.isfinite(p.data)):
                        raise NumericError(f"parameter {p.name} diverged", epoch=epoch)
                curve.append(loss)
                bar.update(1)
                bar.set_postfix(loss=f"{loss:.4f}")

    trend_ok = loss_trend_ok(curve)
    if not trend_ok:
        logger.warning(
            f"Loss did not decrease over the run (window {TREND_WINDOW}): "
            f"{np.mean(curve[:TREND_WINDOW]):.4f} -> {np.mean(curve[-TREND_WINDOW:]):.4f}."
        )
    return TrainResult(model=model, loss_curve=curve, trend_ok=trend_ok)


@dataclass
class EvalResult:
    """Evaluation of a model on held-out phantoms."""

    report: MetricsReport
    case_dice: List[float]
    records: List[DetectionRecord]

    def froc_curve(self):
        return froc_curve(self.records)


def score_slices(prob: np.ndarray, gt: np.ndarray, case_id: str, threshold: float = 0.5) -> list:
    """Detection records of one case, one per axial slice, from the scoring
    head of the toy model."""
    records = []
    for z in range(gt.shape[0]):
        boxes, scores = ToyModel.score_components(prob[z], threshold)
        gt_boxes, _ = mask_to_boxes(lesion_mask(gt[z]))
        records.append(DetectionRecord(f"{case_id}:{z}", boxes, scores, gt_boxes))
    return records


def eval_predictions(
    probs: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    spacings: Sequence,
    threshold: float = 0.5,
    case_ids: Sequence[str] = None,
) -> EvalResult:
    """Evaluates probability volumes against label volumes: Dice per case,
    size strata, FROC over slices and AP50."""
    probs, gts = list(probs), list(gts)
    if case_ids is None:
        case_ids = [f"phantom{i}" for i in range(len(gts))]
    preds = [np.asarray(p) > threshold for p in probs]
    records = []
    for prob, gt, cid in zip(probs, gts, case_ids):
        records.extend(score_slices(prob, gt, cid, threshold))
    report = evaluate_cases(preds, gts, spacings, case_ids=case_ids, detections=records)
    return EvalResult(report=report, case_dice=list(report.per_case or []), records=records)


def eval_toy(
    model: ToyModel,
    phantoms: Sequence[Tuple[Volume, np.ndarray]],
    threshold: float = 0.5,
) -> EvalResult:
    """Evaluates the model on held-out phantoms."""
    phantoms = list(phantoms)
    if not phantoms:
        raise ContractError("no evaluation phantoms")
    probs = [model.predict_volume(v) for v, _ in phantoms]
    return eval_predictions(
        probs, [g for _, g in phantoms], [v.spacing for v, _ in phantoms], threshold
    )
