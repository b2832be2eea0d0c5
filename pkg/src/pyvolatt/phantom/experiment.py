"""Paired-seed phantom experiments and ablation decks."""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from pyvolatt.errors import ConfigurationError, NumericError
from pyvolatt.phantom.generator import PhantomConfig, gen_phantoms
from pyvolatt.phantom.model import ToyModel, ToyModelConfig
from pyvolatt.phantom.training import TrainConfig, eval_toy, train_toy
from pyvolatt.utilities import write_dataframe, write_json

logger = logging.getLogger(__name__)

AXES = ("bag_size", "attention_mode")
METRIC_COLUMNS = {
    "dice_per_case": "Dice",
    "dice_s": "Dice_s",
    "dice_m": "Dice_m",
    "dice_l": "Dice_l",
    "froc@0.5": "FROC@0.5",
    "froc@1": "FROC@1",
    "froc@2": "FROC@2",
    "ap50": "AP50",
}


@dataclass
class ExperimentConfig:
    """One experiment cell: a model configuration trained and evaluated
    over paired seeds.

    Attributes
    ----------
    phantom : PhantomConfig
        Phantom settings (the seed field is overridden per phantom).

    model : ToyModelConfig
        Model settings (the seed field is overridden per run).

    train : TrainConfig
        Optimisation settings (the seed field is overridden per run).

    seeds : int
        Number of paired seeds. The default is 5.

    base_seed : int
        The first seed. The default is 12.

    n_train, n_eval : int
        Training and held-out phantoms per seed.
    """

    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    model: ToyModelConfig = field(default_factory=ToyModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: int = 5
    base_seed: int = 12
    n_train: int = 4
    n_eval: int = 3
    threshold: float = 0.5

    def __post_init__(self):
        if self.seeds < 1:
            raise ConfigurationError(f"at least one seed is needed, got {self.seeds}")
        if self.n_train < 1 or self.n_eval < 1:
            raise ConfigurationError("at least one training and one evaluation phantom are needed")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(f"probability threshold must lie in (0, 1), got {self.threshold}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        return cls(
            phantom=PhantomConfig(**d.pop("phantom", {})),
            model=ToyModelConfig(**d.pop("model", {})),
            train=TrainConfig(**d.pop("train", {})),
            **d,
        )

    def run_seeds(self) -> List[int]:
        return [self.base_seed + k for k in range(self.seeds)]

    def phantom_seeds(self, seed: int) -> tuple:
        """Disjoint training and held-out phantom seeds of one run."""
        start = 10_000 * (seed + 1)
        train = [start + j for j in range(self.n_train)]
        held_out = [start + 5_000 + j for j in range(self.n_eval)]
        return train, held_out


@dataclass
class ExperimentResult:
    """Tables produced by :func:`run_experiment`.

    Attributes
    ----------
    per_seed : pd.DataFrame
        One row of metrics per seed.

    loss_curves : pd.DataFrame
        Columns seed, step, loss.

    froc_curves : pd.DataFrame
        Columns seed, threshold, fppi, sensitivity.

    median : dict
        The median of every metric over seeds (None when absent for all).
    """

    per_seed: pd.DataFrame
    loss_curves: pd.DataFrame
    froc_curves: pd.DataFrame
    median: dict

    def metrics(self) -> dict:
        return {
            "median": self.median,
            "per_seed": _records(self.per_seed),
        }

    def write(self, directory: str) -> None:
        """Writes metrics.json, per_seed.csv, loss_curves.csv and
        froc_curve.csv into directory."""
        write_json(f"{directory}/metrics.json", self.metrics())
        write_dataframe(f"{directory}/per_seed.csv", self.per_seed)
        write_dataframe(f"{directory}/loss_curves.csv", self.loss_curves)
        write_dataframe(f"{directory}/froc_curve.csv", self.froc_curves)


def _clean(value):
    if value is None:
        return None
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    value = float(value)
    return None if math.isnan(value) else value


def _records(df: pd.DataFrame) -> list:
    return [{k: _clean(v) for k, v in row.items()} for row in df.to_dict(orient="records")]


def run_seed(cfg: ExperimentConfig, seed: int) -> tuple:
    """Trains and evaluates one paired seed.

    Returns
    -------
    row : dict
        The metrics of the run.

    curve : list of float
        The training loss per step.

    froc : pd.DataFrame
        The FROC staircase of the held-out phantoms.
    """
    train_seeds, eval_seeds = cfg.phantom_seeds(seed)
    train_data = gen_phantoms(cfg.phantom, train_seeds)
    eval_data = gen_phantoms(cfg.phantom, eval_seeds)

    model = ToyModel(ToyModelConfig(**{**asdict(cfg.model), "seed": seed}))
    train_cfg = TrainConfig(**{**asdict(cfg.train), "seed": seed})
    try:
        trained = train_toy(model, train_data, train_cfg)
    except NumericError as e:
        raise NumericError(f"seed {seed}: {e}") from e

    result = eval_toy(trained.model, eval_data, cfg.threshold)
    row = {"seed": seed, **result.report.to_row()}
    row["final_loss"] = trained.loss_curve[-1] if trained.loss_curve else None
    row["trend_ok"] = trained.trend_ok
    if any(len(r.gt_boxes) for r in result.records):
        froc = result.froc_curve()
    else:
        froc = pd.DataFrame(columns=["threshold", "fppi", "sensitivity"])
    return row, trained.loss_curve, froc


def run_experiment(cfg: ExperimentConfig = None) -> ExperimentResult:
    """Trains and evaluates one configuration over paired seeds.

    Identical seeds yield identical phantoms and initialisations across
    configurations, so differences between cells are paired.
    """
    cfg = cfg if cfg is not None else ExperimentConfig()
    rows, curves, frocs = [], [], []
    for seed in tqdm(cfg.run_seeds(), desc=f"mode={cfg.model.mode} N={cfg.model.bag_size}",
                     disable=not cfg.train.progress):
        row, curve, froc = run_seed(cfg, seed)
        logger.info(f"Seed {seed}: dice per case {row['dice_per_case']:.4f}.")
        rows.append(row)
        curves.append(pd.DataFrame({"seed": seed, "step": np.arange(len(curve)), "loss": curve}))
        frocs.append(froc.assign(seed=seed)[["seed", "threshold", "fppi", "sensitivity"]])

    per_seed = pd.DataFrame(rows)
    metric_cols = [c for c in per_seed.columns if c not in ("seed", "trend_ok")]
    medians = per_seed[metric_cols].apply(pd.to_numeric).median(skipna=True)
    median = {k: _clean(v) for k, v in medians.items()}
    return ExperimentResult(
        per_seed=per_seed,
        loss_curves=pd.concat(curves, ignore_index=True),
        froc_curves=pd.concat(frocs, ignore_index=True),
        median=median,
    )


class AblationDeck:
    """A table of median metrics, one row per value of the ablated axis."""

    def __init__(self, axis: str):
        self.axis = axis
        columns = [axis] + list(METRIC_COLUMNS.values())
        self.df = pd.DataFrame(columns=columns)

    def insert(self, value, median: dict):
        row = [value] + [median.get(key) for key in METRIC_COLUMNS]
        self.df.loc[len(self.df.index)] = row

    def to_csv(self, path: str):
        write_dataframe(path, self.df)

    def rows(self) -> list:
        records = _records(self.df.drop(columns=[self.axis]))
        return [{self.axis: v, **r} for v, r in zip(self.df[self.axis].tolist(), records)]

    def to_json(self, path: str):
        write_json(path, {"axis": self.axis, "rows": self.rows()})


def ablate(axis: str, values: Sequence, base: ExperimentConfig = None) -> AblationDeck:
    """Retrains the base configuration once per value of an axis.

    Parameters
    ----------
    axis : str
        'bag_size' or 'attention_mode'.

    values : list
        The bag sizes or attention modes to compare.

    base : ExperimentConfig, optional
        The configuration every cell starts from; all cells share its
        seeds.

    Returns
    -------
    AblationDeck
        The table of median metrics per value.
    """
    if axis not in AXES:
        raise ConfigurationError(f"unknown ablation axis {axis!r}; expected one of {AXES}")
    values = list(values)
    if not values:
        raise ConfigurationError("an ablation needs at least one value")
    base = base if base is not None else ExperimentConfig()
    field_name = "bag_size" if axis == "bag_size" else "mode"

    deck = AblationDeck(axis)
    for value in values:
        model = ToyModelConfig(**{**asdict(base.model), field_name: value})
        cell = ExperimentConfig(**{**base.__dict__, "model": model})
        result = run_experiment(cell)
        deck.insert(value, result.median)
        logger.info(f"Ablation {axis}={value}: dice per case {result.median.get('dice_per_case')}.")
    return deck
