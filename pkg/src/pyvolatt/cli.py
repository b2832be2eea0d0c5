"""The ``pyvolatt`` command line interface.

Exit codes: 0 success, 1 a check failed, 2 invalid input or configuration,
3 a numeric failure (NaN or Inf).
"""

import argparse
import glob
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from pyvolatt import banner
from pyvolatt.attention.checks import run_gradcheck_suite
from pyvolatt.config import RunConfig
from pyvolatt.errors import ConfigurationError, ContractError, NumericError, PyvolattError
from pyvolatt.metrics.detection import read_records
from pyvolatt.metrics.report import evaluate_cases
from pyvolatt.phantom.experiment import ExperimentConfig, ablate, run_experiment
from pyvolatt.phantom.generator import PhantomConfig
from pyvolatt.phantom.model import ToyModelConfig
from pyvolatt.phantom.training import TrainConfig
from pyvolatt.utilities import atomic_write_text, write_json
from pyvolatt.volume.preprocess import BagSpec, make_bag_indices, preprocess_volume
from pyvolatt.volume.volume import read_mask, read_volume, write_volume

logger = logging.getLogger("pyvolatt")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1


def _pair(text: str) -> List[float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    return [float(p) for p in parts]


def _int_list(text: str) -> List[int]:
    return [int(p) for p in text.split(",")]


def _str_list(text: str) -> List[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (schema 1)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="run seed (default 12)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(
        prog="pyvolatt", description="Volumetric attention for 2.5D CT lesion segmentation."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="window, resample and slab a volume")
    p.add_argument("--in", dest="input", help="input .vol file")
    p.add_argument("--clamp", type=_pair, help="HU window lo,hi (write --clamp=-200,300)")
    p.add_argument("--dz", type=float, help="target slice spacing in mm")
    p.add_argument("--size", type=int, help="in-plane size in pixels (default: keep)")
    p.add_argument("--bag", type=int, help="feature bag size recorded in the slab manifest")

    p = sub.add_parser("gradcheck", parents=[common], help="finite difference gradient checks")
    p.add_argument("--tol", type=float, help="relative error tolerance")
    p.add_argument("--eps", type=float, help="finite difference step")
    p.add_argument("--points", type=int, help="random points per op")

    p = sub.add_parser("experiment", parents=[common], help="train and evaluate on phantoms")
    p.add_argument("--mode", choices=["none", "channel", "spatial", "both"])
    p.add_argument("--bag", type=int, help="feature bag size N")
    p.add_argument("--seeds", type=int, help="number of paired seeds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-eval", dest="n_eval", type=int)
    p.add_argument("--grid", type=_int_list, help="phantom grid Z,Y,X")
    p.add_argument("--ablate", choices=["bag_size", "attention_mode"])
    p.add_argument("--values", type=_str_list, help="comma separated ablation values")

    p = sub.add_parser("eval", parents=[common], help="evaluate predicted masks")
    p.add_argument("--pred", help="directory of predicted .msk files")
    p.add_argument("--gt", help="directory of ground truth .msk files")
    p.add_argument("--detections", help="JSON lines file of scored detections")
    p.add_argument("--gate-liver", dest="gate_liver", action="store_true", default=None)
    return parser


def setup_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def _out_dir(cfg: RunConfig) -> str:
    out = cfg.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def cmd_preprocess(cfg: RunConfig) -> int:
    if not cfg["input"]:
        raise ConfigurationError("preprocess needs an input volume (--in)")
    lo, hi = cfg["clamp"]
    volume = read_volume(cfg["input"])
    result = preprocess_volume(volume, lo, hi, cfg["dz"], cfg["size"])

    out = _out_dir(cfg)
    stem = os.path.splitext(os.path.basename(cfg["input"]))[0]
    vol_path = os.path.join(out, f"{stem}.vol")
    write_volume(vol_path, result)

    bag = BagSpec.from_size(cfg["bag"])
    slabs = []
    for z in range(result.Z):
        channels = [int(np.clip(z + d, 0, result.Z - 1)) for d in (-1, 0, 1)]
        slabs.append({"z": z, "channels": channels, "bag": make_bag_indices(z, bag, result.Z)})
    manifest = {
        "volume": os.path.basename(vol_path),
        "dims": list(result.dims),
        "spacing_mm": list(result.spacing),
        "bag_size": bag.n_images,
        "offsets": bag.offsets,
        "boundary": bag.boundary,
        "slabs": slabs,
    }
    write_json(os.path.join(out, f"{stem}.slabs.json"), manifest)
    logger.info(f"Preprocessed {cfg['input']} to {result!r}.")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    reports = run_gradcheck_suite(
        seed=cfg.seed, tol=cfg["tol"], eps=cfg["eps"], points=cfg["points"]
    )
    text = "\n".join(str(r) for r in reports) + "\n"
    sys.stdout.write(text)
    if cfg.out:
        atomic_write_text(os.path.join(_out_dir(cfg), "gradcheck.txt"), text)
    failed = [r.name for r in reports if not r.passed]
    if failed:
        logger.error(f"Gradient check failed for: {', '.join(failed)}.")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def experiment_config(cfg: RunConfig) -> ExperimentConfig:
    grid = tuple(cfg["grid"])
    return ExperimentConfig(
        phantom=PhantomConfig(
            grid=grid,
            n_lesions=cfg["n_lesions"],
            distractor_rate=cfg["distractor_rate"],
            noise_sigma=cfg["noise_sigma"],
        ),
        model=ToyModelConfig(mode=cfg["mode"], bag_size=cfg["bag"]),
        train=TrainConfig(
            epochs=cfg["epochs"],
            lr=cfg["lr"],
            pos_weight=cfg["pos_weight"],
            progress=logger.getEffectiveLevel() <= logging.INFO,
        ),
        seeds=cfg["seeds"],
        base_seed=cfg.seed,
        n_train=cfg["n_train"],
        n_eval=cfg["n_eval"],
    )


def cmd_experiment(cfg: RunConfig) -> int:
    exp = experiment_config(cfg)
    out = _out_dir(cfg)
    if cfg["ablate"]:
        values = cfg["values"]
        if not values:
            raise ConfigurationError("--ablate needs --values")
        if cfg["ablate"] == "bag_size":
            values = [int(v) for v in values]
        deck = ablate(cfg["ablate"], values, exp)
        deck.to_csv(os.path.join(out, "ablation.csv"))
        deck.to_json(os.path.join(out, "ablation.json"))
        sys.stdout.write(deck.df.to_string(index=False) + "\n")
        return EXIT_OK

    result = run_experiment(exp)
    result.write(out)
    sys.stdout.write(f"median: {result.median}\n")
    return EXIT_OK


def _masks(directory: str) -> dict:
    return {
        os.path.splitext(os.path.basename(p))[0]: p
        for p in sorted(glob.glob(os.path.join(directory, "*.msk")))
    }


def cmd_eval(cfg: RunConfig) -> int:
    if not cfg["pred"] or not cfg["gt"]:
        raise ConfigurationError("eval needs --pred and --gt directories")
    preds, gts = _masks(cfg["pred"]), _masks(cfg["gt"])
    if not preds:
        raise ContractError(f"no predicted masks in {cfg['pred']}")
    orphans = sorted(set(preds) ^ set(gts))
    if orphans:
        raise ContractError(f"unpaired cases: {', '.join(orphans)}")

    names = sorted(gts)
    pred_labels, gt_labels, spacings = [], [], []
    for name in names:
        pred, _ = read_mask(preds[name])
        gt, spacing = read_mask(gts[name])
        pred_labels.append(pred)
        gt_labels.append(gt)
        spacings.append(spacing)

    detections = read_records(cfg["detections"]) if cfg["detections"] else None
    report = evaluate_cases(
        pred_labels,
        gt_labels,
        spacings,
        case_ids=names,
        detections=detections,
        gate_liver=bool(cfg["gate_liver"]),
    )
    out = _out_dir(cfg)
    report.write(os.path.join(out, "metrics.json"))
    sys.stdout.write(report.to_frame().to_string(index=False) + "\n")
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess,
    "gradcheck": cmd_gradcheck,
    "experiment": cmd_experiment,
    "eval": cmd_eval,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    flags = {
        k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")
    }
    try:
        cfg = RunConfig.resolve(args.command, flags, args.config)
        if args.verbose:
            banner()
        sys.stdout.write(cfg.echo() + "\n")
        if cfg.out:
            cfg.write(os.path.join(_out_dir(cfg), "config.json"))
        return COMMANDS[args.command](cfg)
    except NumericError as e:
        logger.error(f"Numeric failure: {e}")
        return e.exit_code
    except PyvolattError as e:
        logger.error(str(e))
        return e.exit_code
    except OSError as e:
        logger.error(str(e))
        return ContractError.exit_code


if __name__ == "__main__":
    sys.exit(main())
