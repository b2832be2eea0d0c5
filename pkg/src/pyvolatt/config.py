"""Run configuration: defaults, JSON config files and flag overrides."""

import copy
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

from pyvolatt.errors import ConfigurationError, ParseError
from pyvolatt.utilities import write_json

logger = logging.getLogger(__name__)

SCHEMA = 1
DEFAULT_SEED = 12

DEFAULTS = {
    "preprocess": {
        "input": None,
        "clamp": [-200.0, 300.0],
        "dz": 1.5,
        "size": None,
        "bag": 9,
    },
    "gradcheck": {
        "tol": 1e-4,
        "eps": 1e-4,
        "points": 25,
    },
    "experiment": {
        "mode": "both",
        "bag": 9,
        "seeds": 5,
        "epochs": 4,
        "lr": 0.1,
        "pos_weight": 4.0,
        "n_train": 4,
        "n_eval": 3,
        "grid": [32, 64, 64],
        "n_lesions": 3,
        "distractor_rate": 0.15,
        "noise_sigma": 0.05,
        "ablate": None,
        "values": None,
    },
    "eval": {
        "pred": None,
        "gt": None,
        "detections": None,
        "gate_liver": False,
    },
}


@dataclass
class RunConfig:
    """The effective configuration of one command invocation.

    Attributes
    ----------
    command : str
        The subcommand.

    seed : int
        The run seed. The default is 12.

    out : str, optional
        The output directory.

    options : dict
        Subcommand options, starting from the subcommand defaults.

    schema : int
        The config file schema version.
    """

    command: str
    seed: int = DEFAULT_SEED
    out: Optional[str] = None
    options: dict = field(default_factory=dict)
    schema: int = SCHEMA

    def __post_init__(self):
        if self.command not in DEFAULTS:
            raise ConfigurationError(f"unknown command {self.command!r}")
        merged = copy.deepcopy(DEFAULTS[self.command])
        unknown = set(self.options) - set(merged)
        if unknown:
            raise ConfigurationError(
                f"unknown {self.command} option(s): {', '.join(sorted(unknown))}"
            )
        merged.update(self.options)
        self.options = merged

    def __getitem__(self, key):
        return self.options[key]

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "command": self.command,
            "seed": self.seed,
            "out": self.out,
            "options": self.options,
        }

    def echo(self) -> str:
        """The effective configuration as sorted JSON."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, path: str) -> None:
        write_json(path, self.to_dict())

    @staticmethod
    def read_file(path: str) -> dict:
        """Reads a JSON config file and checks its schema version."""
        with open(path, "rb") as f:
            raw = f.read()
        try:
            data = json.loads(raw.decode("utf-8"))
        except UnicodeDecodeError as e:
            raise ParseError("config file is not valid UTF-8", offset=e.start) from e
        except json.JSONDecodeError as e:
            raise ParseError(f"malformed config file: {e.msg}", offset=e.pos) from e
        if not isinstance(data, dict):
            raise ParseError("config file is not a JSON object", offset=0)
        if data.get("schema") != SCHEMA:
            raise ConfigurationError(
                f"unsupported config schema {data.get('schema')!r}; expected {SCHEMA}"
            )
        return data

    @classmethod
    def resolve(cls, command: str, flags: dict, path: str = None) -> "RunConfig":
        """Builds the effective configuration.

        Subcommand defaults are overridden by the config file, which is
        overridden by every flag that was given (not None).

        Parameters
        ----------
        command : str
            The subcommand.

        flags : dict
            Parsed command line values; 'seed' and 'out' are top level, the
            rest are options.

        path : str, optional
            A JSON config file.
        """
        seed, out, options = DEFAULT_SEED, None, {}
        if path is not None:
            data = cls.read_file(path)
            if data.get("command", command) != command:
                raise ConfigurationError(
                    f"config file is for {data['command']!r}, not {command!r}"
                )
            seed = data.get("seed", seed)
            out = data.get("out", out)
            options.update(data.get("options", {}))
        flags = dict(flags)
        flag_seed = flags.pop("seed", None)
        if flag_seed is not None:
            seed = flag_seed
        for key, value in flags.items():
            if value is None:
                continue
            if key == "out":
                out = value
            else:
                options[key] = value
        return cls(command=command, seed=int(seed), out=out, options=options)
