"""Raw tensor serialisation.

A tensor is stored as a little-endian IEEE-754 f64 buffer, row-major, next
to a JSON sidecar ``<path>.json`` holding ``{shape, dtype, order}``.
"""

import json

import numpy as np

from pyvolatt.errors import ParseError
from pyvolatt.tensor.core import Tensor
from pyvolatt.utilities import atomic_write_bytes, atomic_write_text, raw_array


def sidecar_path(path: str) -> str:
    return path + ".json"


def tensor_bytes(t: Tensor) -> bytes:
    return np.ascontiguousarray(t.data, dtype="<f8").tobytes()


def save_tensor(path: str, t: Tensor) -> None:
    """Writes the raw f64 buffer to path and the sidecar to path + '.json'."""
    meta = {"shape": list(t.shape), "dtype": "f64", "order": "row-major"}
    atomic_write_bytes(path, tensor_bytes(t))
    atomic_write_text(sidecar_path(path), json.dumps(meta, sort_keys=True))


def load_tensor(path: str, requires_grad: bool = False) -> Tensor:
    """Reads a tensor written by :func:`save_tensor`."""
    with open(sidecar_path(path), "r") as f:
        text = f.read()
    try:
        meta = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed tensor sidecar: {e.msg}", offset=e.pos) from e
    if meta.get("dtype") != "f64" or meta.get("order") != "row-major":
        raise ParseError("unsupported tensor sidecar dtype/order", offset=0)
    with open(path, "rb") as f:
        payload = f.read()
    data = raw_array(payload, "f8", tuple(meta["shape"]))
    return Tensor(data.astype(np.float64), requires_grad=requires_grad)
