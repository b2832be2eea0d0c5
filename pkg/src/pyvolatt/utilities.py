"""Shared file and threading helpers."""

import os
import json
import logging
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from pyvolatt.errors import ParseError

logger = logging.getLogger(__name__)

THREADS_ENV = "VA_ENGINE_THREADS"


def max_workers() -> int:
    """Returns the worker cap read from the VA_ENGINE_THREADS environment
    variable. Defaults to 1 (no parallelism)."""
    value = os.environ.get(THREADS_ENV, "1")
    try:
        workers = int(value)
    except ValueError:
        logger.warning(f"Ignoring non-integer {THREADS_ENV}={value!r}.")
        return 1
    return max(1, workers)


def ordered_map(func, items) -> list:
    """Maps func over items, possibly in parallel, returning results in the
    order of items."""
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Writes payload to path by writing a temporary file in the same
    directory and renaming it into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: str, obj) -> None:
    """Writes obj as sorted, indented JSON (atomically)."""
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_dataframe(path: str, df) -> None:
    """Writes a pandas DataFrame as CSV (atomically)."""
    atomic_write_text(path, df.to_csv(index=False))


def pack_header_blob(header: dict, payload: bytes) -> bytes:
    """Packs a one-line JSON header and a raw payload into a single blob.

    The header is serialised without newlines and terminated by a single
    ``\\n`` byte; the raw payload follows immediately.
    """
    line = json.dumps(header, sort_keys=True, separators=(",", ":"))
    return line.encode("utf-8") + b"\n" + payload


def unpack_header_blob(blob: bytes, required: tuple = ()) -> tuple:
    """Splits a blob written by :func:`pack_header_blob`.

    Returns
    -------
    header : dict
        The decoded JSON header.

    payload : bytes
        The raw bytes following the header.

    Raises
    ------
    ParseError
        If the header is missing, is not valid JSON, is not an object or
        lacks one of the required keys.
    """
    end = blob.find(b"\n")
    if end < 0:
        raise ParseError("no header terminator found", offset=len(blob))
    try:
        header = json.loads(blob[:end].decode("utf-8"))
    except UnicodeDecodeError as e:
        raise ParseError("header is not valid UTF-8", offset=e.start) from e
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed header: {e.msg}", offset=e.pos) from e
    if not isinstance(header, dict):
        raise ParseError("header is not a JSON object", offset=0)
    for key in required:
        if key not in header:
            raise ParseError(f"header is missing key '{key}'", offset=end)
    return header, blob[end + 1 :]


def read_blob(path: str) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def raw_array(payload: bytes, dtype: str, shape: tuple, offset: int = 0) -> np.ndarray:
    """Interprets a little-endian raw payload as an array of the given
    shape, checking the byte count."""
    dt = np.dtype(dtype).newbyteorder("<")
    expected = int(np.prod(shape)) * dt.itemsize
    if len(payload) != expected:
        raise ParseError(
            f"expected {expected} payload bytes for shape {tuple(shape)}, "
            f"found {len(payload)}",
            offset=offset,
        )
    return np.frombuffer(payload, dtype=dt).reshape(shape)
