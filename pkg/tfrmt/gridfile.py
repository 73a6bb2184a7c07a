"""Self-describing binary grid files.

Layout: magic ``TFRMT1``, a little-endian uint64 header length, a UTF-8 JSON header
listing named arrays (dtype, shape) plus metadata, then each array in header order
as little-endian float64. Complex arrays are stored with re/im interleaved, row-major.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from tfrmt.errors import GridFileError
from tfrmt.utils.levels import to_db


MAGIC = b"TFRMT1"
_LENGTH_DTYPE = np.dtype("<u8")
_REAL = np.dtype("<f8")
_COMPLEX = np.dtype("<c16")


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def encode_grid(arrays: Mapping[str, np.ndarray], metadata: Optional[Mapping[str, Any]] = None) -> bytes:
    """Serialise named arrays and metadata to the grid byte layout."""
    entries = []
    payloads = []
    for name, array in arrays.items():
        array = np.asarray(array)
        if np.iscomplexobj(array):
            data = np.ascontiguousarray(array, dtype=_COMPLEX).view(_REAL)
            kind = "complex128"
        else:
            data = np.ascontiguousarray(array, dtype=_REAL)
            kind = "float64"
        entries.append({"name": str(name), "dtype": kind, "shape": list(array.shape)})
        payloads.append(data.tobytes(order="C"))
    header = json.dumps(
        {"arrays": entries, "metadata": _jsonable(dict(metadata or {}))},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    length = np.array([len(header)], dtype=_LENGTH_DTYPE).tobytes()
    return MAGIC + length + header + b"".join(payloads)


def _check_header(header: Any) -> Tuple[list, Dict[str, Any]]:
    """Return the array entries and metadata of a decoded header, or raise GridFileError."""
    if not isinstance(header, dict):
        raise GridFileError("header is not a JSON object")
    entries = header.get("arrays", [])
    metadata = header.get("metadata", {})
    if not isinstance(entries, list):
        raise GridFileError("header 'arrays' is not a list")
    if not isinstance(metadata, dict):
        raise GridFileError("header 'metadata' is not an object")
    for entry in entries:
        if not isinstance(entry, dict) or not {"name", "dtype", "shape"} <= entry.keys():
            raise GridFileError(f"array entry {entry!r} needs name, dtype and shape")
        if not isinstance(entry["name"], str):
            raise GridFileError(f"array name {entry['name']!r} is not a string")
        if entry["dtype"] not in ("complex128", "float64"):
            raise GridFileError(f"unsupported dtype {entry['dtype']!r}")
        shape = entry["shape"]
        if not isinstance(shape, list) or not all(
            isinstance(n, int) and not isinstance(n, bool) and n >= 0 for n in shape
        ):
            raise GridFileError(f"bad shape {shape!r} for {entry['name']!r}")
    return entries, metadata


def decode_grid(blob: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    if not blob.startswith(MAGIC):
        raise GridFileError("missing TFRMT1 magic")
    offset = len(MAGIC)
    if len(blob) < offset + _LENGTH_DTYPE.itemsize:
        raise GridFileError("truncated header length")
    length = int(np.frombuffer(blob, dtype=_LENGTH_DTYPE, count=1, offset=offset)[0])
    offset += _LENGTH_DTYPE.itemsize
    try:
        header = json.loads(blob[offset : offset + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GridFileError(f"unreadable header: {exc}") from None
    offset += length
    entries, metadata = _check_header(header)
    arrays: Dict[str, np.ndarray] = {}
    for entry in entries:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        width = 2 if entry["dtype"] == "complex128" else 1
        nbytes = count * width * _REAL.itemsize
        if offset + nbytes > len(blob):
            raise GridFileError(f"payload for {entry['name']!r} is truncated")
        data = np.frombuffer(blob, dtype=_REAL, count=count * width, offset=offset)
        offset += nbytes
        if width == 2:
            data = data.view(_COMPLEX)
        arrays[entry["name"]] = data.reshape(shape).copy()
    if offset != len(blob):
        raise GridFileError(f"{len(blob) - offset} trailing bytes after payload")
    return arrays, metadata


def write_grid(
    path: Path, arrays: Mapping[str, np.ndarray], metadata: Optional[Mapping[str, Any]] = None
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_grid(arrays, metadata))
    return path


def read_grid(path: Path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise GridFileError(f"cannot read {path}: {exc}") from None
    return decode_grid(blob)


def write_db_grid(
    path: Path,
    values: np.ndarray,
    z: np.ndarray,
    tau: np.ndarray,
    metadata: Optional[Mapping[str, Any]] = None,
    floor_db: float = -60.0,
) -> Path:
    """Intensity in dB relative to its peak, for plotting."""
    meta = dict(metadata or {})
    meta.update({"units": "dB re peak", "floor_db": floor_db})
    return write_grid(path, {"db": to_db(values, floor_db=floor_db), "z": z, "tau": tau}, meta)
