"""Binary dataset container with a JSON sidecar.

Layout (all integers little-endian)::

    magic    8 bytes  b"DSDATSET"
    version  uint32   1
    count    uint32   number of records
    per record header:
        name_len uint16, name (utf-8)
        dtype    uint8   (see DTYPES)
        ndim     uint8,  shape uint64 * ndim
    per record payload, in header order:
        numeric: raw little-endian values, C order
        mask:    ASCII '0'/'1' rows along the last axis, each row ended by '\\n'

The sidecar ``<path>.json`` stores the generator config, seed and split label.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DatasetIOError, FormatError

__all__ = ["MAGIC", "VERSION", "DTYPES", "save_dataset", "load_dataset", "sidecar_path", "read_sidecar"]

MAGIC = b"DSDATSET"
VERSION = 1
DTYPES = {
    0: np.dtype("<f8"),
    1: np.dtype("<c16"),
    2: np.dtype("<i8"),
    3: np.dtype(bool),  # stored as text mask rows
    4: np.dtype("<f4"),
    5: np.dtype("<c8"),
    6: np.dtype("u1"),
}
_CODES = {np.dtype(v).kind + str(np.dtype(v).itemsize): k for k, v in DTYPES.items()}


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _code(arr: np.ndarray) -> int:
    key = arr.dtype.kind + str(arr.dtype.itemsize)
    if key not in _CODES:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    return _CODES[key]


def _mask_bytes(arr: np.ndarray) -> bytes:
    rows = arr.reshape(-1, arr.shape[-1]) if arr.ndim else arr.reshape(1, 1)
    return b"".join(bytes(np.where(r, ord("1"), ord("0")).astype(np.uint8)) + b"\n" for r in rows)


def _payload_size(code: int, shape) -> int:
    count = int(np.prod(shape)) if shape else 1
    if code == 3:
        last = shape[-1] if shape else 1
        return count // max(last, 1) * (last + 1) if last else 0
    return count * DTYPES[code].itemsize


def save_dataset(path, records, sidecar: dict | None = None) -> None:
    """Write ``records`` (a mapping or a list of ``(name, array)`` pairs)."""
    items = list(records.items()) if isinstance(records, dict) else list(records)
    header = [struct.pack("<8sII", MAGIC, VERSION, len(items))]
    payload = []
    for name, arr in items:
        arr = np.asarray(arr)
        code = _code(arr)
        raw = name.encode("utf-8")
        header.append(struct.pack("<H", len(raw)) + raw)
        header.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        if code == 3:
            payload.append(_mask_bytes(arr))
        else:
            payload.append(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(header))
        fh.write(b"".join(payload))
    if sidecar is not None:
        sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_sidecar(path) -> dict:
    side = sidecar_path(path)
    if not side.exists():
        return {}
    return json.loads(side.read_text())


def load_dataset(path, expect_split: str | None = None) -> dict:
    """Read every record; raises FormatError on bad magic/version, DatasetIOError on truncation.

    With ``expect_split`` the sidecar's ``split`` label must match, which keeps
    training and evaluation sets from being mixed up.
    """
    blob = Path(path).read_bytes()
    offset = 0

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise DatasetIOError("header truncated", offset)
        vals = struct.unpack_from(fmt, blob, offset)
        offset += size
        return vals

    if len(blob) < 8 or blob[:8] != MAGIC:
        raise FormatError("not a dataset file (bad magic)")
    _, version, count = take("<8sII")
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    specs = []
    for _ in range(count):
        (n,) = take("<H")
        if offset + n > len(blob):
            raise DatasetIOError("record name truncated", offset)
        name = blob[offset: offset + n].decode("utf-8")
        offset += n
        code, ndim = take("<BB")
        if code not in DTYPES:
            raise FormatError(f"unknown dtype code {code}")
        shape = take(f"<{ndim}Q")
        specs.append((name, code, tuple(int(s) for s in shape)))
    out = {}
    for name, code, shape in specs:
        size = _payload_size(code, shape)
        if offset + size > len(blob):
            raise DatasetIOError(f"record {name!r} truncated", len(blob))
        chunk = blob[offset: offset + size]
        if code == 3:
            last = shape[-1] if shape else 1
            rows = np.frombuffer(chunk, dtype=np.uint8).reshape(-1, last + 1) if size else np.zeros((0, 1), np.uint8)
            if np.any(rows[:, -1] != ord("\n")):
                raise FormatError(f"mask record {name!r} is malformed")
            arr = (rows[:, :-1] == ord("1")).reshape(shape)
        else:
            arr = np.frombuffer(chunk, dtype=DTYPES[code]).reshape(shape).copy()
        out[name] = arr
        offset += size
    if offset != len(blob):
        raise FormatError("trailing bytes after last record")
    if expect_split is not None:
        split = read_sidecar(path).get("split")
        if split != expect_split:
            raise FormatError(f"dataset split is {split!r}, expected {expect_split!r}")
    return out
