"""Binary container used for model artifacts and dataset dumps.

Layout (all integers little-endian)::

    magic      8 bytes   b"PROCATTN"
    version    uint16
    hdr_len    uint32
    header     hdr_len bytes of UTF-8 JSON (sorted keys)
    blocks     raw row-major arrays, in the order listed in header["blocks"]

Each ``header["blocks"]`` entry is ``{"name", "dtype", "shape"}`` with dtype
one of ``f8`` (float64), ``i8`` (int64) or ``u1`` (bool/uint8).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ArtifactFormatError

MAGIC = b"PROCATTN"
VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8", "u1": "u1"}


def _code(arr):
    if arr.dtype == np.bool_ or arr.dtype == np.uint8:
        return "u1"
    if np.issubdtype(arr.dtype, np.integer):
        return "i8"
    return "f8"


def write_container(fh, header, arrays):
    """Write ``header`` (JSON-able dict) and named ``arrays`` (ordered mapping)."""
    header = dict(header)
    blocks = []
    payload = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _code(arr)
        blocks.append({"name": name, "dtype": code, "shape": list(arr.shape)})
        payload.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    header["blocks"] = blocks
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    fh.write(MAGIC)
    fh.write(struct.pack("<HI", VERSION, len(raw)))
    fh.write(raw)
    for chunk in payload:
        fh.write(chunk)


def read_container(fh):
    """Return ``(header, arrays)``; raise :class:`ArtifactFormatError` on damage."""
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise ArtifactFormatError(f"bad magic tag {magic!r}; not a container file")
    fixed = fh.read(6)
    if len(fixed) < 6:
        raise ArtifactFormatError("truncated file: missing section 'version/header length'")
    version, hdr_len = struct.unpack("<HI", fixed)
    if version != VERSION:
        raise ArtifactFormatError(f"unsupported format version {version} (expected {VERSION})")
    raw = fh.read(hdr_len)
    if len(raw) < hdr_len:
        raise ArtifactFormatError("truncated file: missing section 'header'")
    try:
        header = json.loads(raw.decode("utf-8"))
    except ValueError as exc:
        raise ArtifactFormatError(f"corrupt header: {exc}") from None
    arrays = {}
    for block in header.get("blocks", []):
        dtype = np.dtype(_DTYPES[block["dtype"]])
        shape = tuple(block["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        buf = fh.read(nbytes)
        if len(buf) < nbytes:
            raise ArtifactFormatError(
                f"truncated payload: missing section {block['name']!r} "
                f"(expected {nbytes} bytes, got {len(buf)})"
            )
        arr = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
        if block["dtype"] == "u1":
            arr = arr.astype(bool)
        arrays[block["name"]] = arr
    if fh.read(1):
        raise ArtifactFormatError("trailing bytes after last declared block")
    return header, arrays
