"""Small deterministic on-disk container for named arrays plus JSON metadata.

Layout: 8-byte magic, 8-byte little-endian header length, UTF-8 JSON header,
then the raw C-order bytes of each array in sorted-name order.  Unlike zip
archives there are no timestamps, so equal content means equal bytes, which
the reproducibility guarantees rely on.  Writes go through a temp file and
an atomic rename.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile

import numpy as np

from .errors import ParseError

MAGIC = b"S3RB\x00\x01\x00\x00"

__all__ = ["write_records", "read_records", "canonical_bytes", "atomic_write_bytes", "atomic_write_text"]


def _encode(arrays, meta):
    buf = io.BytesIO()
    index = {}
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        raw = arr.tobytes()
        index[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        buf.write(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": index}, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(header)) + header + buf.getvalue()


def canonical_bytes(arrays, meta):
    """Deterministic byte encoding of the payload (no I/O)."""
    return _encode(arrays, meta)


def atomic_write_bytes(path, payload):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode())


def write_records(path, arrays, meta):
    atomic_write_bytes(path, _encode(arrays, meta))


def read_records(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise ParseError(f"{path}: not a record container (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(blob[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt container header ({exc})") from exc
    body = blob[start + hlen :]
    arrays = {}
    for name, spec in header["arrays"].items():
        dt = np.dtype(spec["dtype"])
        n0, n1 = spec["offset"], spec["offset"] + spec["nbytes"]
        if n1 > len(body):
            raise ParseError(f"{path}: truncated container (array {name!r})")
        arrays[name] = np.frombuffer(body[n0:n1], dtype=dt).reshape(spec["shape"]).copy()
    return arrays, header["meta"]
