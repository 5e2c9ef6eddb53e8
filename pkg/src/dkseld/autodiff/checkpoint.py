"""Checkpoint files: a named-parameter table of fp32 records plus a manifest hash.

Layout::

    b"DKSELDCK"  magic
    u32          manifest length (little endian)
    bytes        manifest JSON: {"records": [{"name", "shape", "offset", "nbytes"}],
                                 "sha256": <hex digest of payload>, "meta": {...}}
    bytes        payload: concatenated little-endian float32 arrays
"""
from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"DKSELDCK"


def save_checkpoint(path, state: dict, meta: dict | None = None) -> str:
    """Write ``state`` (name -> array) and return the payload digest."""
    records = []
    chunks = []
    offset = 0
    for name, arr in state.items():
        buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        records.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    payload = b"".join(chunks)
    digest = hashlib.sha256(payload).hexdigest()
    manifest = json.dumps({"records": records, "sha256": digest, "meta": meta or {}},
                          sort_keys=True).encode()
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(manifest)) + manifest + payload)
    return digest


def load_checkpoint(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC or len(raw) < 12:
        raise FormatError(f"{path}: not a dkseld checkpoint")
    (mlen,) = struct.unpack("<I", raw[8:12])
    try:
        manifest = json.loads(raw[12:12 + mlen])
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt manifest") from exc
    payload = raw[12 + mlen:]
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise FormatError(f"{path}: payload hash mismatch")
    state: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for rec in manifest["records"]:
        chunk = payload[rec["offset"]:rec["offset"] + rec["nbytes"]]
        state[rec["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(rec["shape"]).copy()
    return state, manifest.get("meta", {})
