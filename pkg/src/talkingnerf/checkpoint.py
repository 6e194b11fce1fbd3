"""Single-file binary checkpoints.

Layout: magic ``LOKI`` | u32 LE format version | u64 LE header length |
UTF-8 JSON header | raw little-endian array payload | u32 LE CRC32 of
header plus payload.  The header lists every array (name, shape, dtype,
byte offset into the payload) in sorted name order plus a free-form
``meta`` dict.  Model parameters are stored as float32, training state
(optimizer moments, counters) as float64.  Writing is deterministic:
identical inputs produce identical bytes.
"""

from __future__ import annotations

import json
import zlib

import numpy as np

MAGIC = b"LOKI"
VERSION = 1
_DTYPES = {"<f4", "<f8"}


class CheckpointError(ValueError):
    """Raised for malformed, truncated, or corrupted checkpoint files."""


def save_checkpoint(path: str, params: dict, state: dict, meta: dict) -> None:
    """Write parameters (float32) and training state (float64) to ``path``.

    ``params`` and ``state`` map names to arrays; names must not collide.
    ``meta`` must be JSON-serializable.
    """
    overlap = set(params) & set(state)
    if overlap:
        raise ValueError(f"names in both params and state: {sorted(overlap)}")
    arrays = {}
    # np.asarray(order="C") rather than ascontiguousarray: the latter
    # promotes 0-d arrays to 1-d, which would break scalar round trips.
    for name, a in params.items():
        arrays[name] = np.asarray(a, dtype="<f4", order="C")
    for name, a in state.items():
        arrays[name] = np.asarray(a, dtype="<f8", order="C")

    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        a = arrays[name]
        raw = a.tobytes()
        entries.append({
            "name": name,
            "shape": list(a.shape),
            "dtype": a.dtype.str,
            "offset": offset,
        })
        chunks.append(raw)
        offset += len(raw)

    header = json.dumps(
        {"arrays": entries, "meta": meta},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    payload = b"".join(chunks)
    crc = zlib.crc32(header + payload) & 0xFFFFFFFF

    blob = b"".join([
        MAGIC,
        np.uint32(VERSION).tobytes(),
        np.uint64(len(header)).tobytes(),
        header,
        payload,
        np.uint32(crc).tobytes(),
    ])
    with open(path, "wb") as f:
        f.write(blob)


def load_checkpoint(path: str):
    """Read a checkpoint; returns (params, state, meta).

    Arrays come back with their stored dtypes (params float32, state
    float64), so a save -> load -> save round trip is byte-identical.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 4 + 8 + 4:
        raise CheckpointError("file too short to be a checkpoint")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}")
    version = int(np.frombuffer(blob[4:8], dtype="<u4")[0])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header_len = int(np.frombuffer(blob[8:16], dtype="<u8")[0])
    body_start = 16
    payload_start = body_start + header_len
    crc_start = len(blob) - 4
    if payload_start > crc_start:
        raise CheckpointError("truncated checkpoint header")
    header_bytes = blob[body_start:payload_start]
    payload = blob[payload_start:crc_start]
    stored_crc = int(np.frombuffer(blob[crc_start:], dtype="<u4")[0])
    actual_crc = zlib.crc32(header_bytes + payload) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointError(
            f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable header: {e}") from e
    if not isinstance(header, dict) or "arrays" not in header or "meta" not in header:
        raise CheckpointError("header missing arrays or meta")

    params: dict = {}
    state: dict = {}
    for entry in header["arrays"]:
        name = entry["name"]
        dtype = entry["dtype"]
        if dtype not in _DTYPES:
            raise CheckpointError(f"array {name} has unsupported dtype {dtype}")
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = int(entry["offset"])
        nbytes = count * np.dtype(dtype).itemsize
        if start < 0 or start + nbytes > len(payload):
            raise CheckpointError(f"array {name} extends past payload end")
        a = np.frombuffer(payload[start:start + nbytes], dtype=dtype)
        a = a.reshape(shape).copy()
        (params if dtype == "<f4" else state)[name] = a
    return params, state, header["meta"]
