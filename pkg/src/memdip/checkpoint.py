"""Binary parameter container.

Layout (little-endian)::

    b"MEMCKPT1" | uint64 header length | UTF-8 JSON header | payloads

The header lists parameter names, shapes and byte ranges in payload order,
the storage dtype, a config hash and the model configuration. Payloads are the
raw row-major parameter values.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MEMCKPT1"
_DTYPES = {"float64": "<f8", "float32": "<f4"}


class CheckpointFormatError(ValueError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def encode_checkpoint(params: dict[str, np.ndarray], *, dtype: str = "float64",
                      config_hash: str = "", model_config: dict | None = None,
                      extra: dict | None = None) -> bytes:
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")
    entries, chunks, offset = [], [], 0
    for name, value in params.items():
        raw = np.ascontiguousarray(value, dtype=_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "shape": list(np.shape(value)), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format": 1,
        "dtype": dtype,
        "config_hash": config_hash,
        "model_config": model_config or {},
        "extra": extra or {},
        "params": entries,
    }
    head = canonical_json(header).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def decode_checkpoint(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a container; raises :class:`CheckpointFormatError` on any defect."""
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("not a MEMCKPT1 checkpoint (bad magic or truncated)")
    (n,) = struct.unpack_from("<Q", blob, len(MAGIC))
    start = len(MAGIC) + 8
    if start + n > len(blob):
        raise CheckpointFormatError("checkpoint header truncated")
    try:
        header = json.loads(blob[start : start + n].decode("utf-8"))
        dtype = np.dtype(_DTYPES[header["dtype"]])
        entries = header["params"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"corrupt checkpoint header: {exc}") from exc
    body = blob[start + n :]
    params = {}
    for e in entries:
        end = e["offset"] + e["nbytes"]
        count = int(np.prod(e["shape"], dtype=np.int64))
        if end > len(body) or count * dtype.itemsize != e["nbytes"]:
            raise CheckpointFormatError(f"checkpoint payload for {e['name']!r} truncated or inconsistent")
        params[e["name"]] = np.frombuffer(body, dtype=dtype, count=count, offset=e["offset"]).reshape(e["shape"]).astype(np.float64)
    if entries and entries[-1]["offset"] + entries[-1]["nbytes"] != len(body):
        raise CheckpointFormatError("trailing bytes after checkpoint payload")
    return header, params


def save_checkpoint(path, params, **kwargs) -> Path:
    path = Path(path)
    path.write_bytes(encode_checkpoint(params, **kwargs))
    return path


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode_checkpoint(Path(path).read_bytes())
