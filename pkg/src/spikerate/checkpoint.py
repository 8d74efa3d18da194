"""
Weight checkpoint files.

Layout::

    8 bytes   magic  b"SPKRCKPT"
    <u4       format version
    <u8       header length in bytes
    header    UTF-8 JSON (sorted keys)
    payload   every tensor as little-endian float64 in C order

The header lists layer specs, ``K``, ``tau_us`` and, per tensor, its name,
endpoints, shape, index order ``["post", "pre", "k"]`` and byte offset into
the payload.  ``meta`` carries trainer bookkeeping (pass, timestep, learning
rates, RNG states, resolved config).  Files written from equal state are
byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError
from .net import DelayedWeightTensor, LayerSpec, NetworkState

MAGIC = b"SPKRCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
INDEX_ORDER = ["post", "pre", "k"]


def dumps(state: NetworkState, meta: dict | None = None) -> bytes:
    tensors = []
    chunks = []
    offset = 0
    for name, w in state.tensors():
        data = np.ascontiguousarray(w.omega, dtype="<f8").tobytes()
        tensors.append(
            {
                "name": name,
                "pre": w.pre,
                "post": w.post,
                "shape": list(w.omega.shape),
                "index_order": INDEX_ORDER,
                "dtype": "<f8",
                "offset": offset,
                "nbytes": len(data),
            }
        )
        chunks.append(data)
        offset += len(data)
    header = {
        "version": VERSION,
        "K": state.K,
        "tau_us": state.tau_us,
        "layers": [{"id": s.id, "size": s.size, "role": s.role} for s in state.layers],
        "heads": sorted(state.heads),
        "tensors": tensors,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)


def save_checkpoint(path, state: NetworkState, meta: dict | None = None) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(state, meta))
    tmp.replace(path)
    return path


def read_header(path) -> dict:
    raw = Path(path).read_bytes()
    header, _ = _split(raw, path)
    return header


def _split(raw: bytes, path) -> tuple[dict, bytes]:
    if len(raw) < _PREFIX.size:
        raise ParseError("truncated checkpoint", path=path, offset=0)
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise ParseError(f"not a checkpoint (magic {magic!r})", path=path, offset=0)
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", path=path, offset=8)
    start = _PREFIX.size
    try:
        header = json.loads(raw[start : start + hlen])
    except ValueError as exc:
        raise ParseError(f"corrupt header: {exc}", path=path, offset=start) from None
    return header, raw[start + hlen :]


def load_checkpoint(path) -> tuple[NetworkState, dict]:
    """Rebuild the network (with empty activity history) and return ``(state, meta)``."""
    raw = Path(path).read_bytes()
    header, payload = _split(raw, path)
    layers = [LayerSpec(d["id"], d["size"], d["role"]) for d in header["layers"]]
    arrays = {}
    for t in header["tensors"]:
        if t["index_order"] != INDEX_ORDER or t["dtype"] != "<f8":
            raise ParseError(f"tensor {t['name']}: unsupported layout", path=path)
        end = t["offset"] + t["nbytes"]
        if end > len(payload):
            raise ParseError(f"tensor {t['name']}: payload truncated", path=path)
        omega = np.frombuffer(payload, dtype="<f8", count=t["nbytes"] // 8, offset=t["offset"])
        arrays[t["name"]] = DelayedWeightTensor(t["pre"], t["post"], omega.reshape(t["shape"]).astype(np.float64))
    weights = [arrays[f"layer{l + 1}"] for l in range(len(layers) - 1)]
    heads = {
        name: [arrays[f"{name}:{spec.id}"] for spec in layers]
        for name in header["heads"]
    }
    state = NetworkState(layers, weights, heads, header["K"], header["tau_us"])
    return state, header["meta"]
