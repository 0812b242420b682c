"""Model checkpoint container.

Layout: magic ``NPCK``, u32 format version, u64 header length, then a
UTF-8 JSON header followed by raw little-endian float32 tensor payloads.
The header records the layer architecture, a tensor manifest with byte
offsets relative to the end of the header, and free-form metadata.
Weights round-trip bit exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .layers import Model, layer_from_spec

_MAGIC = b"NPCK"
_VERSION = 1


def save_checkpoint(path, model: Model, metadata: dict | None = None) -> None:
    tensors = []
    payloads = []
    offset = 0
    for name, _, _, arr in model.named_params():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(data)
        offset += len(data)
    header = {
        "architecture": model.architecture(),
        "tensors": tensors,
        "metadata": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(blob)))
        fh.write(blob)
        for data in payloads:
            fh.write(data)


def load_checkpoint(path, dtype=np.float32) -> tuple[Model, dict]:
    """Rebuilds the model from its stored architecture; returns metadata too."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        body = fh.read()
    model = Model([layer_from_spec(s) for s in header["architecture"]], dtype=dtype)
    state = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(body):
            raise ValueError("checkpoint payload truncated")
        state[entry["name"]] = np.frombuffer(body[start:end], dtype="<f4").reshape(shape)
    model.init_params(0)
    expected = {name for name, _, _, _ in model.named_params()}
    if expected != set(state):
        raise ValueError("tensor manifest does not match architecture")
    model.load_state(state)
    return model, header["metadata"]
