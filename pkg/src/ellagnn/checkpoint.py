"""Binary model checkpoints: ``ELGM`` header, float32 parameter blocks, JSON trailer."""

import json
import struct

import numpy as np

from .gnn import ModelParameters

MAGIC = b"ELGM"
VERSION = 1
_HEAD = struct.Struct("<4sII")
_TRAILER_LEN = struct.Struct("<Q")


def save_checkpoint(path, params: ModelParameters, meta: dict) -> None:
    dims = params.dims
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, params.num_layers))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        for W, b in params.layers:
            fh.write(W.astype("<f4").tobytes())
            fh.write(b.astype("<f4").tobytes())
        trailer = json.dumps(meta, sort_keys=True).encode("utf-8")
        fh.write(_TRAILER_LEN.pack(len(trailer)))
        fh.write(trailer)


def load_checkpoint(path):
    """Returns ``(params, meta)``. Parameters come back as float64."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, num_layers = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (magic {magic!r})")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = _HEAD.size
    dims = struct.unpack_from(f"<{num_layers + 1}I", raw, off)
    off += 4 * (num_layers + 1)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = np.frombuffer(raw, "<f4", fan_in * fan_out, off).reshape(fan_in, fan_out)
        off += 4 * fan_in * fan_out
        b = np.frombuffer(raw, "<f4", fan_out, off)
        off += 4 * fan_out
        layers.append((W.astype(np.float64), b.astype(np.float64)))
    (n,) = _TRAILER_LEN.unpack_from(raw, off)
    off += _TRAILER_LEN.size
    meta = json.loads(raw[off:off + n].decode("utf-8"))
    return ModelParameters(layers), meta
