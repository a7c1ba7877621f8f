"""Model checkpoints: spec + parameter manifest + CRC-checked payloads.

Layout (little-endian): magic "AVC1" | version u16 | header_len u32 |
header JSON | per parameter: payload bytes, crc32 u32.  The header carries
the model spec, and for each parameter its name, shape, dtype, trainable
flag, and batch-norm pinning/moving statistics.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib

import numpy as np

from . import graph
from .errors import ChecksumError, FormatError, StorageError, TruncationError, VersionError
from .layers import BatchNorm

MAGIC = b"AVC1"
VERSION = 1


def _walk_bn(model):
    return [lyr for lyr in model._walk_layers() if isinstance(lyr, BatchNorm)]


def save_checkpoint(model, path):
    params = model.params()
    entries = []
    payloads = []
    for p in params:
        arr = np.ascontiguousarray(p.values)
        entries.append(
            {
                "name": p.name,
                "role": p.role,
                "shape": list(arr.shape),
                "dtype": str(arr.dtype),
                "trainable": bool(p.trainable),
                "l2": p.l2,
            }
        )
        payloads.append(arr.tobytes())
    bn_state = []
    for i, bn in enumerate(_walk_bn(model)):
        for tag, arr in (("mean", bn.moving_mean), ("var", bn.moving_var)):
            arr = np.ascontiguousarray(arr)
            entries.append(
                {
                    "name": f"bn{i}.moving_{tag}",
                    "role": "bn_state",
                    "shape": list(arr.shape),
                    "dtype": str(arr.dtype),
                    "trainable": False,
                }
            )
            payloads.append(arr.tobytes())
        bn_state.append({"pinned": bn.pinned})

    header = json.dumps(
        {"spec": model.spec.to_dict(), "params": entries, "bn": bn_state}
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(header)), header]
    for payload in payloads:
        parts.append(payload)
        parts.append(struct.pack("<I", zlib.crc32(payload)))
    data = b"".join(parts)

    dirname = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".ckpt-")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path):
    """Rebuild a model from a checkpoint, restoring flags and BN state."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    version, header_len = struct.unpack("<HI", data[4:10])
    if version != VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[10 : 10 + header_len].decode("utf-8"))
    pos = 10 + header_len

    spec = graph.spec_from_dict(header["spec"])
    model = graph.build(spec, seed=0)

    arrays = []
    for entry in header["params"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * np.dtype(entry["dtype"]).itemsize
        if pos + nbytes + 4 > len(data):
            raise TruncationError(f"{path}: truncated parameter {entry['name']}")
        payload = data[pos : pos + nbytes]
        (crc,) = struct.unpack("<I", data[pos + nbytes : pos + nbytes + 4])
        if zlib.crc32(payload) != crc:
            raise ChecksumError(f"{path}: CRC mismatch for {entry['name']}")
        arrays.append(np.frombuffer(payload, dtype=entry["dtype"]).reshape(entry["shape"]).copy())
        pos += nbytes + 4

    params = model.params()
    n_params = len(params)
    if len([e for e in header["params"] if e["role"] != "bn_state"]) != n_params:
        raise FormatError(f"{path}: parameter count does not match spec")
    for p, entry, arr in zip(params, header["params"][:n_params], arrays[:n_params]):
        if list(p.values.shape) != entry["shape"]:
            raise FormatError(f"{path}: shape mismatch for {entry['name']}")
        p.values = arr
        p.trainable = entry["trainable"]
        p.l2 = entry.get("l2", 0.0)

    bn_layers = _walk_bn(model)
    state_arrays = arrays[n_params:]
    for i, bn in enumerate(bn_layers):
        bn.moving_mean = state_arrays[2 * i]
        bn.moving_var = state_arrays[2 * i + 1]
        bn.pinned = header["bn"][i]["pinned"]

    # Re-sync conv layers whose ParamTensor arrays were replaced
    def _resync(m):
        for lyr in m._walk_layers():
            if hasattr(lyr, "kernel"):
                from .volume import Kernel

                lyr.kernel = Kernel(lyr.w.values, lyr.b.values)

    _resync(model)
    return model
