"""Binary checkpoint format for named parameter groups.

Layout: 4-byte magic ``PCK1``, a little-endian uint32 giving the length of a
UTF-8 JSON header, the header itself, then the raw tensor payloads.  The
header records the format version, a caller-supplied manifest (typically the
network configuration), and the name and shape of every tensor in storage
order.  Payloads are little-endian float64, C order.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from .backbone import NetworkConfig
from .encoders import EncoderConfig
from .errors import ContractError

MAGIC = b"PCK1"
FORMAT_VERSION = 1


def config_to_dict(config):
    return dataclasses.asdict(config)


def network_config_from_dict(d):
    return NetworkConfig(**d)


def encoder_config_from_dict(d):
    return EncoderConfig(**d)


def save_checkpoint(path, named_arrays, manifest=None):
    """Write named float64 arrays plus a JSON manifest to ``path``."""
    if isinstance(named_arrays, dict):
        items = list(named_arrays.items())
    else:
        items = [(name, np.asarray(arr)) for name, arr in named_arrays]
    header = {
        "format_version": FORMAT_VERSION,
        "manifest": manifest or {},
        "tensors": [{"name": name, "shape": list(np.asarray(arr).shape)} for name, arr in items],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in items:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (name -> array, manifest)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ContractError(f"{path} is not a checkpoint (bad magic {magic!r})")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode("utf-8"))
        if header["format_version"] != FORMAT_VERSION:
            raise ContractError(f"unsupported checkpoint version {header['format_version']}")
        arrays = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ContractError(f"checkpoint truncated while reading {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    return arrays, header["manifest"]
