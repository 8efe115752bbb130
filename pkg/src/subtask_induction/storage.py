"""Binary containers for checkpoints and masks.

Layout::

    magic  b"SIND"            4 bytes
    version                   uint32 little-endian
    header length             uint32 little-endian
    header                    UTF-8 JSON (kind, config, groups)
    payload                   per group, in header order

Checkpoint groups are raw little-endian float32.  Mask groups are packed
1-bit-per-weight (``numpy.packbits``, big bit order) with their kept count in
the header.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

from .model import ModelConfig
from .sparsify import BinaryMask

MAGIC = b"SIND"
VERSION = 1


class FormatError(ValueError):
    pass


def _write(path: Path, header: dict, payloads: list[bytes]) -> None:
    head = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(head)) + head)
        for p in payloads:
            fh.write(p)
    os.replace(tmp, path)


def _read(path: Path, kind: str) -> tuple[dict, memoryview]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a container file")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    header = json.loads(raw[12:12 + hlen].decode())
    if header.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind}, found {header.get('kind')}")
    return header, memoryview(raw)[12 + hlen:]


def save_checkpoint(path, params: Mapping[str, np.ndarray], config: ModelConfig,
                    meta: dict | None = None) -> None:
    groups, payloads = [], []
    for name, arr in params.items():
        groups.append({"name": name, "shape": list(arr.shape)})
        payloads.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    _write(path, {"kind": "checkpoint", "config": config.to_dict(), "groups": groups,
                  "meta": meta or {}}, payloads)


def load_checkpoint(path) -> tuple["OrderedDict[str, np.ndarray]", ModelConfig, dict]:
    header, body = _read(path, "checkpoint")
    params: OrderedDict[str, np.ndarray] = OrderedDict()
    offset = 0
    for g in header["groups"]:
        n = int(np.prod(g["shape"], dtype=np.int64))
        chunk = body[offset:offset + 4 * n]
        if len(chunk) != 4 * n:
            raise FormatError(f"{path}: truncated payload for {g['name']}")
        params[g["name"]] = np.frombuffer(chunk, dtype="<f4").astype(np.float32).reshape(g["shape"])
        offset += 4 * n
    if offset != len(body):
        raise FormatError(f"{path}: trailing bytes")
    return params, ModelConfig.from_dict(header["config"]), header.get("meta", {})


def save_mask(path, mask: BinaryMask, meta: dict | None = None) -> None:
    groups, payloads = [], []
    for name, m in mask.masks.items():
        packed = np.packbits(m.reshape(-1)).tobytes()
        groups.append({"name": name, "shape": list(m.shape), "kept": int(m.sum()),
                       "nbytes": len(packed)})
        payloads.append(packed)
    _write(path, {"kind": "mask", "groups": groups, "meta": meta or {},
                  "hash": mask_hash(mask)}, payloads)


def load_mask(path) -> tuple[BinaryMask, dict]:
    header, body = _read(path, "mask")
    out = OrderedDict()
    offset = 0
    for g in header["groups"]:
        n = int(np.prod(g["shape"], dtype=np.int64))
        nbytes = g["nbytes"]
        bits = np.unpackbits(np.frombuffer(body[offset:offset + nbytes], dtype=np.uint8),
                             count=n)
        m = bits.astype(bool).reshape(g["shape"])
        if int(m.sum()) != g["kept"]:
            raise FormatError(f"{path}: kept count mismatch for {g['name']}")
        out[g["name"]] = m
        offset += nbytes
    mask = BinaryMask(out)
    if header.get("hash") and header["hash"] != mask_hash(mask):
        raise FormatError(f"{path}: content hash mismatch")
    return mask, header.get("meta", {})


def mask_hash(mask: BinaryMask) -> str:
    """Content hash used to pin which reference a control mask came from."""
    h = hashlib.sha256()
    for name, m in mask.masks.items():
        h.update(name.encode())
        h.update(str(m.shape).encode())
        h.update(np.packbits(m.reshape(-1)).tobytes())
    return h.hexdigest()[:16]


def params_hash(params: Mapping[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name, arr in params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return h.hexdigest()[:16]
