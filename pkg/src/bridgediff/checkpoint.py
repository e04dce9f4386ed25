"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic            8 bytes  b"BDIFCKPT"
    version          u32
    header_len       u32
    header           JSON: step, config_digest, payload_sha256
    payload:
        config block     u64 length + canonical JSON of the resolved config
        tensor table     named tensors (trainable weights)
        optimizer table  named tensors (AdamW moments and step counters)
        rng block        u64 + torch generator state bytes,
                         u64 + numpy bit-generator state JSON

Tensor table entry: u16 name length, name, u8 dtype-code length, numpy dtype
code (e.g. "<f4"), u8 ndim, ndim x u64 dims, u64 byte count, raw C-order data.
Everything is written in sorted-name order, so save -> load -> save is
byte-identical. The header carries a SHA-256 of the payload; mismatch on load
is an integrity error.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"BDIFCKPT"
FORMAT_VERSION = 1


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def config_digest(config: dict) -> str:
    return hashlib.sha256(_canonical_json(config)).hexdigest()


def _write_block(buf, data: bytes):
    buf.write(struct.pack("<Q", len(data)))
    buf.write(data)


def _read_block(buf) -> bytes:
    (n,) = struct.unpack("<Q", buf.read(8))
    return buf.read(n)


def _write_tensor_table(buf, tensors: dict[str, torch.Tensor]):
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name].detach().cpu().numpy())
        nb = name.encode("utf-8")
        code = arr.dtype.str.encode("ascii")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", len(code)))
        buf.write(code)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        raw = arr.tobytes()
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)


def _read_tensor_table(buf) -> dict[str, torch.Tensor]:
    (count,) = struct.unpack("<I", buf.read(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", buf.read(2))
        name = buf.read(nlen).decode("utf-8")
        (clen,) = struct.unpack("<B", buf.read(1))
        code = buf.read(clen).decode("ascii")
        (ndim,) = struct.unpack("<B", buf.read(1))
        shape = [struct.unpack("<Q", buf.read(8))[0] for _ in range(ndim)]
        (nbytes,) = struct.unpack("<Q", buf.read(8))
        arr = np.frombuffer(buf.read(nbytes), dtype=np.dtype(code)).reshape(shape)
        out[name] = torch.from_numpy(arr.copy())
    return out


@dataclass
class CheckpointRecord:
    step: int
    config: dict
    tensors: dict
    optimizer_tensors: dict
    torch_rng_state: bytes
    numpy_rng_state: dict


def save_checkpoint(path, *, step: int, config: dict,
                    tensors: dict[str, torch.Tensor],
                    optimizer_tensors: dict[str, torch.Tensor],
                    torch_rng_state: bytes, numpy_rng_state: dict) -> None:
    payload = io.BytesIO()
    _write_block(payload, _canonical_json(config))
    _write_tensor_table(payload, tensors)
    _write_tensor_table(payload, optimizer_tensors)
    _write_block(payload, torch_rng_state)
    _write_block(payload, _canonical_json(numpy_rng_state))
    body = payload.getvalue()
    header = _canonical_json({
        "step": step,
        "config_digest": config_digest(config),
        "payload_sha256": hashlib.sha256(body).hexdigest(),
    })
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(body)


def load_checkpoint(path) -> CheckpointRecord:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", blob[8:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})"
        )
    (hlen,) = struct.unpack("<I", blob[12:16])
    try:
        header = json.loads(blob[16:16 + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    body = blob[16 + hlen:]
    if hashlib.sha256(body).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload integrity check failed")
    buf = io.BytesIO(body)
    config = json.loads(_read_block(buf))
    tensors = _read_tensor_table(buf)
    opt = _read_tensor_table(buf)
    torch_state = _read_block(buf)
    np_state = json.loads(_read_block(buf))
    return CheckpointRecord(header["step"], config, tensors, opt, torch_state, np_state)
