"""Binary checkpoint container.

Layout: magic, format version, a JSON header (model config echo, master
seed, free-form extras), then each tensor as name / dtype / shape /
row-major bytes, and a trailing CRC-32 of everything before it.  Loading
verifies the CRC and round-trips values bit-exactly.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import DataError
from .tape import ParamSlot

MAGIC = b"WEAREC\x00"
FORMAT_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


def save_checkpoint(
    path: str | Path,
    params: list[ParamSlot],
    config: dict,
    seed: int,
    extra: dict | None = None,
) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "seed": seed,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header_bytes)), header_bytes]
    chunks.append(struct.pack("<I", len(params)))
    for p in params:
        dtype = np.dtype(p.value.dtype)
        if dtype not in _DTYPE_CODES:
            raise DataError(f"unsupported checkpoint dtype for {p.name}: {dtype}")
        name = p.name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[dtype], p.value.ndim))
        chunks.append(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        chunks.append(np.ascontiguousarray(p.value).tobytes())
    payload = b"".join(chunks)
    blob = payload + struct.pack("<I", zlib.crc32(payload))
    Path(path).write_bytes(blob)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (header, {name: tensor}); raises DataError on any corruption."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < len(MAGIC) + 12 or not blob.startswith(MAGIC):
        raise DataError(f"not a checkpoint file: {path}")
    payload, (stored_crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != stored_crc:
        raise DataError(f"checkpoint integrity check failed (CRC mismatch): {path}")

    offset = len(MAGIC)

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(payload):
            raise DataError(f"truncated checkpoint: {path}")
        values = struct.unpack_from(fmt, payload, offset)
        offset += size
        return values

    version, header_len = take("<II")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format version {version}")
    header = json.loads(payload[offset : offset + header_len].decode("utf-8"))
    offset += header_len

    (count,) = take("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = payload[offset : offset + name_len].decode("utf-8")
        offset += name_len
        dtype_code, ndim = take("<BB")
        if dtype_code not in _CODE_DTYPES:
            raise DataError(f"unknown dtype code {dtype_code} in {path}")
        shape = take(f"<{ndim}I")
        dtype = _CODE_DTYPES[dtype_code]
        nbytes = int(np.prod(shape)) * dtype.itemsize if ndim else dtype.itemsize
        raw = payload[offset : offset + nbytes]
        if len(raw) != nbytes:
            raise DataError(f"truncated tensor data for {name} in {path}")
        offset += nbytes
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return header, tensors
