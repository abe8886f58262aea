"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"MCD1"
    u32 header_len, header bytes (UTF-8 ``key=value`` lines)
    repeated n_arrays times:
        u16 name_len, name bytes
        2-byte dtype tag (b"f8", b"f4", b"i8")
        u8 ndim, ndim x u32 dims
        payload, little-endian, C order

The header carries the model config, ``n_arrays`` and ``param_count``.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import fields

import numpy as np
import torch

from .denoiser import Denoiser, DenoiserConfig

MAGIC = b"MCD1"
_DTYPES = {b"f8": np.dtype("<f8"), b"f4": np.dtype("<f4"), b"i8": np.dtype("<i8")}
_TAGS = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    """Malformed, truncated, or mismatching checkpoint file."""


def _header_text(cfg: DenoiserConfig, dtype: np.dtype, arrays: dict, extra: dict | None) -> bytes:
    lines = [f"{k}={v}" for k, v in cfg.as_dict().items()]
    lines.append(f"dtype={_TAGS[dtype].decode()}")
    lines.append(f"n_arrays={len(arrays)}")
    lines.append(f"param_count={sum(a.size for a in arrays.values())}")
    for k, v in sorted((extra or {}).items()):
        lines.append(f"extra.{k}={v}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def dumps(model: Denoiser, extra: dict | None = None) -> bytes:
    arrays = {}
    for name, t in model.state_dict().items():
        a = t.detach().cpu().numpy()
        arrays[name] = a.astype(a.dtype.newbyteorder("<"), copy=False)
    dtypes = {a.dtype for a in arrays.values()}
    if len(dtypes) != 1 or next(iter(dtypes)) not in _TAGS:
        raise CheckpointError(f"unsupported parameter dtypes {dtypes}")
    header = _header_text(model.cfg, next(iter(dtypes)), arrays, extra)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for name, a in arrays.items():
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(_TAGS[a.dtype])
        buf.write(struct.pack("<B", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
        buf.write(np.ascontiguousarray(a).tobytes())
    return buf.getvalue()


def save_checkpoint(model: Denoiser, path, extra: dict | None = None) -> None:
    data = dumps(model, extra)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_header(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"bad header line {line!r}")
        out[key] = value
    return out


def _config_from_header(header: dict) -> DenoiserConfig:
    kwargs = {}
    for f in fields(DenoiserConfig):
        if f.name not in header:
            raise CheckpointError(f"header missing {f.name}")
        kwargs[f.name] = float(header[f.name]) if f.type in (float, "float") else int(header[f.name])
    return DenoiserConfig(**kwargs)


def loads(data: bytes, expected: DenoiserConfig | None = None) -> tuple[Denoiser, dict]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic, not an MCD1 checkpoint")
    (hlen,) = r.unpack("<I")
    try:
        header = parse_header(r.take(hlen).decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise CheckpointError("header is not UTF-8") from exc
    cfg = _config_from_header(header)
    if expected is not None and expected != cfg:
        raise CheckpointError(f"config mismatch: file has {cfg}, expected {expected}")

    arrays = {}
    for _ in range(int(header.get("n_arrays", -1))):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        tag = r.take(2)
        if tag not in _DTYPES:
            raise CheckpointError(f"unknown dtype tag {tag!r} for {name}")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        dt = _DTYPES[tag]
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(shape)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last array")
    if sum(a.size for a in arrays.values()) != int(header.get("param_count", -1)):
        raise CheckpointError("param_count does not match array payloads")

    model = Denoiser(cfg)
    state = model.state_dict()
    if set(state) != set(arrays):
        raise CheckpointError(f"array names differ from model: {sorted(set(state) ^ set(arrays))}")
    dtype = {b"f8": torch.float64, b"f4": torch.float32}.get(header.get("dtype", "").encode())
    if dtype is None:
        raise CheckpointError(f"unsupported parameter dtype {header.get('dtype')}")
    model.to(dtype)
    new_state = {}
    for name, ref in model.state_dict().items():
        a = arrays[name]
        if tuple(a.shape) != tuple(ref.shape):
            raise CheckpointError(f"{name}: shape {a.shape} != {tuple(ref.shape)}")
        new_state[name] = torch.from_numpy(a.astype(a.dtype.newbyteorder("="), copy=True))
    model.load_state_dict(new_state)
    return model, header


def load_checkpoint(path, expected: DenoiserConfig | None = None) -> Denoiser:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    return loads(data, expected)[0]


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic, not an MCD1 checkpoint")
    (hlen,) = r.unpack("<I")
    return parse_header(r.take(hlen).decode("utf-8"))
