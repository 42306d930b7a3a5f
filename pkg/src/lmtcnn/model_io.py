"""Binary model file: ``.lmtc``.

The byte layout is documented in ``docs/FORMAT.md``. All integers are
little-endian, tensor values are float32 in row-major order, and the file
ends with a CRC-32 over every preceding byte.
"""
from __future__ import annotations

import io
import os
import struct
import zlib
from fractions import Fraction

import numpy as np

from .errors import BadMagic, ChecksumMismatch, IoFailure, TruncatedFile, UnsupportedVersion
from .network import ModelParams, NetworkConfig

MAGIC = b"LMTC"
VERSION = 1

_HEADER = struct.Struct("<4sH")
# input_size, alpha1 num/den, alpha2 num/den, conv1/pw1/pw2 base channels,
# fc width, age classes, gender classes, tensor count
_CONFIG = struct.Struct("<13I")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


def file_size_for(config: NetworkConfig) -> int:
    size = _HEADER.size + _CONFIG.size + _U32.size
    for name, shape in config.param_shapes().items():
        n = 1
        for e in shape:
            n *= e
        size += _U16.size + len(name.encode()) + 1 + 4 * len(shape) + 4 * n
    return size


def encode(params: ModelParams) -> bytes:
    cfg = params.config
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION))
    buf.write(_CONFIG.pack(
        cfg.input_size,
        cfg.alpha1.numerator, cfg.alpha1.denominator,
        cfg.alpha2.numerator, cfg.alpha2.denominator,
        *cfg.base_channels,
        cfg.fc_width, cfg.age_classes, cfg.gender_classes,
        len(params.tensors), 0,
    ))
    for name, t in params.tensors.items():
        raw = name.encode("utf-8")
        buf.write(_U16.pack(len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    body = buf.getvalue()
    return body + _U32.pack(zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))


def decode(data: bytes) -> ModelParams:
    if len(data) < _HEADER.size:
        raise TruncatedFile("file shorter than its header")
    magic, version = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"format version {version} (this build reads {VERSION})")
    if len(data) < _HEADER.size + _CONFIG.size + _U32.size:
        raise TruncatedFile("file ends inside the config block")
    (crc,) = _U32.unpack_from(data, len(data) - 4)
    body = data[:-4]
    crc_ok = zlib.crc32(body) == crc
    r = _Reader(body)
    r.take(_HEADER.size)
    (size, a1n, a1d, a2n, a2d, c1, b1, b2, fc, n_age, n_gender, n_tensors, _) = r.unpack(_CONFIG)
    tensors = {}
    try:
        for _ in range(n_tensors):
            (nlen,) = r.unpack(_U16)
            name = r.take(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", r.take(1))
            shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
            count = int(np.prod(shape, dtype=np.int64))
            values = np.frombuffer(r.take(4 * count), dtype="<f4")
            tensors[name] = values.astype(np.float32).reshape(shape)
    except UnicodeDecodeError as exc:
        raise ChecksumMismatch(f"corrupt tensor name: {exc}") from None
    if r.pos != len(body) or not crc_ok:
        raise ChecksumMismatch(f"stored CRC {crc:08x}, computed {zlib.crc32(body):08x}")
    config = NetworkConfig(size, Fraction(a1n, a1d), Fraction(a2n, a2d), (c1, b1, b2), fc,
                           n_age, n_gender)
    return ModelParams(config, tensors)


def save_model(params: ModelParams, destination) -> int:
    """Write ``params`` to a path or binary file object. Returns bytes written."""
    data = encode(params)
    try:
        if hasattr(destination, "write"):
            destination.write(data)
        else:
            tmp = f"{os.fspath(destination)}.tmp"
            with open(tmp, "wb") as fh:
                fh.write(data)
            os.replace(tmp, destination)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return len(data)


def load_model(source) -> ModelParams:
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    return decode(data)
