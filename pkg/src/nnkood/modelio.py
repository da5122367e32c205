"""Binary model files.

Layout (all integers little-endian)::

    b"NNKODM1"                magic
    u32                       format version
    str                       method tag
    str, f8                   kernel kind, sigma
    u32                       number of sections
    per section:
        str                   name
        u8                    dtype code (0 = f8, 1 = i8)
        u32, u64 * ndim       shape
        raw little-endian values

where ``str`` is a u32 byte length followed by UTF-8 bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from .detectors import DetectorModel
from .errors import FormatError
from .kernels import KernelSpec

MAGIC = b"NNKODM1"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_CODES = {"f": 0, "i": 1}


def _pack_str(s):
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def save_model(model: DetectorModel, path) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(model.method),
             _pack_str(model.kernel.kind), struct.pack("<d", model.kernel.sigma),
             struct.pack("<I", len(model.payload))]
    for name, arr in model.payload.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype.kind)
        if code is None:
            raise FormatError(f"section {name!r}: unsupported dtype {arr.dtype}")
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        parts += [_pack_str(name), struct.pack("<BI", code, data.ndim),
                  struct.pack(f"<{data.ndim}Q", *data.shape), data.tobytes()]
    with open(path, "wb") as f:
        f.write(b"".join(parts))


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated model file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self):
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.path}: corrupt string") from exc


def load_model(path) -> DetectorModel:
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: not a model file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    method = r.string()
    kind = r.string()
    (sigma,) = r.unpack("<d")
    (n_sections,) = r.unpack("<I")
    payload = {}
    for _ in range(n_sections):
        name = r.string()
        code, ndim = r.unpack("<BI")
        if code not in _DTYPES:
            raise FormatError(f"{path}: section {name!r} has unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}Q")
        dtype = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        payload[name] = np.frombuffer(r.take(count * dtype.itemsize), dtype=dtype).reshape(shape).copy()
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: trailing bytes after the last section")
    try:
        return DetectorModel(method, KernelSpec(kind, sigma), payload)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
