"""Binary checkpoint format.

All integers are little-endian u32 unless noted::

    magic "EQSG" | version
    config_len | config text (utf-8, ``key = value`` lines)
    n_params  | n_params  x array record
    n_buffers | n_buffers x array record
    metrics_len | metrics text (utf-8, ``key = value`` lines)

    array record: name_len | name | dtype tag (u8: 1 f32, 2 f64) | rank | extents... | payload
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

MAGIC = b"EQSG"
VERSION = 1
_TAGS = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_DTYPES = {v: k for k, v in _TAGS.items()}


class CheckpointError(ValueError):
    pass


def _u32(f, v: int):
    f.write(struct.pack("<I", v))


def _text(f, s: str):
    b = s.encode("utf-8")
    _u32(f, len(b))
    f.write(b)


def _arrays(f, arrays: List[Tuple[str, np.ndarray]]):
    _u32(f, len(arrays))
    for name, a in arrays:
        a = np.asarray(a)
        dt = a.dtype.newbyteorder("<")
        if dt not in _TAGS:
            raise CheckpointError(f"unsupported dtype {a.dtype} for {name!r}")
        nb = name.encode("utf-8")
        _u32(f, len(nb))
        f.write(nb)
        f.write(struct.pack("<B", _TAGS[dt]))
        _u32(f, a.ndim)
        for e in a.shape:
            _u32(f, e)
        f.write(np.ascontiguousarray(a, dtype=dt).tobytes())


def encode(config_text: str, params: List[Tuple[str, np.ndarray]], buffers: List[Tuple[str, np.ndarray]],
           metrics_text: str) -> bytes:
    f = io.BytesIO()
    f.write(MAGIC)
    _u32(f, VERSION)
    _text(f, config_text)
    _arrays(f, params)
    _arrays(f, buffers)
    _text(f, metrics_text)
    return f.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for _ in range(self.u32()):
            name = self.take(self.u32()).decode("utf-8")
            tag = self.take(1)[0]
            if tag not in _DTYPES:
                raise CheckpointError(f"unknown dtype tag {tag} for {name!r}")
            dt = _DTYPES[tag]
            shape = tuple(self.u32() for _ in range(self.u32()))
            n = int(np.prod(shape)) * dt.itemsize
            out[name] = np.frombuffer(self.take(n), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        return out


def decode(data: bytes):
    """Return ``(config_text, params, buffers, metrics_text)``."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not an EQSG checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})")
    config_text = r.text()
    params = r.arrays()
    buffers = r.arrays()
    metrics_text = r.text()
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return config_text, params, buffers, metrics_text


def model_arrays(model):
    params = [(n, p.data) for n, p in model.named_parameters()]
    buffers = list(model.named_buffers())
    return params, buffers


def save_checkpoint(path, model, config_text: str, metrics_text: str = "") -> Path:
    params, buffers = model_arrays(model)
    path = Path(path)
    path.write_bytes(encode(config_text, params, buffers, metrics_text))
    return path


def load_state(model, params: Dict[str, np.ndarray], buffers: Dict[str, np.ndarray]):
    """Copy arrays into ``model`` in place; names and shapes must match exactly."""
    own_p = dict(model.named_parameters())
    own_b = dict(model.named_buffers())
    if set(own_p) != set(params) or set(own_b) != set(buffers):
        missing = sorted((set(own_p) | set(own_b)) ^ (set(params) | set(buffers)))
        raise CheckpointError(f"checkpoint does not match model architecture: {missing[:5]}")
    for name, t in own_p.items():
        if t.shape != params[name].shape:
            raise CheckpointError(f"{name}: shape {params[name].shape} != {t.shape}")
        t.data = params[name].astype(t.dtype).copy()
    for name, b in own_b.items():
        b[...] = buffers[name]
