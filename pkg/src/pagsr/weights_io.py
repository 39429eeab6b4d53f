"""Binary weight files.

Layout (little-endian)::

    b"PAGW" | u16 version | u32 l, C, D, G, Cg | u32 entry count
    per entry: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 data
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelWeights, layer_shapes
from .optim import ParameterStore

MAGIC = b"PAGW"
VERSION = 1


class WeightFileError(ValueError):
    pass


class MagicError(WeightFileError):
    pass


class VersionError(WeightFileError):
    pass


class TruncationError(WeightFileError):
    pass


class DimMismatchError(WeightFileError):
    pass


class ConfigMismatchError(WeightFileError):
    pass


def _config_tuple(cfg: ModelConfig) -> tuple[int, ...]:
    return (cfg.upsample_exponent, cfg.base_channels, cfg.rdb_layers,
            cfg.growth_rate, cfg.guidance_channels)


def encode(mw: ModelWeights) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<5I", *_config_tuple(mw.config)),
             struct.pack("<I", len(mw.params))]
    for name, p in mw.params.items():
        nb = name.encode("utf-8")
        a = p.value.data
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(parts)


def save_weights(mw: ModelWeights, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(mw))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.off = buf, 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise TruncationError(f"weight file truncated at byte {self.off} (needed {n} more)")
        b = self.buf[self.off:self.off + n]
        self.off += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes, expect: ModelConfig | None = None) -> ModelWeights:
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise MagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    r.take(4)
    (ver,) = r.unpack("<H")
    if ver != VERSION:
        raise VersionError(f"unsupported weight file version {ver} (expected {VERSION})")
    l, C, D, G, Cg = r.unpack("<5I")
    cfg = ModelConfig(l, C, D, G, Cg)
    if expect is not None and _config_tuple(expect) != (l, C, D, G, Cg):
        raise ConfigMismatchError(
            f"file config (l={l}, C={C}, D={D}, G={G}, Cg={Cg}) does not match model config "
            f"(l={expect.upsample_exponent}, C={expect.base_channels}, D={expect.rdb_layers}, "
            f"G={expect.growth_rate}, Cg={expect.guidance_channels})")
    if expect is not None:
        cfg = expect
    (count,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        n = int(np.prod(dims)) if rank else 1
        arrays[name] = np.frombuffer(r.take(4 * n), "<f4").reshape(dims).astype(np.float32)
    if r.off != len(buf):
        raise WeightFileError(f"{len(buf) - r.off} trailing bytes after last entry")

    expected = {}
    for lname, shp in layer_shapes(cfg).items():
        expected[f"{lname}.weight"] = shp
        expected[f"{lname}.bias"] = (shp[0],)
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))[:3]
        extra = sorted(set(arrays) - set(expected))[:3]
        raise DimMismatchError(f"entry names disagree with config: missing {missing}, unexpected {extra}")
    for name, a in arrays.items():
        if a.shape != expected[name]:
            raise DimMismatchError(f"{name}: file dims {a.shape} but config implies {expected[name]}")
    mw = ModelWeights(cfg, ParameterStore())
    for name, a in arrays.items():
        mw.params.add(name, a)
    return mw


def load_weights(path, expect: ModelConfig | None = None) -> ModelWeights:
    return decode(Path(path).read_bytes(), expect)


def checkpoint_roundtrip(mw: ModelWeights, path) -> ModelWeights:
    save_weights(mw, path)
    return load_weights(path, mw.config)
