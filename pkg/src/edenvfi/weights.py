"""Binary weights file.

Layout (all integers unsigned 32-bit little-endian)::

    b"EDVF" | version | config_len | config (UTF-8 ``key = value`` lines)
    then, repeated until end of file:
    name_len | name (UTF-8) | rank | shape[0..rank) | float32 LE data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, WeightsFormatError
from .model import EdenVFI, ModelConfig, build_model

MAGIC = b"EDVF"
VERSION = 1
_U32 = struct.Struct("<I")


def save_weights(model: EdenVFI, path) -> None:
    """Write every parameter as little-endian float32 (float64 models are narrowed)."""
    cfg = model.cfg.to_text().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_U32.pack(VERSION))
        fh.write(_U32.pack(len(cfg)))
        fh.write(cfg)
        for name, p in model.named_parameters():
            raw = name.encode("utf-8")
            fh.write(_U32.pack(len(raw)))
            fh.write(raw)
            fh.write(_U32.pack(p.ndim))
            for dim in p.shape:
                fh.write(_U32.pack(dim))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    @property
    def done(self) -> bool:
        return self.pos >= len(self.buf)

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightsFormatError(f"truncated file while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def load_weights(path) -> EdenVFI:
    """Rebuild a model from ``path``; raises :class:`WeightsFormatError` on any inconsistency."""
    rd = _Reader(Path(path).read_bytes())
    if rd.take(4, "magic") != MAGIC:
        raise WeightsFormatError("bad magic")
    version = rd.u32("version")
    if version != VERSION:
        raise WeightsFormatError(f"unsupported version {version}")
    cfg_len = rd.u32("config length")
    try:
        cfg = ModelConfig.from_text(rd.take(cfg_len, "config").decode("utf-8"))
    except (UnicodeDecodeError, ConfigError) as exc:
        raise WeightsFormatError(f"bad config block: {exc}") from exc

    model = build_model(cfg, seed=0)
    params = dict(model.named_parameters())
    seen = set()
    while not rd.done:
        name = rd.take(rd.u32("entry name length"), "entry name").decode("utf-8", errors="replace")
        rank = rd.u32(f"rank of {name}")
        shape = tuple(rd.u32(f"shape of {name}") for _ in range(rank))
        if name not in params:
            raise WeightsFormatError(f"entry {name} is not a parameter of the configured model")
        target = params[name]
        if shape != target.shape:
            raise WeightsFormatError(f"entry {name} has shape {shape}, config expects {target.shape}")
        count = int(np.prod(shape))
        data = np.frombuffer(rd.take(4 * count, f"data of {name}"), dtype="<f4").reshape(shape)
        target.data[...] = data
        seen.add(name)
    missing = [n for n in params if n not in seen]
    if missing:
        raise WeightsFormatError(f"entry {missing[0]} missing ({len(missing)} parameters absent)")
    return model
