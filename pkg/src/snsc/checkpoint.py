"""Binary checkpoint archive.

Layout (all integers little-endian)::

    "SNSC" | u32 version | u32 tensor count
    per tensor: u16 name length | name (UTF-8) | u8 rank | u32 dims... | float32 values
    u32 optimizer step | u32 tensor count | tensors as above
    u32 config length | config text (UTF-8)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SNSC"
VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, kind, message):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


@dataclass
class Checkpoint:
    tensors: dict                      # name -> float32 array, in stored order
    config_text: str = ""
    step: int = 0
    optimizer: dict = field(default_factory=dict)

    def to_bytes(self):
        out = [MAGIC, struct.pack("<II", VERSION, len(self.tensors))]
        out += [_encode(k, v) for k, v in self.tensors.items()]
        out.append(struct.pack("<II", self.step, len(self.optimizer)))
        out += [_encode(k, v) for k, v in self.optimizer.items()]
        text = self.config_text.encode("utf-8")
        out.append(struct.pack("<I", len(text)) + text)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, raw):
        r = _Reader(raw)
        if r.take(4) != MAGIC:
            raise CheckpointError("magic", "not an SNSC checkpoint")
        version, count = r.unpack("<II")
        if version != VERSION:
            raise CheckpointError("version", f"unsupported format version {version}")
        tensors = dict(r.tensor() for _ in range(count))
        step, n_opt = r.unpack("<II")
        optimizer = dict(r.tensor() for _ in range(n_opt))
        (n_text,) = r.unpack("<I")
        text = r.take(n_text).decode("utf-8")
        if r.pos != len(raw):
            raise CheckpointError("trailing", f"{len(raw) - r.pos} unexpected trailing bytes")
        return cls(tensors, text, step, optimizer)

    def save(self, path):
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def _encode(name, value):
    a = np.asarray(value, dtype="<f4")
    b = name.encode("utf-8")
    return (struct.pack("<H", len(b)) + b + struct.pack("<B", a.ndim)
            + struct.pack(f"<{a.ndim}I", *a.shape) + a.tobytes())


class _Reader:
    def __init__(self, raw):
        self.raw, self.pos = raw, 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointError("truncated", f"needed {n} bytes at offset {self.pos}")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensor(self):
        (n,) = self.unpack("<H")
        name = self.take(n).decode("utf-8")
        (rank,) = self.unpack("<B")
        dims = self.unpack(f"<{rank}I")
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(dims)
        return name, values.astype(np.float32)


def from_model(model, config_text, optimizer=None):
    opt = {}
    step = 0
    if optimizer is not None:
        step = optimizer.step_count
        for k in optimizer.params:
            opt[f"m.{k}"] = optimizer.m[k]
        for k in optimizer.params:
            opt[f"v.{k}"] = optimizer.v[k]
    tensors = {k: np.asarray(v, dtype=np.float32) for k, v in model.state_dict().items()}
    return Checkpoint(tensors, config_text, step, opt)


def restore_optimizer(ckpt, optimizer):
    m = {k: ckpt.optimizer[f"m.{k}"] for k in optimizer.params}
    v = {k: ckpt.optimizer[f"v.{k}"] for k in optimizer.params}
    optimizer.load_state(ckpt.step, m, v)


def model_from_checkpoint(ckpt):
    from .config import config_from_text
    from .models import build_model

    cfg = config_from_text(ckpt.config_text)
    model = build_model(cfg.model)
    model.load_state_dict(ckpt.tensors)
    return model, cfg
