"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"VNLM"                       magic
    u32   format version (1)
    u64   metadata length, then UTF-8 JSON metadata
    u32   tensor count
    per tensor:
        u32 name length, UTF-8 name
        u32 rank, rank x u64 extents
        raw little-endian float32 payload

Loading parses and validates the whole file before anything is returned, so
a truncated or unknown-version file never yields a partial checkpoint.
"""

import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .ndkernel import ContractError

__all__ = ["CheckpointError", "ModelCheckpoint", "MAGIC", "FORMAT_VERSION", "atomic_write"]

MAGIC = b"VNLM"
FORMAT_VERSION = 1
_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    """The checkpoint file is malformed, truncated or of an unsupported version."""


def atomic_write(path, data, mode="wb"):
    """Write ``data`` to ``path`` through a temporary file and an atomic rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        text = {} if "b" in mode else {"encoding": "utf-8", "newline": ""}
        with os.fdopen(fd, mode, **text) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class ModelCheckpoint:
    """Learned tensors plus everything needed to run inference stand-alone."""

    config: object
    tensors: dict
    stats: object = None
    appliance: object = None
    seed: int = 0
    format_version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model, stats=None, appliance=None, seed=0):
        tensors = {k: np.array(v, dtype=np.float32) for k, v in model.state_dict().items()}
        return cls(model.config, tensors, stats, appliance, seed)

    def to_model(self, dtype=np.float32):
        from .vae import VaeNilm

        model = VaeNilm(self.config, seed=0, dtype=dtype)
        model.load_state_dict(self.tensors)
        return model

    # -- serialization ---------------------------------------------------------

    def metadata(self):
        return {
            "model_config": self.config.to_dict(),
            "stats": None if self.stats is None else self.stats.to_dict(),
            "appliance": None if self.appliance is None else self.appliance.to_dict(),
            "seed": int(self.seed),
            "extra": self.extra,
        }

    def to_bytes(self):
        buf = io.BytesIO()
        meta = json.dumps(self.metadata(), sort_keys=True).encode("utf-8")
        buf.write(MAGIC)
        buf.write(struct.pack("<I", FORMAT_VERSION))
        buf.write(struct.pack("<Q", len(meta)))
        buf.write(meta)
        buf.write(struct.pack("<I", len(self.tensors)))
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name], dtype=_F32)
            raw_name = name.encode("utf-8")
            buf.write(struct.pack("<I", len(raw_name)))
            buf.write(raw_name)
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        from .pipeline import ApplianceSpec, StandardizationStats
        from .vae import ModelConfig

        r = _Reader(data)
        if r.take(4) != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (version,) = r.unpack("<I")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (meta_len,) = r.unpack("<Q")
        try:
            meta = json.loads(r.take(meta_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt metadata: {exc}") from None
        (count,) = r.unpack("<I")
        tensors = {}
        for _ in range(count):
            (name_len,) = r.unpack("<I")
            name = r.take(name_len).decode("utf-8")
            if name in tensors:
                raise CheckpointError(f"duplicate tensor name {name!r}")
            (rank,) = r.unpack("<I")
            shape = r.unpack(f"<{rank}Q") if rank else ()
            n = int(np.prod(shape, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(r.take(4 * n), dtype=_F32).reshape(shape)
            tensors[name] = arr.astype(np.float32)
        if r.remaining:
            raise CheckpointError(f"{r.remaining} trailing bytes after tensor section")
        try:
            config = ModelConfig.from_dict(meta["model_config"])
            stats = None if meta.get("stats") is None else StandardizationStats(**meta["stats"])
            appliance = None if meta.get("appliance") is None else ApplianceSpec(**meta["appliance"])
        except (KeyError, TypeError, ContractError) as exc:
            raise CheckpointError(f"invalid metadata: {exc}") from None
        return cls(config, tensors, stats, appliance, int(meta.get("seed", 0)), version,
                   meta.get("extra") or {})

    def save(self, path):
        atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    @property
    def remaining(self):
        return len(self.data) - self.pos

    def take(self, n):
        if n > self.remaining:
            raise CheckpointError("truncated checkpoint")
        out = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))
