"""Model checkpoint container.

Byte layout, all integers little-endian:

  magic ``OUCM`` (4 bytes), version u32 (currently 1),
  meta_len u32 + UTF-8 JSON metadata (model config echo, seed,
  optional copula parameters, optional extra run fields),
  count u32, then per array:
    key_len u32 + UTF-8 key, ndim u8, ndim x u32 shape, f64 data.

Array keys are parameter paths plus ``<bn path>.running_mean`` /
``.running_var`` entries. Malformed files are rejected with the byte
offset where parsing failed.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .backbone import BackboneConfig, BiChannelModel, build_model
from .copula import CopulaParams
from .errors import FormatError

__all__ = ["save_checkpoint", "load_checkpoint", "read_checkpoint_meta"]

MAGIC = b"OUCM"
VERSION = 1


def save_checkpoint(model: BiChannelModel, path, copula: CopulaParams | None = None,
                    extra: dict | None = None) -> None:
    meta = {
        "config": model.config.to_dict(),
        "seed": model.seed,
        "copula": copula.to_dict() if copula is not None else None,
        "extra": extra or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    arrays = model.state_arrays()
    chunks = [MAGIC, struct.pack("<I", VERSION),
              struct.pack("<I", len(meta_bytes)), meta_bytes,
              struct.pack("<I", len(arrays))]
    for key in sorted(arrays):
        arr = np.ascontiguousarray(arrays[key], dtype="<f8")
        kb = key.encode("utf-8")
        chunks.append(struct.pack("<I", len(kb)))
        chunks.append(kb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


class _Cursor:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated at byte {self.pos} "
                f"(needed {n} more, {len(self.data) - self.pos} available)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def _parse(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        cur = _Cursor(f.read(), path)
    magic = cur.take(4)
    if magic != MAGIC:
        raise FormatError(
            f"{path}: bad magic {magic!r} at byte 0, expected {MAGIC!r}")
    version = cur.u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    meta_at = cur.pos
    try:
        meta = json.loads(cur.take(cur.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad metadata block at byte {meta_at}: {exc}") from exc
    arrays: dict[str, np.ndarray] = {}
    count = cur.u32()
    for _ in range(count):
        at = cur.pos
        key = cur.take(cur.u32()).decode("utf-8")
        ndim = cur.u8()
        if ndim > 4:
            raise FormatError(f"{path}: array {key!r} at byte {at} has ndim {ndim} > 4")
        shape = struct.unpack(f"<{ndim}I", cur.take(4 * ndim))
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(cur.take(8 * n), dtype="<f8").reshape(shape)
        arrays[key] = arr.astype(np.float64)
    if cur.pos != len(cur.data):
        raise FormatError(
            f"{path}: {len(cur.data) - cur.pos} trailing bytes at byte {cur.pos}")
    return meta, arrays


def read_checkpoint_meta(path) -> dict:
    """Metadata only (config echo, seed, copula, extra)."""
    return _parse(path)[0]


def load_checkpoint(path) -> tuple[BiChannelModel, CopulaParams | None, dict]:
    """Rebuild the model from the config echo and restore all state."""
    meta, arrays = _parse(path)
    try:
        config = BackboneConfig.from_dict(meta["config"])
        model = build_model(config, int(meta["seed"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: metadata does not describe a model: {exc}") from exc
    model.load_state_arrays(arrays)
    copula = CopulaParams.from_dict(meta["copula"]) if meta.get("copula") else None
    return model, copula, meta.get("extra", {})
