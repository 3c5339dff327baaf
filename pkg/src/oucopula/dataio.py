"""Dataset file formats: the OUD1 binary container and external ingestion.

OUD1 layout, all integers little-endian:

  bytes 0-3   magic ``OUD1``
  bytes 4-23  u32 version (currently 1), n, C, H, W  (24-byte header)
  per record  OS image C*H*W float32, OD image C*H*W float32,
              4 float64 labels  (2*C*H*W*4 + 32 bytes each)
  trailer     u32 length + UTF-8 JSON metadata (provenance)

Images are quantized to float32 on disk (and held as float32 in memory);
labels stay float64 end to end. Metadata JSON is written with sorted keys
so identical containers serialize to identical bytes.

External ingestion reads a manifest CSV with header
``id,os_path,od_path,os_se,os_al,od_se,od_al`` whose image paths (relative
to the manifest) point at binary PGM (P5) or PPM (P6) files; pixel values
are scaled by the file's maxval into [0, 1].
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .data import DatasetContainer, PatientRecord
from .errors import FormatError

__all__ = ["write_container", "read_container", "read_manifest", "read_netpbm"]

MAGIC = b"OUD1"
VERSION = 1
MANIFEST_COLUMNS = ("id", "os_path", "od_path", "os_se", "os_al", "od_se", "od_al")


def write_container(dataset: DatasetContainer, path) -> None:
    c, h, w = dataset.image_shape
    n = len(dataset)
    meta = json.dumps(dataset.provenance, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<5I", VERSION, n, c, h, w))
        for r in dataset.records:
            f.write(np.ascontiguousarray(r.os_image, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(r.od_image, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(r.labels, dtype="<f8").tobytes())
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)


def read_container(path) -> DatasetContainer:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 24:
        raise FormatError(f"{path}: file is {len(raw)} bytes, smaller than the 24-byte header")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at byte 0, expected {MAGIC!r}")
    version, n, c, h, w = struct.unpack("<5I", raw[4:24])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    if n == 0:
        raise FormatError(f"{path}: container holds zero records")
    img = c * h * w * 4
    rec = 2 * img + 32
    body_end = 24 + n * rec
    if len(raw) < body_end:
        raise FormatError(
            f"{path}: truncated at byte {len(raw)}, need {body_end} bytes "
            f"for {n} records of {rec} bytes")
    records = []
    for i in range(n):
        at = 24 + i * rec
        os_img = np.frombuffer(raw, dtype="<f4", count=c * h * w, offset=at)
        od_img = np.frombuffer(raw, dtype="<f4", count=c * h * w, offset=at + img)
        labels = np.frombuffer(raw, dtype="<f8", count=4, offset=at + 2 * img)
        if not np.all(np.isfinite(labels)):
            raise FormatError(f"{path}: record {i} at byte {at} has non-finite labels")
        records.append(PatientRecord(
            os_image=os_img.reshape(c, h, w).astype(np.float32),
            od_image=od_img.reshape(c, h, w).astype(np.float32),
            labels=labels.astype(np.float64),
        ))
    if len(raw) < body_end + 4:
        raise FormatError(f"{path}: missing metadata length at byte {body_end}")
    (meta_len,) = struct.unpack("<I", raw[body_end:body_end + 4])
    meta_end = body_end + 4 + meta_len
    if len(raw) < meta_end:
        raise FormatError(
            f"{path}: metadata truncated at byte {len(raw)}, expected {meta_end}")
    if len(raw) > meta_end:
        raise FormatError(f"{path}: {len(raw) - meta_end} trailing bytes at byte {meta_end}")
    try:
        provenance = json.loads(raw[body_end + 4:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad metadata JSON at byte {body_end + 4}: {exc}") from exc
    return DatasetContainer(records, provenance)


# ----------------------------------------------------------------- netpbm


def read_netpbm(path) -> np.ndarray:
    """Binary PGM (P5) or PPM (P6) to a float32 (C, H, W) array in [0, 1]."""
    with open(path, "rb") as f:
        raw = f.read()

    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos:pos + 1]
            if ch == b"#":
                while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header at byte {start}")
        return raw[start:pos]

    magic = token()
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported netpbm magic {magic!r}, need P5 or P6")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise FormatError(f"{path}: malformed netpbm header: {exc}") from exc
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: maxval {maxval} outside 1..65535")
    pos += 1  # single whitespace byte after maxval
    channels = 1 if magic == b"P5" else 3
    per = 2 if maxval > 255 else 1
    need = width * height * channels * per
    if len(raw) - pos < need:
        raise FormatError(
            f"{path}: pixel data truncated at byte {len(raw)}, need {pos + need}")
    dtype = ">u2" if per == 2 else np.uint8
    pixels = np.frombuffer(raw, dtype=dtype, count=width * height * channels, offset=pos)
    img = pixels.reshape(height, width, channels).astype(np.float32) / np.float32(maxval)
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def read_manifest(path) -> DatasetContainer:
    """Paired-eye container from a manifest CSV plus netpbm image files."""
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: manifest is empty") from None
        if tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
            raise FormatError(
                f"{path}: manifest header {header} != {list(MANIFEST_COLUMNS)}")
        records = []
        ids = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise FormatError(f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} "
                                  f"fields, got {len(row)}")
            pid, os_rel, od_rel = row[0], row[1], row[2]
            try:
                labels = np.array([float(v) for v in row[3:7]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad label value: {exc}") from exc
            os_file = path.parent / os_rel
            od_file = path.parent / od_rel
            for file in (os_file, od_file):
                if not file.exists():
                    raise FormatError(f"{path}:{lineno}: image file {file} not found")
            records.append(PatientRecord(
                os_image=read_netpbm(os_file),
                od_image=read_netpbm(od_file),
                labels=labels,
            ))
            ids.append(pid)
    if not records:
        raise FormatError(f"{path}: manifest has a header but no rows")
    return DatasetContainer(records, {"kind": "external", "manifest": str(path), "ids": ids})
