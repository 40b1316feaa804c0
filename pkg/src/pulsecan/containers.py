"""On-disk formats: frame containers, manifests, bbox files, configs.

Frame container: magic ``DFOP-V\\0``, u16 version, u32 T/H/W, u8 channels
(always 3), u8 fps, then T frames of H*W*3 row-major RGB bytes.

A dataset directory holds one container per clip plus ``manifest.csv``
(``path,identity_id,label,bbox_mode,bbox_path``).  Ground-truth pulse values,
when available, travel in a ``<clip>.pulse.csv`` sidecar next to the
container (``frame_index,value``); bbox sidecars are ``frame_index,x,y,w,h``.
Run configs are flat UTF-8 ``key=value`` files.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .preprocessing import FrameSequence

CONTAINER_MAGIC = b"DFOP-V\0"
CONTAINER_VERSION = 1
MANIFEST_HEADER = ["path", "identity_id", "label", "bbox_mode", "bbox_path"]
PULSE_SUFFIX = ".pulse.csv"


class FileFormatError(ValueError):
    """A data file is malformed or truncated."""


def write_container(path, frames, fps):
    frames = np.asarray(frames, dtype=np.uint8)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise FileFormatError(f"frames must be (T,H,W,3), got {frames.shape}")
    t, h, w, _ = frames.shape
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<H3I2B", CONTAINER_VERSION, t, h, w, 3, int(fps)))
        fh.write(frames.tobytes())


def read_container(path):
    """Returns (frames (T,H,W,3) uint8, fps)."""
    with open(path, "rb") as fh:
        data = fh.read()
    header = len(CONTAINER_MAGIC) + struct.calcsize("<H3I2B")
    if len(data) < header or data[: len(CONTAINER_MAGIC)] != CONTAINER_MAGIC:
        raise FileFormatError(f"{path}: not a frame container")
    version, t, h, w, channels, fps = struct.unpack(
        "<H3I2B", data[len(CONTAINER_MAGIC) : header])
    if version != CONTAINER_VERSION:
        raise FileFormatError(f"{path}: unsupported container version {version}")
    if channels != 3:
        raise FileFormatError(f"{path}: expected 3 channels, got {channels}")
    expected = header + t * h * w * 3
    if len(data) != expected:
        raise FileFormatError(
            f"{path}: payload is {len(data) - header} bytes, expected {t * h * w * 3}")
    frames = np.frombuffer(data[header:], dtype=np.uint8).reshape(t, h, w, 3)
    return frames.copy(), fps


@dataclass
class ManifestEntry:
    path: str
    identity_id: str
    label: str
    bbox_mode: str = "center"  # center | file
    bbox_path: str = ""


def write_manifest(path, entries):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for e in entries:
            writer.writerow([e.path, e.identity_id, e.label, e.bbox_mode, e.bbox_path])


def read_manifest(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows or rows[0] != MANIFEST_HEADER:
        raise FileFormatError(f"{path}: bad manifest header {rows[0] if rows else '(empty)'}")
    entries = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 5:
            raise FileFormatError(f"{path}: line {i} has {len(row)} fields, expected 5")
        if row[2] not in ("real", "fake"):
            raise FileFormatError(f"{path}: line {i} has label {row[2]!r}")
        entries.append(ManifestEntry(*row))
    return entries


def write_pulse_sidecar(path, values):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "value"])
        for i, v in enumerate(values):
            writer.writerow([i, f"{v:.12f}"])


def read_pulse_sidecar(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["frame_index", "value"]:
        raise FileFormatError(f"{path}: bad pulse sidecar header")
    return np.array([float(r[1]) for r in rows[1:]])


def write_bboxes(path, bboxes):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "x", "y", "w", "h"])
        for i, (x, y, w, h) in enumerate(bboxes):
            writer.writerow([i, x, y, w, h])


def read_bboxes(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["frame_index", "x", "y", "w", "h"]:
        raise FileFormatError(f"{path}: bad bbox file header")
    return [tuple(int(v) for v in r[1:]) for r in rows[1:]]


def load_sequence(manifest_dir, entry):
    """Materialize a manifest entry, attaching pulse truth when present."""
    base = Path(manifest_dir)
    clip_path = base / entry.path
    frames, fps = read_container(clip_path)
    pulse_path = clip_path.with_name(clip_path.name + PULSE_SUFFIX)
    pulse = read_pulse_sidecar(pulse_path) if pulse_path.exists() else None
    return FrameSequence(frames, fps, entry.identity_id, entry.label, pulse)


def load_bboxes_for(manifest_dir, entry):
    if entry.bbox_mode == "center":
        return None
    if entry.bbox_mode == "file":
        return read_bboxes(Path(manifest_dir) / entry.bbox_path)
    raise FileFormatError(f"unknown bbox_mode {entry.bbox_mode!r}")


def write_kv_config(path, mapping):
    with open(path, "w") as fh:
        for key, value in mapping.items():
            fh.write(f"{key}={value}\n")


def read_kv_config(path):
    mapping = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FileFormatError(f"{path}: line {lineno} is not key=value")
            key, _, value = line.partition("=")
            mapping[key.strip()] = value.strip()
    return mapping
