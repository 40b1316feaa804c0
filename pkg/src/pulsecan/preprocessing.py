"""Frame normalization: crop/resize plus the two branch inputs.

The motion input is the ratio-form normalized difference of consecutive
frames, (I(t) - I(t-1)) / (I(t) + I(t-1) + eps), which cancels multiplicative
illumination; the appearance input is the current frame standardized to zero
mean and unit standard deviation.  Both are computed on [0,1]-scaled pixels
and returned channels-first as (3, L, L) float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MOTION_EPS = 1e-6
STD_GUARD = 1e-8

LABELS = ("real", "fake", "unlabeled")


class PreprocessError(ValueError):
    """Invalid frame geometry or bounding box."""


@dataclass
class FrameSequence:
    """A labeled clip: (T, H, W, 3) uint8 frames plus metadata."""

    frames: np.ndarray
    fps: int
    identity_id: str
    label: str = "unlabeled"
    pulse_truth: np.ndarray | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        if self.frames.ndim != 4 or self.frames.shape[3] != 3:
            raise PreprocessError(f"frames must be (T,H,W,3), got {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise PreprocessError("a sequence needs at least 2 frames")
        if self.label not in LABELS:
            raise PreprocessError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.pulse_truth is not None:
            self.pulse_truth = np.asarray(self.pulse_truth, dtype=np.float64)
            if self.pulse_truth.shape != (self.frames.shape[0],):
                raise PreprocessError("pulse_truth must have one value per frame")

    @property
    def n_frames(self):
        return self.frames.shape[0]


@dataclass
class ModelInputPair:
    motion: np.ndarray
    appearance: np.ndarray
    frame_index: int


def crop_and_resize(frame, bbox, side, frame_index=None):
    """Crop ``bbox`` = (x, y, w, h) and bilinearly resize to side x side.

    Uses half-pixel sample centers, so a full-frame bbox at the native size
    is an identity copy.  Output is uint8 (round-to-nearest).
    """
    frame = np.asarray(frame, dtype=np.uint8)
    h, w = frame.shape[:2]
    x, y, bw, bh = bbox
    if bw < 1 or bh < 1 or x < 0 or y < 0 or x + bw > w or y + bh > h:
        where = "" if frame_index is None else f" at frame {frame_index}"
        raise PreprocessError(f"bbox {bbox} out of bounds for {w}x{h} frame{where}")
    crop = frame[y : y + bh, x : x + bw].astype(np.float64)

    def axis_coords(src_len):
        c = (np.arange(side) + 0.5) * (src_len / side) - 0.5
        c = np.clip(c, 0.0, src_len - 1.0)
        lo = np.floor(c).astype(np.intp)
        hi = np.minimum(lo + 1, src_len - 1)
        return lo, hi, c - lo

    y0, y1, fy = axis_coords(bh)
    x0, x1, fx = axis_coords(bw)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = crop[y0][:, x0] * (1 - fx) + crop[y0][:, x1] * fx
    bot = crop[y1][:, x0] * (1 - fx) + crop[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _standardize(values):
    mean = values.mean()
    std = values.std()
    if std < STD_GUARD:
        return np.zeros_like(values)
    return (values - mean) / std


def motion_frame(current, previous):
    """Standardized ratio difference of two L x L uint8 frames -> (3, L, L)."""
    cur = np.asarray(current, dtype=np.float64)
    prev = np.asarray(previous, dtype=np.float64)
    if cur.shape != prev.shape:
        raise PreprocessError(f"frame extents differ: {cur.shape} vs {prev.shape}")
    cur = cur / 255.0
    prev = prev / 255.0
    diff = (cur - prev) / (cur + prev + MOTION_EPS)
    return _standardize(diff).transpose(2, 0, 1)


def appearance_frame(current):
    """Current frame scaled to [0,1] and standardized -> (3, L, L)."""
    cur = np.asarray(current, dtype=np.float64) / 255.0
    return _standardize(cur).transpose(2, 0, 1)


def default_bbox(height, width):
    """Centered square crop of side min(H, W)."""
    side = min(height, width)
    return ((width - side) // 2, (height - side) // 2, side, side)


def sequence_to_inputs(seq, bboxes, side):
    """One ModelInputPair per frame index t in [1, T-1].

    ``bboxes`` is a per-frame (x, y, w, h) list or None for a centered
    square crop.
    """
    t_total, h, w = seq.frames.shape[:3]
    if bboxes is None:
        bboxes = [default_bbox(h, w)] * t_total
    if len(bboxes) != t_total:
        raise PreprocessError(
            f"got {len(bboxes)} bboxes for {t_total} frames")
    cropped = [
        crop_and_resize(seq.frames[t], bboxes[t], side, frame_index=t)
        for t in range(t_total)
    ]
    pairs = []
    for t in range(1, t_total):
        pairs.append(ModelInputPair(
            motion=motion_frame(cropped[t], cropped[t - 1]),
            appearance=appearance_frame(cropped[t]),
            frame_index=t,
        ))
    return pairs
