"""Synthetic skin-toned clips with a controllable blood-volume-pulse signal.

Real clips modulate an elliptical face region with a periodic color change
(green-weighted, physiologically plausible band); fake clips render the
identical scene with the in-face modulation removed.  With zero pulse
amplitude the two labels are pixel-identical, so any detector signal must
come from the pulse itself.  Everything is a pure function of (spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .preprocessing import FrameSequence

CHANNEL_WEIGHTS = np.array([0.3, 1.0, 0.5])
HEART_RATE_BAND = (0.7, 4.0)
BORDER_STRIP = 4  # pixels, used only when background_pulse is set


@dataclass(frozen=True)
class PulseParams:
    heart_rate: float  # Hz
    amplitude: float  # fraction of full pixel scale
    phase: float = 0.0

    def __post_init__(self):
        if not HEART_RATE_BAND[0] <= self.heart_rate <= HEART_RATE_BAND[1]:
            raise ValueError(
                f"heart_rate {self.heart_rate} outside band {HEART_RATE_BAND}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")


@dataclass(frozen=True)
class SyntheticVideoSpec:
    identity_id: str
    label: str  # real | fake
    pulse: PulseParams
    seed: int
    duration: float = 6.0
    fps: int = 15
    frame_side: int = 64
    base_skin_color: tuple = (190.0, 140.0, 110.0)
    noise_std: float = 0.5
    drift_amplitude: float = 0.0
    drift_frequency: float = 0.1
    # When set, the pulse also modulates a thin background strip in both
    # real and fake clips (a swapped face pasted on a live scene).
    background_pulse: bool = False

    def __post_init__(self):
        if self.label not in ("real", "fake"):
            raise ValueError(f"label must be real or fake, got {self.label!r}")
        if round(self.duration * self.fps) < 2:
            raise ValueError("duration * fps must give at least 2 frames")


def bvp_signal(t, p):
    """Pulse waveform: fundamental plus a half-amplitude second harmonic."""
    t = np.asarray(t, dtype=np.float64)
    w = 2.0 * np.pi * p.heart_rate
    return np.sin(w * t + p.phase) + 0.5 * np.sin(2.0 * w * t + 2.0 * p.phase)


def face_ellipse_mask(side):
    """Boolean (side, side) ellipse covering the central face region."""
    yy, xx = np.mgrid[0:side, 0:side]
    cy = cx = (side - 1) / 2.0
    ry = 0.38 * side
    rx = 0.30 * side
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def border_strip_mask(side, width=BORDER_STRIP):
    mask = np.ones((side, side), dtype=bool)
    mask[width:-width, width:-width] = False
    return mask


def render_video(spec):
    """Render a clip; deterministic for a given spec (seed included)."""
    rng = np.random.default_rng(spec.seed)
    side = spec.frame_side
    t_total = int(round(spec.duration * spec.fps))
    times = np.arange(t_total) / spec.fps
    bvp = bvp_signal(times, spec.pulse)

    base = np.broadcast_to(
        np.asarray(spec.base_skin_color, dtype=np.float64), (side, side, 3)).copy()
    face = face_ellipse_mask(side)
    modulation = 255.0 * spec.pulse.amplitude * bvp[:, None] * CHANNEL_WEIGHTS[None, :]

    scene = np.broadcast_to(base, (t_total, side, side, 3)).copy()
    if spec.label == "real":
        scene[:, face, :] += modulation[:, None, :]
    if spec.background_pulse:
        strip = border_strip_mask(side)
        scene[:, strip, :] += modulation[:, None, :]

    gain = 1.0 + spec.drift_amplitude * np.sin(
        2.0 * np.pi * spec.drift_frequency * times)
    scene *= gain[:, None, None, None]
    # Noise is drawn identically for both labels so zero-amplitude real and
    # fake clips stay pixel-identical.
    scene += spec.noise_std * rng.standard_normal(scene.shape)
    frames = np.clip(np.rint(scene), 0, 255).astype(np.uint8)

    pulse_truth = bvp if spec.label == "real" else np.zeros(t_total)
    return FrameSequence(frames, spec.fps, spec.identity_id, spec.label, pulse_truth)


@dataclass(frozen=True)
class DatasetParams:
    """Knobs for a whole generated dataset."""

    n_identities: int = 40
    clips_per_identity: int = 4
    real_fraction: float = 0.5
    duration: float = 6.0
    fps: int = 15
    frame_side: int = 64
    pulse_amplitude: float = 0.015
    noise_std: float = 0.5
    drift_amplitude: float = 0.0
    drift_frequency: float = 0.1
    background_pulse: bool = False
    hr_range: tuple = (0.9, 2.4)
    skin_ranges: tuple = field(
        default=((160.0, 220.0), (110.0, 170.0), (85.0, 140.0)))


def generate_dataset(params, base_seed):
    """One FrameSequence spec list per clip, rendered; identity-grouped.

    Each identity gets a fixed skin color and heart rate; labels are assigned
    deterministically per identity so real_fraction holds exactly.
    """
    if params.n_identities < 2:
        raise ValueError("need at least 2 identities")
    rng = np.random.default_rng(base_seed)
    n_real = int(round(params.real_fraction * params.clips_per_identity))
    clips = []
    for ident in range(params.n_identities):
        identity_id = f"id{ident:03d}"
        color = tuple(rng.uniform(lo, hi) for lo, hi in params.skin_ranges)
        heart_rate = rng.uniform(*params.hr_range)
        for j in range(params.clips_per_identity):
            label = "real" if j < n_real else "fake"
            spec = SyntheticVideoSpec(
                identity_id=identity_id,
                label=label,
                pulse=PulseParams(
                    heart_rate=heart_rate,
                    amplitude=params.pulse_amplitude,
                    phase=rng.uniform(0.0, 2.0 * np.pi),
                ),
                seed=int(rng.integers(0, 2**63)),
                duration=params.duration,
                fps=params.fps,
                frame_side=params.frame_side,
                base_skin_color=color,
                noise_std=params.noise_std,
                drift_amplitude=params.drift_amplitude,
                drift_frequency=params.drift_frequency,
                background_pulse=params.background_pulse,
            )
            clips.append(render_video(spec))
    return clips


def split_by_identity(dataset, dev_fraction, seed):
    """Identity-disjoint (dev, eval) partition; clips travel with identity."""
    identities = []
    for clip in dataset:
        if clip.identity_id not in identities:
            identities.append(clip.identity_id)
    if len(identities) < 2:
        raise ValueError("split_by_identity needs at least 2 identities")
    order = list(identities)
    np.random.default_rng(seed).shuffle(order)
    n_dev = int(np.ceil(dev_fraction * len(order)))
    dev_ids = set(order[:n_dev])
    dev = [c for c in dataset if c.identity_id in dev_ids]
    ev = [c for c in dataset if c.identity_id not in dev_ids]
    return dev, ev
