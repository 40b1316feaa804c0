"""Frame-level scoring and metrics: AUC, accuracy, timelines, ROC export.

AUC is the rank-based (Mann-Whitney) form with ties counted one half, so it
matches brute-force pairwise counting exactly.  Video-level aggregation is
the median of non-overlapping short-window means, which rides out transient
per-frame threshold crossings.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import model as can
from .preprocessing import sequence_to_inputs


@dataclass
class ScoreTimeline:
    video_id: str
    frame_indices: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.frame_indices = np.asarray(self.frame_indices, dtype=np.intp)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.frame_indices.shape != self.scores.shape:
            raise ValueError("frame_indices and scores must have equal length")
        if np.any(np.diff(self.frame_indices) <= 0):
            raise ValueError("frame_indices must be strictly increasing")


@dataclass
class EvalReport:
    auc: float
    accuracy: float
    threshold: float
    n_real_frames: int
    n_fake_frames: int
    split: str
    video_auc: float = float("nan")
    aggregation_window: int = 1

    def as_mapping(self):
        return {
            "auc": f"{self.auc:.12f}",
            "accuracy": f"{self.accuracy:.12f}",
            "threshold": f"{self.threshold:.12f}",
            "n_real_frames": str(self.n_real_frames),
            "n_fake_frames": str(self.n_fake_frames),
            "split": self.split,
            "video_auc": f"{self.video_auc:.12f}",
            "aggregation_window": str(self.aggregation_window),
        }


def _rank_average(values):
    """Ranks 1..n with ties sharing the average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc(scores, labels):
    """P(random positive outranks random negative), ties counted half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both classes present")
    ranks = _rank_average(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def accuracy_at_threshold(scores, labels, threshold):
    """Fraction with (score >= threshold) == (label == 1); ties are positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ValueError("accuracy needs at least one score")
    return float(np.mean((scores >= threshold) == (labels == 1)))


def aggregate_video(timeline, window_frames):
    """Median of non-overlapping window means (trailing partial included)."""
    if window_frames < 1:
        raise ValueError("window_frames must be >= 1")
    scores = timeline.scores
    if scores.size == 0:
        raise ValueError("empty timeline")
    means = [scores[i : i + window_frames].mean()
             for i in range(0, scores.size, window_frames)]
    return float(np.median(means))


def score_video(weights, seq, bboxes, side, video_id="video", batch_size=256):
    """One detector score per consecutive frame pair of the clip."""
    if weights.head != "classification":
        raise ValueError("score_video needs a classification head")
    pairs = sequence_to_inputs(seq, bboxes, side)
    motion = np.stack([p.motion for p in pairs])
    appearance = np.stack([p.appearance for p in pairs])
    scores = np.empty(len(pairs))
    for start in range(0, len(pairs), batch_size):
        sl = slice(start, start + batch_size)
        scores[sl] = can.forward_batch(motion[sl], appearance[sl], weights)
    return ScoreTimeline(video_id, np.array([p.frame_index for p in pairs]), scores)


def evaluate_split(weights, eval_clips, threshold=0.5, window=15,
                   bboxes_per_clip=None, split="evaluation", executor=None):
    """Frame-level AUC/accuracy over pooled frames, plus video-level AUC.

    Returns (EvalReport, list[ScoreTimeline]).  ``executor`` optionally runs
    per-video scoring in parallel; results are ordered by clip regardless.
    """
    side = weights.config.input_side

    def score_one(ci):
        clip = eval_clips[ci]
        bboxes = None if bboxes_per_clip is None else bboxes_per_clip[ci]
        return score_video(weights, clip, bboxes, side,
                           video_id=f"{clip.identity_id}/{ci}")

    indices = range(len(eval_clips))
    if executor is None:
        timelines = [score_one(ci) for ci in indices]
    else:
        timelines = list(executor.map(score_one, indices))

    frame_scores = np.concatenate([t.scores for t in timelines])
    frame_labels = np.concatenate([
        np.full(t.scores.size, 1 if clip.label == "real" else 0)
        for t, clip in zip(timelines, eval_clips)
    ])
    video_scores = np.array([aggregate_video(t, window) for t in timelines])
    video_labels = np.array([1 if c.label == "real" else 0 for c in eval_clips])
    report = EvalReport(
        auc=auc(frame_scores, frame_labels),
        accuracy=accuracy_at_threshold(frame_scores, frame_labels, threshold),
        threshold=threshold,
        n_real_frames=int(frame_labels.sum()),
        n_fake_frames=int((frame_labels == 0).sum()),
        split=split,
        video_auc=auc(video_scores, video_labels),
        aggregation_window=window,
    )
    return report, timelines


def _write_svg_polyline(path, xs, ys, x_label, y_label, width=640, height=360):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    pad = 40
    x_span = xs.max() - xs.min() or 1.0
    y_span = ys.max() - ys.min() or 1.0
    px = pad + (xs - xs.min()) / x_span * (width - 2 * pad)
    py = height - pad - (ys - ys.min()) / y_span * (height - 2 * pad)
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
    with open(path, "w") as fh:
        fh.write(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n'
            f'<polyline points="{points}" fill="none" stroke="#1f6fb2" '
            f'stroke-width="1.5"/>\n'
            f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" '
            f'font-size="12">{x_label}</text>\n'
            f'<text x="12" y="{height / 2:.0f}" font-size="12" '
            f'transform="rotate(-90 12 {height / 2:.0f})" '
            f'text-anchor="middle">{y_label}</text>\n'
            "</svg>\n")


def export_timeline(timeline, path):
    """Write ``frame_index,score`` CSV plus an SVG rendering alongside."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "score"])
        for i, s in zip(timeline.frame_indices, timeline.scores):
            writer.writerow([int(i), f"{s:.12f}"])
    svg_path = str(path) + ".svg"
    _write_svg_polyline(svg_path, timeline.frame_indices, timeline.scores,
                        "frame index", "score")


def roc_points(scores, labels):
    """(threshold, tpr, fpr) rows over all distinct thresholds, with the
    (0,0) and (1,1) endpoints."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc needs both classes present")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    rows = [(float("inf"), 0.0, 0.0)]
    tp = fp = 0
    for i in range(len(scores)):
        if sorted_labels[i] == 1:
            tp += 1
        else:
            fp += 1
        last = i + 1 == len(scores) or sorted_scores[i + 1] != sorted_scores[i]
        if last:
            rows.append((float(sorted_scores[i]), tp / n_pos, fp / n_neg))
    return rows


def export_roc(scores, labels, path):
    rows = roc_points(scores, labels)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "tpr", "fpr"])
        for thr, tpr, fpr in rows:
            writer.writerow([f"{thr:.12f}" if np.isfinite(thr) else "inf",
                             f"{tpr:.12f}", f"{fpr:.12f}"])
    fprs = [r[2] for r in rows]
    tprs = [r[1] for r in rows]
    _write_svg_polyline(str(path) + ".svg", fprs, tprs,
                        "false positive rate", "true positive rate")
