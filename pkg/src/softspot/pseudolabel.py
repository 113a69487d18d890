"""Sliding-window IoU pseudo-labels for every frame-pair position of a video."""

from dataclasses import dataclass
from enum import Enum

import numpy as np


@dataclass(frozen=True, order=True)
class FrameInterval:
    """Inclusive, 0-based ``[onset, offset]`` frame range."""

    onset: int
    offset: int

    def __post_init__(self):
        if self.onset > self.offset:
            raise ValueError(f"onset {self.onset} > offset {self.offset}")

    def __len__(self):
        return self.offset - self.onset + 1


class LabelFunction(str, Enum):
    LINEAR = "linear"
    STEP4 = "step4"
    UNIT_STEP = "unit_step"

    @classmethod
    def parse(cls, name):
        aliases = {"step": cls.STEP4, "unit": cls.UNIT_STEP}
        if isinstance(name, cls):
            return name
        return aliases.get(name) or cls(name)


@dataclass
class LabelSet:
    scores: np.ndarray
    expression_class: str


def half_window(n):
    """``k = floor((N + 1) / 2)`` for an average expression length of ``N`` frames."""
    if n < 1:
        raise ValueError("average expression length must be >= 1")
    return int((n + 1) // 2)


def interval_iou(a, b):
    """IoU of two inclusive frame intervals, counted in frames."""
    inter = min(a.offset, b.offset) - max(a.onset, b.onset) + 1
    if inter <= 0:
        return 0.0
    return inter / (len(a) + len(b) - inter)


def apply_label_function(f, iou):
    f = LabelFunction.parse(f)
    if f is LabelFunction.LINEAR:
        return float(iou)
    if iou <= 0:
        return 0.0
    if f is LabelFunction.UNIT_STEP:
        return 1.0
    if iou < 0.25:
        return 0.25
    if iou < 0.5:
        return 0.5
    if iou < 0.75:
        return 0.75
    return 1.0


def window_ious(video_length, k, expressions):
    """Max IoU between each window ``[j, j+k-1]`` (``j < L-k``) and any interval."""
    n = video_length - k
    j = np.arange(n)
    best = np.zeros(n)
    for e in expressions:
        inter = np.minimum(j + k - 1, e.offset) - np.maximum(j, e.onset) + 1
        inter = np.maximum(inter, 0)
        iou = inter / (k + len(e) - inter)
        best = np.maximum(best, iou)
    return best


def generate_labels(video_length, k, expressions, f=LabelFunction.UNIT_STEP, expression_class="macro"):
    """Pseudo-score ``s_j = g(max_E IoU(W_j, E))`` for every window position."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if video_length <= k:
        raise ValueError(f"video length {video_length} must exceed k = {k}")
    for e in expressions:
        if e.onset < 0 or e.offset >= video_length:
            raise ValueError(f"interval {e} outside video of length {video_length}")
    ious = window_ious(video_length, k, expressions)
    f = LabelFunction.parse(f)
    if f is LabelFunction.LINEAR:
        scores = ious
    elif f is LabelFunction.UNIT_STEP:
        scores = (ious > 0).astype(np.float64)
    else:
        scores = np.select([ious <= 0, ious < 0.25, ious < 0.5, ious < 0.75],
                           [0.0, 0.25, 0.5, 0.75], 1.0)
    return LabelSet(scores, expression_class)
