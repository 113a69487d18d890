"""Score smoothing, adaptive threshold, peak picking and interval construction."""

from dataclasses import dataclass

import numpy as np

from .pseudolabel import FrameInterval


@dataclass
class ScoreSeries:
    """Per-frame scores; ``scores[i]`` belongs to video frame ``offset + i``."""

    scores: np.ndarray
    offset: int = 0
    video_id: str = ""
    expression_class: str = "macro"

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 1:
            raise ValueError("scores must be one-dimensional")
        if self.offset < 0:
            raise ValueError("offset must be >= 0")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    def __len__(self):
        return len(self.scores)


@dataclass
class SpotResult:
    peak_frame: int
    interval: FrameInterval
    confidence: float
    threshold: float
    clamped: bool = False


def smooth_scores(raw, k):
    """Centred moving average over ``2k + 1`` raw scores (out of place).

    The result has ``len(raw) - 2k`` entries and its offset moves forward by ``k``.
    """
    n = len(raw.scores)
    if n < 2 * k + 1:
        raise ValueError(f"series of length {n} is too short to smooth with k = {k}")
    width = 2 * k + 1
    win = np.lib.stride_tricks.sliding_window_view(raw.scores, width)
    smoothed = win.sum(axis=1) / width
    return ScoreSeries(smoothed, raw.offset + k, raw.video_id, raw.expression_class)


def compute_threshold(series, p):
    """``T = mean + p * (max - mean)`` over the whole series."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    s = series.scores if isinstance(series, ScoreSeries) else np.asarray(series, dtype=np.float64)
    if s.size == 0:
        raise ValueError("cannot threshold an empty series")
    mean, top = s.mean(), s.max()
    if p == 1.0:
        return float(top)
    # rounding of mean + (top - mean) may overshoot top by an ulp
    return float(min(mean + p * (top - mean), top))


def local_maxima(values):
    """Indices of strict local maxima; a plateau counts once, at its first index.

    End points never qualify.
    """
    s = np.asarray(values, dtype=np.float64)
    out = []
    n = len(s)
    i = 1
    while i < n - 1:
        if s[i] > s[i - 1]:
            j = i
            while j + 1 < n and s[j + 1] == s[i]:
                j += 1
            if j + 1 < n and s[j + 1] < s[i]:
                out.append(i)
            i = j + 1
        else:
            i += 1
    return out


def detect_peaks(series, threshold, k):
    """Local maxima at or above ``threshold`` kept greedily, highest first, at distance >= k.

    Equal values favour the earlier index.  Returns positions within ``series``
    in ascending order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    s = series.scores if isinstance(series, ScoreSeries) else np.asarray(series, dtype=np.float64)
    cands = [i for i in local_maxima(s) if s[i] >= threshold]
    cands.sort(key=lambda i: (-s[i], i))
    kept = []
    for i in cands:
        if all(abs(i - j) >= k for j in kept):
            kept.append(i)
    return sorted(kept)


def spot(raw, k, p, video_length=None):
    """Smooth, threshold and pick peaks; each peak ``P`` yields ``[P - k, P + k]``.

    Intervals are in video frame coordinates, clamped to ``[0, video_length - 1]``;
    ``video_length`` defaults to ``raw.offset + len(raw) + k`` (raw scores stop k
    frames before the end).
    """
    if video_length is None:
        video_length = raw.offset + len(raw) + k
    smoothed = smooth_scores(raw, k)
    t = compute_threshold(smoothed, p)
    out = []
    for i in detect_peaks(smoothed, t, k):
        peak = smoothed.offset + i
        lo, hi = peak - k, peak + k
        clo, chi = max(lo, 0), min(hi, video_length - 1)
        out.append(SpotResult(peak, FrameInterval(clo, chi), float(smoothed.scores[i]), t,
                              clamped=(clo, chi) != (lo, hi)))
    return out
