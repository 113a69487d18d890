"""Deliberately naive reference implementations used as test oracles.

Nothing here imports the package's algorithms; intervals are plain
``(onset, offset)`` tuples and arithmetic is exact where it matters.
"""

from fractions import Fraction


def frame_set(iv):
    return set(range(iv[0], iv[1] + 1))


def iou_frames(a, b):
    """IoU by explicit frame-set counting."""
    sa, sb = frame_set(a), frame_set(b)
    return len(sa & sb) / len(sa | sb)


def iou_exact(a, b):
    sa, sb = frame_set(a), frame_set(b)
    return Fraction(len(sa & sb), len(sa | sb))


def label_oracle(length, k, intervals, kind):
    out = []
    for j in range(length - k):
        best = max((iou_frames((j, j + k - 1), e) for e in intervals), default=0.0)
        if kind == "linear":
            out.append(best)
        elif kind == "unit_step":
            out.append(1.0 if best > 0 else 0.0)
        else:
            if best <= 0:
                out.append(0.0)
            elif best < 0.25:
                out.append(0.25)
            elif best < 0.5:
                out.append(0.5)
            elif best < 0.75:
                out.append(0.75)
            else:
                out.append(1.0)
    return out


def windowed_mean(values, k):
    out = []
    for i in range(k, len(values) - k):
        total = 0.0
        for j in range(i - k, i + k + 1):
            total += values[j]
        out.append(total / (2 * k + 1))
    return out


def peaks_oracle(values, threshold, k):
    """Plateau-aware strict maxima found by scanning runs, then the fixed greedy rule."""
    n = len(values)
    runs, start = [], 0
    for i in range(1, n + 1):
        if i == n or values[i] != values[start]:
            runs.append((start, i - 1))
            start = i
    cands = []
    for a, b in runs:
        if a == 0 or b == n - 1:
            continue
        if values[a - 1] < values[a] and values[b + 1] < values[b] and values[a] >= threshold:
            cands.append(a)
    accepted = []
    while cands:
        top = max(values[i] for i in cands)
        i = min(c for c in cands if values[c] == top)
        cands.remove(i)
        if all(abs(i - j) >= k for j in accepted):
            accepted.append(i)
    return sorted(accepted)


def match_oracle(preds, gts, thr):
    """``preds``: list of (interval, confidence, peak).  Returns TP flags aligned with ``preds``."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][1], preds[i][2], i))
    free = list(range(len(gts)))
    flags = [False] * len(preds)
    for i in order:
        scored = [(iou_exact(preds[i][0], gts[g]), -g) for g in free]
        if not scored:
            continue
        best, neg_g = max(scored)
        if best >= Fraction(thr).limit_denominator(1000):
            flags[i] = True
            free.remove(-neg_g)
    return flags


def ap_oracle(videos, thr):
    """101-point AP by an explicit rank walk; ``videos`` = [(preds, gts), ...]."""
    ranked = []
    n_gt = 0
    for v, (preds, gts) in enumerate(videos):
        flags = match_oracle(preds, gts, thr)
        n_gt += len(gts)
        ranked += [(-p[1], p[2], v, i, f) for i, (p, f) in enumerate(zip(preds, flags))]
    if n_gt == 0 or not ranked:
        return 0.0
    ranked.sort()
    points = []
    tp = 0
    for r, item in enumerate(ranked, start=1):
        tp += item[4]
        points.append((Fraction(tp, n_gt), Fraction(tp, r)))
    total = Fraction(0)
    for g in range(101):
        level = Fraction(g, 100)
        reach = [prec for rec, prec in points if rec >= level]
        total += max(reach) if reach else 0
    return float(total / 101)
