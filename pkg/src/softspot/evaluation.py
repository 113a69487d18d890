"""Interval matching, F1 / AP@[.5:.95] metrics, LOSO protocol and threshold sweeps."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .pseudolabel import FrameInterval, LabelFunction, generate_labels, interval_iou
from .softnet import TrainConfig, build_training_set, predict_scores, train
from .spotting import spot

log = logging.getLogger(__name__)

CLASSES = ("macro", "micro")
AP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
P_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))
RECALL_POINTS = 101


@dataclass
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other):
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def n_gt(self):
        return self.tp + self.fn


def _interval(p):
    return p if isinstance(p, FrameInterval) else p.interval


def _rank_key(p, i):
    conf = getattr(p, "confidence", 0.0)
    return (-conf, getattr(p, "peak_frame", i), i)


def match_intervals(predictions, ground_truth, iou_threshold=0.5):
    """Greedy one-to-one matching in descending confidence.

    Each prediction takes the still-unmatched ground-truth interval with the
    highest IoU (earliest on ties) when that IoU reaches ``iou_threshold``.
    Returns ``(MatchCounts, flags)`` where ``flags[i]`` says whether
    ``predictions[i]`` is a true positive.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    gts = list(ground_truth)
    used = [False] * len(gts)
    flags = [False] * len(predictions)
    order = sorted(range(len(predictions)), key=lambda i: _rank_key(predictions[i], i))
    for i in order:
        iv = _interval(predictions[i])
        best, best_iou = -1, -1.0
        for g, gt in enumerate(gts):
            if used[g]:
                continue
            iou = interval_iou(iv, gt)
            if iou > best_iou:
                best, best_iou = g, iou
        if best >= 0 and best_iou >= iou_threshold:
            used[best] = True
            flags[i] = True
    tp = sum(flags)
    return MatchCounts(tp, len(predictions) - tp, len(gts) - tp), flags


def precision_recall_f1(counts):
    p = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    r = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def pooled_average_precision(videos, iou_threshold):
    """101-point interpolated AP over ``[(predictions, ground_truth), ...]`` pooled across videos.

    Predictions are matched within their own video, then ranked globally by
    confidence (ties: earlier peak frame, then earlier video).  With no ground
    truth at all the AP is 0.
    """
    ranked = []
    n_gt = 0
    for v, (preds, gts) in enumerate(videos):
        _, flags = match_intervals(preds, gts, iou_threshold)
        n_gt += len(gts)
        for i, (p, tp) in enumerate(zip(preds, flags)):
            conf, frame, _ = _rank_key(p, i)
            ranked.append((conf, frame, v, i, tp))
    if n_gt == 0 or not ranked:
        return 0.0
    ranked.sort()
    tp_cum = np.cumsum([r[4] for r in ranked])
    precision = tp_cum / np.arange(1, len(ranked) + 1)
    # envelope: best precision at any rank whose recall reaches the grid point
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for g in range(RECALL_POINTS):
        # recall >= g/100  <=>  100 * tp >= g * n_gt  (exact in integers)
        hit = np.nonzero(100 * tp_cum >= g * n_gt)[0]
        if hit.size:
            total += envelope[hit[0]]
    return float(total / RECALL_POINTS)


def average_precision(predictions, ground_truth, iou_threshold):
    return pooled_average_precision([(predictions, ground_truth)], iou_threshold)


def ap_range(predictions, ground_truth, thresholds=AP_THRESHOLDS):
    """AP@[.5:.95]: mean AP over IoU thresholds 0.50, 0.55, ..., 0.95."""
    return pooled_ap_range([(predictions, ground_truth)], thresholds)


def pooled_ap_range(videos, thresholds=AP_THRESHOLDS):
    return float(np.mean([pooled_average_precision(videos, t) for t in thresholds]))


def loso_folds(subjects):
    """One ``(train_subjects, test_subject)`` fold per distinct subject, sorted by id.

    ``subjects`` may hold subject ids or records with a ``subject_id`` attribute.
    """
    ids = sorted({getattr(s, "subject_id", s) for s in subjects})
    if len(ids) < 2:
        raise ValueError(f"leave-one-subject-out needs at least 2 subjects, got {len(ids)}")
    return [(tuple(x for x in ids if x != t), t) for t in ids]


# --------------------------------------------------------------------------
# protocol
# --------------------------------------------------------------------------


@dataclass
class VideoData:
    """Everything the protocol needs about one video.

    ``features[cls]`` is the ``(L - k_cls, 42, 42, 3)`` input stack for that
    class's ``k``; ``intervals[cls]`` the 0-based ground truth.
    """

    video_id: str
    subject_id: str
    length: int
    intervals: dict
    features: dict = field(default_factory=dict, repr=False)


@dataclass
class ProtocolConfig:
    k: dict = field(default_factory=lambda: {"macro": 18, "micro": 6})
    p: float = 0.55
    iou_threshold: float = 0.5
    label_function: str = "unit_step"
    learning_rate: float = 5e-4
    epochs: int = 10
    seed: int = 0
    negative_sample_rate: int = 2
    augment: dict = field(default_factory=lambda: {"macro": False, "micro": True})
    classes: tuple = CLASSES

    def __post_init__(self):
        self.label_function = LabelFunction.parse(self.label_function).value
        self.classes = tuple(self.classes)
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        for c in self.classes:
            if c not in CLASSES:
                raise ValueError(f"unknown expression class {c!r}")
            if self.k.get(c, 0) < 1:
                raise ValueError(f"k for {c} must be >= 1")

    def train_config(self, cls, fold):
        seed = int(np.random.SeedSequence([self.seed, CLASSES.index(cls), fold]).generate_state(1)[0])
        return TrainConfig(self.learning_rate, self.epochs, seed, self.negative_sample_rate,
                           bool(self.augment.get(cls, False)), self.label_function)

    def to_dict(self):
        d = asdict(self)
        d["classes"] = list(self.classes)
        return d


@dataclass
class EvalReport:
    config: dict
    classes: dict
    overall: dict
    videos: list
    folds: list
    scores: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        return {"config": self.config, "seed": self.config.get("seed"), "folds": self.folds,
                "classes": self.classes, "overall": self.overall, "videos": self.videos}


def _metrics(counts, ap):
    p, r, f1 = precision_recall_f1(counts)
    return {"total": counts.n_gt, "tp": counts.tp, "fp": counts.fp, "fn": counts.fn,
            "precision": p, "recall": r, "f1": f1, "ap_50_95": ap}


def spot_video(raw, k, p, length):
    if len(raw) < 2 * k + 1:
        return []
    return spot(raw, k, p, video_length=length)


def evaluate_scores(videos, scores, config, p=None):
    """Spot and score cached raw predictions: ``scores[cls][video_id]`` -> ScoreSeries.

    Per-class F1 comes from counts pooled over videos; the overall F1 pools
    the counts of both classes and the overall AP is the mean class AP.
    """
    p = config.p if p is None else p
    classes, per_video = {}, {v.video_id: {} for v in videos}
    total = MatchCounts()
    aps = []
    for cls in config.classes:
        k = config.k[cls]
        counts = MatchCounts()
        pooled = []
        for v in videos:
            gts = v.intervals.get(cls, [])
            spots = spot_video(scores[cls][v.video_id], k, p, v.length)
            c, flags = match_intervals(spots, gts, config.iou_threshold)
            counts += c
            pooled.append((spots, gts))
            per_video[v.video_id][cls] = [
                {"peak": s.peak_frame, "onset": s.interval.onset, "offset": s.interval.offset,
                 "confidence": s.confidence, "threshold": s.threshold, "tp": bool(f)}
                for s, f in zip(spots, flags)]
        ap = pooled_ap_range(pooled)
        aps.append(ap)
        total += counts
        classes[cls] = _metrics(counts, ap)
    overall = _metrics(total, float(np.mean(aps)) if aps else 0.0)
    videos_out = [{"video_id": v.video_id, "subject_id": v.subject_id, "spots": per_video[v.video_id]}
                  for v in videos]
    return classes, overall, videos_out


def _train_fold(videos, cls, tc, k):
    features, labels = {}, {}
    for v in videos:
        features[v.video_id] = v.features[cls]
        labels[v.video_id] = generate_labels(v.length, k, v.intervals.get(cls, []), tc.label_function, cls)
    return train(build_training_set(features, labels, tc), tc, cls)


def run_protocol(videos, config, jobs=1):
    """Leave-one-subject-out training and spotting, separately per expression class.

    Folds are independent (each has its own derived seed), so ``jobs > 1``
    trains them concurrently without changing any result.
    """
    folds = loso_folds(videos)
    tasks = [(cls, f, tr, t) for cls in config.classes for f, (tr, t) in enumerate(folds)]

    def work(task):
        cls, f, train_subjects, test_subject = task
        tc = config.train_config(cls, f)
        model = _train_fold([v for v in videos if v.subject_id in train_subjects], cls, tc, config.k[cls])
        log.info("%s fold %d/%d (test %s): final loss %.5f", cls, f + 1, len(folds),
                 test_subject, model.loss_history[-1])
        return {v.video_id: predict_scores(model, v.features[cls], v.video_id)
                for v in videos if v.subject_id == test_subject}

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]
    scores = {cls: {} for cls in config.classes}
    for (cls, *_), res in zip(tasks, results):
        scores[cls].update(res)
    classes, overall, videos_out = evaluate_scores(videos, scores, config)
    fold_out = [{"test_subject": t, "train_subjects": list(tr)} for tr, t in folds]
    return EvalReport(config.to_dict(), classes, overall, videos_out, fold_out, scores)


def sweep_p(videos, scores, config, p_values=P_GRID):
    """Re-spot cached scores for each ``p``; one row of F1 values (and spot counts) per ``p``."""
    rows = []
    for p in p_values:
        classes, overall, videos_out = evaluate_scores(videos, scores, config, p=p)
        row = {"p": p}
        for cls in config.classes:
            row[f"{cls}_f1"] = classes[cls]["f1"]
        row["overall_f1"] = overall["f1"]
        row["spots"] = {v["video_id"]: {c: len(s) for c, s in v["spots"].items()} for v in videos_out}
        rows.append(row)
    return rows
