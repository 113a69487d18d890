"""Synthetic long videos with injected macro/micro motion events.

Every subject gets its own seeded noise texture on a 128x128 frame and every
video shares one canonical 68-point landmark layout.  An event is a sum of
Gaussian-blob displacement fields anchored at brow or mouth landmarks whose
amplitude ramps linearly 0 -> A -> 0 over onset -> apex -> offset.  Frames
are rendered by backward warping the texture, plus an optional per-frame
global translation (head jitter).
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from ..preprocess import LandmarkSet
from .dataset import AnnotationRecord, VideoRecord, write_annotations, write_landmarks, write_videos

FRAME_SIZE = 128
CLASSES = ("macro", "micro")
EVENT_GAP = 10   # min frames between consecutive events
EVENT_EDGE = 20  # event-free frames at each end of a video


def canonical_landmarks(size=FRAME_SIZE):
    """Fixed pseudo-landmarks: forehead room above the brows so brow motion survives eye masking."""
    s = size / 128.0
    pts = np.zeros((68, 2))
    t = np.linspace(0.0, np.pi, 17)
    pts[0:17] = np.c_[64 - 62 * np.cos(t), 4 + 122 * np.sin(t)]
    bx = np.linspace(-16, 16, 5)
    for start, cx in ((17, 34), (22, 94)):
        pts[start:start + 5] = np.c_[cx + bx, 22 - 4 * np.cos(bx / 16 * np.pi / 2)]
    pts[27:31] = np.c_[np.full(4, 64.0), np.linspace(48, 70, 4)]
    pts[31:36] = np.c_[np.linspace(54, 74, 5), np.full(5, 76.0)]
    a = np.linspace(0, 2 * np.pi, 6, endpoint=False) + np.pi
    for start, cx in ((36, 34), (42, 94)):
        pts[start:start + 6] = np.c_[cx + 10 * np.cos(a), 46 + 3 * np.sin(a)]
    a = np.linspace(0, 2 * np.pi, 12, endpoint=False) + np.pi
    pts[48:60] = np.c_[64 + 20 * np.cos(a), 98 + 8 * np.sin(a)]
    a = np.linspace(0, 2 * np.pi, 8, endpoint=False) + np.pi
    pts[60:68] = np.c_[64 + 12 * np.cos(a), 98 + 3 * np.sin(a)]
    return LandmarkSet(np.clip(pts * s, 0, size - 1), size, size)


# blob anchors as (landmark indices averaged, displacement direction (dx, dy))
REGIONS = {
    "brow_left": (((17, 18, 19, 20, 21), (0.0, -1.0)),),
    "brow_right": (((22, 23, 24, 25, 26), (0.0, -1.0)),),
    "brows": (((17, 18, 19, 20, 21), (0.0, -1.0)), ((22, 23, 24, 25, 26), (0.0, -1.0))),
    "smile": (((48,), (-0.8, -0.6)), ((54,), (0.8, -0.6))),
    "mouth_open": (((57, 58, 56), (0.0, 1.0)),),
}
CLASS_REGIONS = {"macro": ("brows", "smile", "mouth_open"),
                 "micro": ("brow_left", "brow_right", "smile")}


@dataclass(frozen=True)
class SyntheticEvent:
    expression_class: str
    onset: int
    apex: int
    offset: int
    region: str
    amplitude: float
    sigma: float

    def __post_init__(self):
        if not self.onset <= self.apex <= self.offset or self.onset == self.offset:
            raise ValueError(f"event needs onset <= apex <= offset with onset < offset: {self}")
        if self.region not in REGIONS:
            raise ValueError(f"unknown region {self.region!r}")
        if not self.amplitude > 0 or not self.sigma > 0:
            raise ValueError("amplitude and sigma must be > 0")

    def ramp(self, t):
        """Envelope in [0, 1]: linear up to the apex, linear back down."""
        if t <= self.onset or t >= self.offset:
            return 0.0
        if t <= self.apex:
            return (t - self.onset) / (self.apex - self.onset)
        return (self.offset - t) / (self.offset - self.apex)


@dataclass
class SyntheticConfig:
    videos: int = 20
    frames: int = 300
    subjects: int = 4
    events: dict = field(default_factory=lambda: {"macro": 2, "micro": 1})
    amplitude: dict = field(default_factory=lambda: {"macro": 4.0, "micro": 2.0})
    length: dict = field(default_factory=lambda: {"macro": (31, 39), "micro": (9, 13)})
    sigma: dict = field(default_factory=lambda: {"macro": 9.0, "micro": 6.0})
    jitter: float = 0.2
    fps: float = 30.0
    seed: int = 7

    def __post_init__(self):
        self.length = {c: tuple(int(x) for x in v) for c, v in self.length.items()}
        errors = []
        if self.videos < 1 or self.subjects < 1 or self.subjects > self.videos:
            errors.append("need 1 <= subjects <= videos")
        if self.frames < 2:
            errors.append("frames per video must be >= 2")
        for c in CLASSES:
            lo, hi = self.length.get(c, (0, 0))
            if self.events.get(c, 0) < 0:
                errors.append(f"{c}: event count must be >= 0")
            if self.events.get(c, 0) and not 2 <= lo <= hi < self.frames:
                errors.append(f"{c}: event lengths must satisfy 2 <= min <= max < frames")
            if self.events.get(c, 0) and not self.amplitude.get(c, 0) > 0:
                errors.append(f"{c}: amplitude must be > 0")
            if self.events.get(c, 0) and not self.sigma.get(c, 0) > 0:
                errors.append(f"{c}: sigma must be > 0")
        if self.jitter < 0:
            errors.append("jitter must be >= 0")
        n = sum(self.events.get(c, 0) for c in CLASSES)
        worst = sum(self.events.get(c, 0) * self.length.get(c, (0, 0))[1] for c in CLASSES)
        if not errors and worst + EVENT_GAP * max(n - 1, 0) + 2 * EVENT_EDGE > self.frames:
            errors.append(f"{n} events of up to {worst} frames in total do not fit into {self.frames} frames")
        if errors:
            raise ValueError("; ".join(errors))

    def to_dict(self):
        d = asdict(self)
        d["length"] = {c: list(v) for c, v in self.length.items()}
        return d


def subject_ids(config):
    return [f"s{i + 1:02d}" for i in range(config.subjects)]


def base_texture(rng, size=FRAME_SIZE):
    """Band-limited noise in roughly [0.1, 0.9]; smooth enough for sub-pixel flow."""
    fine = ndimage.gaussian_filter(rng.standard_normal((size, size)), 1.5)
    coarse = ndimage.gaussian_filter(rng.standard_normal((size, size)), 5.0)
    tex = fine / fine.std() + 0.5 * coarse / coarse.std()
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    return 0.1 + 0.8 * tex


def check_events(events, frames):
    """Reject events outside the video or overlapping another event of the same class."""
    for e in events:
        if e.onset < 0 or e.offset >= frames:
            raise ValueError(f"event [{e.onset}, {e.offset}] outside a {frames}-frame video")
    for c in CLASSES:
        same = sorted((e for e in events if e.expression_class == c), key=lambda e: e.onset)
        for a, b in zip(same, same[1:]):
            if b.onset <= a.offset:
                raise ValueError(f"overlapping {c} events [{a.onset}, {a.offset}] and [{b.onset}, {b.offset}]")


def place_events(config, rng, gap=EVENT_GAP, edge=EVENT_EDGE):
    """Random non-overlapping events (any class) separated by at least ``gap`` frames."""
    wanted = [c for c in CLASSES for _ in range(config.events.get(c, 0))]
    rng.shuffle(wanted)
    lengths = [int(rng.integers(config.length[c][0], config.length[c][1] + 1)) for c in wanted]
    slack = config.frames - 2 * edge - sum(lengths) - gap * max(len(wanted) - 1, 0)
    if slack < 0:
        raise ValueError("events do not fit into the video")
    # distribute the slack randomly in front of each event
    cuts = np.sort(rng.integers(0, slack + 1, size=len(wanted)))
    events, t, prev = [], edge, 0
    for c, n, cut in zip(wanted, lengths, cuts):
        t += int(cut - prev)
        prev = cut
        apex = t + int(rng.integers(n // 3, 2 * n // 3 + 1))
        events.append(SyntheticEvent(c, t, apex, t + n - 1, str(rng.choice(CLASS_REGIONS[c])),
                                     config.amplitude[c] * float(rng.uniform(0.85, 1.15)),
                                     config.sigma[c]))
        t += n + gap
    return events


def _displacement(event, landmarks, size):
    """Unit-amplitude (dx, dy) field of an event over the frame."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx = np.zeros((size, size))
    dy = np.zeros((size, size))
    for idx, (ux, uy) in REGIONS[event.region]:
        cx, cy = landmarks.points[list(idx)].mean(axis=0)
        g = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * event.sigma ** 2))
        dx += ux * g
        dy += uy * g
    return dx, dy


def render_video(texture, events, frames, landmarks=None, jitter=0.0, rng=None):
    """Render uint8 frames; ``jitter`` > 0 needs ``rng`` for the per-frame translation."""
    check_events(events, frames)
    size = texture.shape[0]
    landmarks = landmarks or canonical_landmarks(size)
    fields = [_displacement(e, landmarks, size) for e in events]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    coeffs = ndimage.spline_filter(texture, order=3, mode="mirror")
    out = []
    for t in range(frames):
        dx = np.zeros((size, size))
        dy = np.zeros((size, size))
        for e, (fx, fy) in zip(events, fields):
            r = e.ramp(t) * e.amplitude
            if r:
                dx += r * fx
                dy += r * fy
        if jitter > 0:
            jx, jy = rng.uniform(-jitter, jitter, size=2)
            dx += jx
            dy += jy
        img = ndimage.map_coordinates(coeffs, [yy - dy, xx - dx], order=3, mode="mirror", prefilter=False)
        out.append(np.clip(np.rint(img * 255), 0, 255).astype(np.uint8))
    return out


def generate_synthetic(config, root):
    """Write a complete dataset under ``root`` and return its annotation records.

    Output is a pure function of ``config``: the same config yields
    byte-identical files.
    """
    root = Path(root)
    seeds = np.random.SeedSequence(config.seed)
    subject_seeds, video_seeds = seeds.spawn(2)
    subjects = subject_ids(config)
    textures = [base_texture(np.random.default_rng(s)) for s in subject_seeds.spawn(config.subjects)]
    landmarks = canonical_landmarks()

    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "landmarks").mkdir(exist_ok=True)
    videos, annotations = [], []
    for i, vs in enumerate(video_seeds.spawn(config.videos)):
        rng = np.random.default_rng(vs)
        subj = subjects[i % config.subjects]
        vid = f"{subj}_v{i // config.subjects:02d}"
        events = place_events(config, rng)
        frames = render_video(textures[i % config.subjects], events, config.frames, landmarks,
                              config.jitter, rng)
        frame_dir = root / "frames" / vid
        frame_dir.mkdir(exist_ok=True)
        for t, img in enumerate(frames):
            Image.fromarray(img).save(frame_dir / f"{t:05d}.png", optimize=False)
        lm_path = root / "landmarks" / f"{vid}.csv"
        write_landmarks(lm_path, landmarks)
        videos.append(VideoRecord(vid, subj, frame_dir, config.frames, config.fps, lm_path))
        annotations += [AnnotationRecord(vid, subj, e.expression_class, e.onset, e.offset, e.apex)
                        for e in sorted(events, key=lambda e: (e.onset, e.expression_class))]
    write_videos(root / "videos.csv", videos)
    write_annotations(root / "annotations.csv", annotations)
    return annotations
