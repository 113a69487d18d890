"""On-disk dataset layout and loading.

::

    root/
      annotations.csv            subject_id,video_id,type,onset,offset,apex   (1-based frames)
      videos.csv                 subject_id,video_id,fps                      (optional)
      frames/<video_id>/*.png    8-bit grayscale PNG or PGM, sorted name = time order
      landmarks/<video_id>.csv   68 rows of x,y for the reference frame

Without ``videos.csv`` the videos are the subdirectories of ``frames/`` and
their subjects come from the annotations (fps defaults to 30).
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..preprocess import LandmarkSet
from ..pseudolabel import FrameInterval

FRAME_SUFFIXES = (".png", ".pgm")
ANNOTATION_HEADER = ("subject_id", "video_id", "type", "onset", "offset", "apex")
VIDEO_HEADER = ("subject_id", "video_id", "fps")
DEFAULT_FPS = 30.0


class DatasetError(ValueError):
    pass


@dataclass
class VideoRecord:
    video_id: str
    subject_id: str
    frame_dir: Path
    frame_count: int
    fps: float
    landmark_path: Path

    def __post_init__(self):
        if self.frame_count < 2:
            raise DatasetError(f"video {self.video_id}: needs at least 2 frames, has {self.frame_count}")
        if not self.fps > 0:
            raise DatasetError(f"video {self.video_id}: fps must be > 0")

    def frame_paths(self):
        return list_frames(self.frame_dir)


@dataclass
class AnnotationRecord:
    """One expression; frame indices are 0-based here (1-based in the CSV)."""

    video_id: str
    subject_id: str
    expression_class: str
    onset: int
    offset: int
    apex: int | None = None

    @property
    def interval(self):
        return FrameInterval(self.onset, self.offset)


@dataclass
class Dataset:
    root: Path
    videos: list
    annotations: list
    landmarks: dict = field(repr=False)

    def video(self, video_id):
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)

    def intervals(self, video_id, expression_class):
        return sorted(a.interval for a in self.annotations
                      if a.video_id == video_id and a.expression_class == expression_class)


def list_frames(frame_dir):
    return sorted(p for p in Path(frame_dir).iterdir() if p.suffix.lower() in FRAME_SUFFIXES)


def read_frame(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def load_frames(video):
    return [read_frame(p) for p in video.frame_paths()]


def read_landmarks(path, frame_width, frame_height):
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and row[0].strip().lower() == "x"):
                continue
            try:
                x, y = (float(c) for c in row)
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: expected 'x,y', got {row!r}") from exc
            rows.append((x, y))
    try:
        return LandmarkSet(np.array(rows), frame_width, frame_height)
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from exc


def write_landmarks(path, landmarks):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("x", "y"))
        for x, y in landmarks.points:
            w.writerow((f"{x:.3f}", f"{y:.3f}"))


def _read_csv(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file, expected header {','.join(header)}") from None
        got = [h.strip() for h in got]
        missing = [h for h in header if h not in got]
        if missing and not (header is ANNOTATION_HEADER and missing == ["apex"]):
            raise DatasetError(f"{path}:1: header lacks columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            if not any(c.strip() for c in row):
                continue
            if len(row) > len(got):
                raise DatasetError(f"{path}:{lineno}: too many fields")
            yield lineno, {h: (row[i].strip() if i < len(row) else "") for i, h in enumerate(got)}


def _parse_annotations(path):
    out = []
    for lineno, row in _read_csv(path, ANNOTATION_HEADER):
        where = f"{path}:{lineno}"
        cls = row["type"].lower()
        if cls not in ("macro", "micro"):
            raise DatasetError(f"{where}: type must be macro or micro, got {row['type']!r}")
        try:
            onset, offset = int(row["onset"]), int(row["offset"])
            apex = int(row["apex"]) if row.get("apex") else None
        except ValueError as exc:
            raise DatasetError(f"{where}: non-integer frame index ({exc})") from exc
        if onset < 1:
            raise DatasetError(f"{where}: frame indices are 1-based, onset {onset} < 1")
        if onset > offset:
            raise DatasetError(f"{where}: onset {onset} > offset {offset}")
        if apex is not None and not onset <= apex <= offset:
            raise DatasetError(f"{where}: apex {apex} outside [{onset}, {offset}]")
        if not row["video_id"] or not row["subject_id"]:
            raise DatasetError(f"{where}: empty subject_id or video_id")
        out.append((lineno, AnnotationRecord(row["video_id"], row["subject_id"], cls, onset - 1,
                                             offset - 1, None if apex is None else apex - 1)))
    return out


def load_dataset(root):
    """Load and cross-check a dataset; any inconsistency raises :class:`DatasetError`."""
    root = Path(root)
    ann_path = root / "annotations.csv"
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    if not ann_path.is_file():
        raise DatasetError(f"{ann_path} is missing")
    annotated = _parse_annotations(ann_path)

    subjects, fps = {}, {}
    vid_path = root / "videos.csv"
    if vid_path.is_file():
        for lineno, row in _read_csv(vid_path, VIDEO_HEADER):
            try:
                fps[row["video_id"]] = float(row["fps"])
            except ValueError as exc:
                raise DatasetError(f"{vid_path}:{lineno}: bad fps {row['fps']!r}") from exc
            subjects[row["video_id"]] = row["subject_id"]
    else:
        frames_root = root / "frames"
        if frames_root.is_dir():
            for d in sorted(p for p in frames_root.iterdir() if p.is_dir()):
                subjects[d.name] = None
        for _, a in annotated:
            subjects.setdefault(a.video_id, None)
            if subjects[a.video_id] is None:
                subjects[a.video_id] = a.subject_id

    videos, landmarks = [], {}
    for vid in sorted(subjects):
        if subjects[vid] is None:
            raise DatasetError(f"video {vid}: subject unknown (no annotations and no videos.csv)")
        frame_dir = root / "frames" / vid
        if not frame_dir.is_dir():
            raise DatasetError(f"video {vid}: frame directory {frame_dir} is missing")
        paths = list_frames(frame_dir)
        lm_path = root / "landmarks" / f"{vid}.csv"
        if not lm_path.is_file():
            raise DatasetError(f"video {vid}: landmark file {lm_path} is missing")
        rec = VideoRecord(vid, subjects[vid], frame_dir, len(paths), fps.get(vid, DEFAULT_FPS), lm_path)
        with Image.open(paths[0]) as im:
            w, h = im.size
        landmarks[vid] = read_landmarks(lm_path, w, h)
        videos.append(rec)

    by_id = {v.video_id: v for v in videos}
    annotations = []
    for lineno, a in annotated:
        v = by_id.get(a.video_id)
        where = f"{ann_path}:{lineno}"
        if v is None:
            raise DatasetError(f"{where}: unknown video {a.video_id!r}")
        if v.subject_id != a.subject_id:
            raise DatasetError(f"{where}: subject {a.subject_id!r} but video belongs to {v.subject_id!r}")
        if a.offset >= v.frame_count:
            raise DatasetError(f"{where}: offset {a.offset + 1} beyond frame count {v.frame_count}")
        annotations.append(a)
    return Dataset(root, videos, annotations, landmarks)


def write_annotations(path, annotations):
    """Write records (0-based internally) as the 1-based annotations CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_HEADER)
        for a in annotations:
            w.writerow((a.subject_id, a.video_id, a.expression_class, a.onset + 1, a.offset + 1,
                        "" if a.apex is None else a.apex + 1))


def write_videos(path, videos):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VIDEO_HEADER)
        for v in videos:
            w.writerow((v.subject_id, v.video_id, f"{v.fps:g}"))
