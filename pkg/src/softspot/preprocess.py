"""Landmark-driven face cropping, motion clean-up and 42x42x3 input composition.

Landmarks follow the 68-point convention (0-based): jaw 0-16, brows 17-26,
nose 27-35, eyes 36-47, mouth 48-67.  One landmark set, taken from the
reference (first) frame, is used for the whole video.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._resample import resize_bilinear
from .flow import FlowField, TvL1Params, as_gray_frame, optical_strain, tvl1_flow

FACE_SIZE = 128
INPUT_SIZE = 42
ROI_SIZE = INPUT_SIZE // 2

NOSE = tuple(range(27, 36))
LEFT_EYE = tuple(range(36, 42))
RIGHT_EYE = tuple(range(42, 48))
LEFT_BROW_EYE = tuple(range(17, 22)) + LEFT_EYE
RIGHT_BROW_EYE = tuple(range(22, 27)) + RIGHT_EYE
MOUTH = tuple(range(48, 68))

NOSE_MARGIN = 5
EYE_MARGIN = 15
ROI_MARGIN = 12


@dataclass
class LandmarkSet:
    """68 ``(x, y)`` pixel coordinates plus the size of the frame they live in."""

    points: np.ndarray
    frame_width: int
    frame_height: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.shape != (68, 2):
            raise ValueError(f"expected 68 (x, y) landmarks, got shape {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("landmarks must be finite")
        x, y = self.points[:, 0], self.points[:, 1]
        if x.min() < 0 or y.min() < 0 or x.max() > self.frame_width - 1 or y.max() > self.frame_height - 1:
            raise ValueError("landmarks fall outside the frame")

    def box(self, indices=None, margin=0):
        """Inclusive integer box ``(y0, x0, y1, x1)`` around the selected points, clamped to the frame."""
        pts = self.points if indices is None else self.points[list(indices)]
        x0 = int(np.floor(pts[:, 0].min())) - margin
        y0 = int(np.floor(pts[:, 1].min())) - margin
        x1 = int(np.ceil(pts[:, 0].max())) + margin
        y1 = int(np.ceil(pts[:, 1].max())) + margin
        return (max(y0, 0), max(x0, 0),
                min(y1, self.frame_height - 1), min(x1, self.frame_width - 1))

    def to_crop(self, size=FACE_SIZE):
        """Landmarks re-expressed in the coordinates of the ``size x size`` face crop."""
        y0, x0, y1, x1 = self.box()
        sx = size / (x1 - x0 + 1)
        sy = size / (y1 - y0 + 1)
        pts = np.empty_like(self.points)
        pts[:, 0] = (self.points[:, 0] - x0 + 0.5) * sx - 0.5
        pts[:, 1] = (self.points[:, 1] - y0 + 0.5) * sy - 0.5
        return LandmarkSet(np.clip(pts, 0, size - 1), size, size)


@dataclass
class MotionInput:
    """Network input: ``data`` is ``(42, 42, 3)`` float32 with channels (u, v, strain)."""

    data: np.ndarray
    source_frame_index: int

    def __post_init__(self):
        if self.data.shape != (INPUT_SIZE, INPUT_SIZE, 3):
            raise ValueError(f"MotionInput must be 42x42x3, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("MotionInput values must be finite")
        if self.data[:, :, 2].min() < 0:
            raise ValueError("strain channel must be non-negative")

    @property
    def u(self):
        return self.data[:, :, 0]

    @property
    def v(self):
        return self.data[:, :, 1]

    @property
    def strain(self):
        return self.data[:, :, 2]


def _check_box(box, what):
    y0, x0, y1, x1 = box
    if y1 < y0 or x1 < x0:
        raise ValueError(f"{what} region is empty after clamping: {box}")
    return box


def crop_face(frame, landmarks, size=FACE_SIZE):
    """Crop the tight landmark box and resize it bilinearly to ``size x size``."""
    frame = as_gray_frame(frame)
    if frame.shape != (landmarks.frame_height, landmarks.frame_width):
        raise ValueError("frame size does not match the landmark frame size")
    box = _check_box(landmarks.box(), "face")
    y0, x0, y1, x1 = box
    if y1 == y0 or x1 == x0:
        raise ValueError(f"degenerate face box {box}")
    return np.clip(resize_bilinear(frame, size, size, box=box), 0.0, 1.0)


def remove_global_motion(flow, landmarks, margin=NOSE_MARGIN):
    """Subtract the mean flow of the (expanded) nose box from the whole field.

    ``landmarks`` must already be in the flow's (crop) coordinates.
    """
    y0, x0, y1, x1 = _check_box(landmarks.box(NOSE, margin), "nose")
    mu = _offset_mean(flow.u[y0:y1 + 1, x0:x1 + 1])
    mv = _offset_mean(flow.v[y0:y1 + 1, x0:x1 + 1])
    return FlowField(flow.u - mu, flow.v - mv)


def _offset_mean(a):
    # mean taken relative to the minimum so a constant box returns its value exactly
    lo = a.min()
    return lo + (a - lo).mean()


def eye_boxes(landmarks, margin=EYE_MARGIN):
    return [landmarks.box(LEFT_EYE, margin), landmarks.box(RIGHT_EYE, margin)]


def mask_eyes(flow, landmarks, margin=EYE_MARGIN):
    """Zero the flow inside both eye boxes grown by ``margin`` (bounds inclusive)."""
    u = flow.u.copy()
    v = flow.v.copy()
    for y0, x0, y1, x1 in eye_boxes(landmarks, margin):
        u[y0:y1 + 1, x0:x1 + 1] = 0.0
        v[y0:y1 + 1, x0:x1 + 1] = 0.0
    return FlowField(u, v)


def roi_boxes(landmarks, margin=ROI_MARGIN):
    """``(roi1, roi2, roi3)``: brow+eye boxes ordered by image x, then the mouth box."""
    a = _check_box(landmarks.box(LEFT_BROW_EYE, margin), "brow/eye")
    b = _check_box(landmarks.box(RIGHT_BROW_EYE, margin), "brow/eye")
    if (a[1] + a[3]) > (b[1] + b[3]):
        a, b = b, a
    return a, b, _check_box(landmarks.box(MOUTH, margin), "mouth")


def compose_roi_input(flow, strain, landmarks, source_frame_index=0, margin=ROI_MARGIN):
    """Stack the three ROIs of u, v and strain magnitude into a 42x42x3 input.

    Top half: ROI 1 | ROI 2, each resized to 21x21.  Bottom half: ROI 3 resized
    to 21x42.
    """
    roi1, roi2, roi3 = roi_boxes(landmarks, margin)
    out = np.empty((INPUT_SIZE, INPUT_SIZE, 3), dtype=np.float32)
    for c, plane in enumerate((flow.u, flow.v, strain.magnitude)):
        out[:ROI_SIZE, :ROI_SIZE, c] = resize_bilinear(plane, ROI_SIZE, ROI_SIZE, box=roi1)
        out[:ROI_SIZE, ROI_SIZE:, c] = resize_bilinear(plane, ROI_SIZE, ROI_SIZE, box=roi2)
        out[ROI_SIZE:, :, c] = resize_bilinear(plane, ROI_SIZE, INPUT_SIZE, box=roi3)
    return MotionInput(out, int(source_frame_index))


def frame_pair_features(prev, next, face_landmarks, params=None, index=0):
    """Full per-pair chain on cropped faces: flow, global-motion removal, eye mask, strain, ROI."""
    flow = tvl1_flow(prev, next, params)
    flow = remove_global_motion(flow, face_landmarks)
    flow = mask_eyes(flow, face_landmarks)
    return compose_roi_input(flow, optical_strain(flow), face_landmarks, index)


def extract_video_features(frames, landmarks, k, params=None, jobs=1):
    """One :class:`MotionInput` per frame pair ``(F_i, F_{i+k})``, ``i = 0 .. L-1-k``.

    ``frames`` are raw video frames; ``landmarks`` come from the reference frame
    in raw frame coordinates.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(frames) < k + 1:
        raise ValueError(f"video has {len(frames)} frames; at least k+1 = {k + 1} are needed")
    params = params or TvL1Params()
    faces = [crop_face(f, landmarks) for f in frames]
    face_lm = landmarks.to_crop()

    def work(i):
        return frame_pair_features(faces[i], faces[i + k], face_lm, params, i)

    n = len(faces) - k
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(work, range(n)))
    return [work(i) for i in range(n)]


def stack_inputs(features):
    """``(N, 42, 42, 3)`` float32 array from a sequence of MotionInputs."""
    if len(features) == 0:
        return np.zeros((0, INPUT_SIZE, INPUT_SIZE, 3), dtype=np.float32)
    return np.stack([f.data for f in features]).astype(np.float32, copy=False)
