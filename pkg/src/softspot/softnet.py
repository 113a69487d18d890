"""Shallow three-stream regression network: forward/backward, SGD training, GradCAM.

Layout (per input of 42x42x3, one channel per stream)::

    stream s: 5x5 same conv (3 / 5 / 8 filters) -> ReLU -> 3x3/3 max-pool  => 14x14xf
    concat (14x14x16) -> 2x2/2 max-pool (7x7x16) -> flatten (784)
    dense 400 + ReLU -> dense 1 (linear)

which totals 416 + 314,000 + 401 = 314,817 trainable parameters.
"""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from ._resample import resize_bilinear
from ._sgd import sgd_step_fused
from .pseudolabel import LabelFunction
from .spotting import ScoreSeries

log = logging.getLogger(__name__)

STREAM_FILTERS = (3, 5, 8)
KERNEL = 5
POOL1 = 3
POOL2 = 2
HIDDEN = 400
INPUT = 42
CONCAT = INPUT // POOL1                      # 14
FLAT = (CONCAT // POOL2) ** 2 * sum(STREAM_FILTERS)  # 784
PARAMETER_COUNT = 314_817

PARAM_NAMES = ("stream1_w", "stream1_b", "stream2_w", "stream2_b", "stream3_w", "stream3_b",
               "dense1_w", "dense1_b", "dense2_w", "dense2_b")
PARAM_SHAPES = tuple(
    s for f in STREAM_FILTERS for s in ((KERNEL, KERNEL, 1, f), (f,))
) + ((FLAT, HIDDEN), (HIDDEN,), (HIDDEN, 1), (1,))

EXPRESSION_CLASSES = ("macro", "micro")

BLUR_SIZE = 7
BLUR_SIGMA = 1.17


@dataclass
class SoftNetModel:
    """All trainable tensors, in :data:`PARAM_NAMES` order, for one expression class."""

    params: list
    expression_class: str = "macro"
    loss_history: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        if self.expression_class not in EXPRESSION_CLASSES:
            raise ValueError(f"unknown expression class {self.expression_class!r}")
        if len(self.params) != len(PARAM_SHAPES):
            raise ValueError("wrong number of parameter tensors")
        for name, p, shape in zip(PARAM_NAMES, self.params, PARAM_SHAPES):
            if p.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {p.shape}")
        assert parameter_count(self) == PARAMETER_COUNT

    @classmethod
    def zeros(cls, expression_class="macro"):
        return cls([np.zeros(s) for s in PARAM_SHAPES], expression_class)

    @classmethod
    def initialize(cls, rng, expression_class="macro"):
        """Glorot-uniform weights, zero biases."""
        params = []
        for shape in PARAM_SHAPES:
            if len(shape) == 1:
                params.append(np.zeros(shape))
                continue
            if len(shape) == 4:
                receptive = shape[0] * shape[1]
                fan_in, fan_out = receptive * shape[2], receptive * shape[3]
            else:
                fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params.append(rng.uniform(-limit, limit, size=shape))
        return cls(params, expression_class)

    def copy(self):
        return SoftNetModel([p.copy() for p in self.params], self.expression_class)

    def flat(self):
        return np.concatenate([p.ravel() for p in self.params])


def parameter_count(model):
    return int(sum(p.size for p in model.params))


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------


def _pool(a, size):
    """Non-overlapping max-pool of ``(N, H, W, C)``; returns values and in-window argmax."""
    n, h, w, c = a.shape
    blocks = a.reshape(n, h // size, size, w // size, size, c).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(n, h // size, w // size, c, size * size)
    idx = blocks.argmax(axis=-1)  # first maximum in raster order wins ties
    return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0], idx


def _unpool(grad, idx, size):
    n, h, w, c = grad.shape
    blocks = np.zeros((n, h, w, c, size * size))
    np.put_along_axis(blocks, idx[..., None], grad[..., None], axis=-1)
    blocks = blocks.reshape(n, h, w, c, size, size).transpose(0, 1, 4, 2, 5, 3)
    return blocks.reshape(n, h * size, w * size, c)


def _im2col(x):
    """``(N, 42, 42)`` -> ``(N, 1764, 25)`` patches of the zero-padded plane."""
    pad = KERNEL // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols = sliding_window_view(xp, (KERNEL, KERNEL), axis=(1, 2))
    return cols.reshape(x.shape[0], INPUT * INPUT, KERNEL * KERNEL)


def _as_batch(inputs):
    x = np.asarray(getattr(inputs, "data", inputs), dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != (INPUT, INPUT, 3):
        raise ValueError(f"expected inputs of shape (N, 42, 42, 3), got {x.shape}")
    return x


def forward(model, inputs):
    """Scores for a batch ``(N, 42, 42, 3)`` (or one input) plus cached activations."""
    x = _as_batch(inputs)
    n = x.shape[0]
    cache = {"x": x, "streams": []}
    pooled = []
    for s, f in enumerate(STREAM_FILTERS):
        w, b = model.params[2 * s], model.params[2 * s + 1]
        cols = _im2col(x[..., s])
        z = (cols @ w.reshape(KERNEL * KERNEL, f) + b).reshape(n, INPUT, INPUT, f)
        a = np.maximum(z, 0.0)
        p, idx = _pool(a, POOL1)
        cache["streams"].append((cols, z, idx))
        pooled.append(p)
    concat = np.concatenate(pooled, axis=-1)
    cache["concat"] = concat
    score, head = _head(model, concat)
    cache.update(head)
    return score, cache


def _head(model, concat):
    p2, idx2 = _pool(concat, POOL2)
    flat = p2.reshape(concat.shape[0], FLAT)
    w1, b1, w2, b2 = model.params[6:]
    h_pre = flat @ w1 + b1
    h = np.maximum(h_pre, 0.0)
    score = h @ w2[:, 0] + b2[0]
    return score, {"idx2": idx2, "flat": flat, "h_pre": h_pre, "h": h}


def head_from_concat(model, concat):
    """Score as a function of the 14x14x16 concatenated feature map (batch or single)."""
    c = np.asarray(concat, dtype=np.float64)
    single = c.ndim == 3
    score, _ = _head(model, c[None] if single else c)
    return score[0] if single else score


def _backprop(model, cache, d_score):
    """Gradients of ``sum(d_score * score)``; also returns d(concat)."""
    w1, _, w2, _ = model.params[6:]
    h, h_pre, flat = cache["h"], cache["h_pre"], cache["flat"]
    grads = [None] * len(PARAM_SHAPES)
    grads[8] = h.T @ d_score[:, None]
    grads[9] = np.array([d_score.sum()])
    dh = np.outer(d_score, w2[:, 0]) * (h_pre > 0)
    grads[6] = flat.T @ dh
    grads[7] = dh.sum(axis=0)
    n = flat.shape[0]
    d_p2 = (dh @ w1.T).reshape(n, CONCAT // POOL2, CONCAT // POOL2, sum(STREAM_FILTERS))
    d_concat = _unpool(d_p2, cache["idx2"], POOL2)
    start = 0
    for s, f in enumerate(STREAM_FILTERS):
        cols, z, idx = cache["streams"][s]
        d_a = _unpool(d_concat[..., start:start + f], idx, POOL1)
        d_z = (d_a * (z > 0)).reshape(n, INPUT * INPUT, f)
        grads[2 * s] = np.einsum("npk,npf->kf", cols, d_z).reshape(KERNEL, KERNEL, 1, f)
        grads[2 * s + 1] = d_z.sum(axis=(0, 1))
        start += f
    return grads, d_concat


def backward(model, inputs, targets, cache=None):
    """Gradients of the summed squared-error loss ``0.5 * (score - target)**2``.

    Returns ``(grads, scores)`` with ``grads`` in parameter order.
    """
    if cache is None:
        scores, cache = forward(model, inputs)
    else:
        scores = cache["h"] @ model.params[8][:, 0] + model.params[9][0]
    t = np.broadcast_to(np.asarray(targets, dtype=np.float64), scores.shape)
    grads, _ = _backprop(model, cache, scores - t)
    return grads, scores


def sgd_step(model, grads, learning_rate):
    """In-place ``w <- w - lr * grad`` for every tensor; returns the model."""
    for name, g, p in zip(PARAM_NAMES, grads, model.params):
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise FloatingPointError(f"non-finite gradient in {name} ({bad} entries)")
    if learning_rate == 0:
        return model
    for g, p in zip(grads, model.params):
        p -= learning_rate * g
    return model


# --------------------------------------------------------------------------
# data handling and training
# --------------------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    epochs: int = 10
    seed: int = 0
    negative_sample_rate: int = 2
    augment: bool = False
    label_function: LabelFunction = LabelFunction.UNIT_STEP

    def __post_init__(self):
        self.label_function = LabelFunction.parse(self.label_function)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.negative_sample_rate < 1:
            raise ValueError("negative_sample_rate must be >= 1")


@dataclass
class TrainingSample:
    x: np.ndarray
    target: float
    video_id: str = ""
    frame_index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.target <= 1.0:
            raise ValueError(f"training target must lie in [0, 1], got {self.target}")


def _gaussian_kernel(size=BLUR_SIZE, sigma=BLUR_SIGMA):
    r = np.arange(size) - size // 2
    k = np.exp(-(r**2) / (2 * sigma**2))
    return k / k.sum()


def flip(x):
    """Mirror about the vertical axis; horizontal motion changes sign."""
    out = x[:, ::-1, :].copy()
    out[:, :, 0] = -out[:, :, 0]
    return out


def blur(x):
    k = _gaussian_kernel()
    out = ndimage.convolve1d(x, k, axis=0, mode="mirror")
    return ndimage.convolve1d(out, k, axis=1, mode="mirror")


def add_noise(x, rng):
    """Additive N(0, 1) noise scaled by each channel's standard deviation."""
    std = x.reshape(-1, x.shape[-1]).std(axis=0)
    return (x + rng.standard_normal(x.shape) * std).astype(x.dtype)


def augment(sample, rng):
    """Original, flipped, blurred and noised copies of ``sample`` (targets unchanged)."""
    x = np.asarray(sample.x)
    variants = (x, flip(x), blur(x), add_noise(x, rng))
    return [TrainingSample(v.astype(np.float32), sample.target, sample.video_id, sample.frame_index)
            for v in variants]


def build_training_set(features, labels, config, rng=None):
    """Pair per-video inputs with pseudo-labels, subsample negatives, optionally augment.

    ``features`` and ``labels`` map video id to an ``(N, 42, 42, 3)`` array (or
    MotionInput list) and a :class:`LabelSet` (or score array).  Every positive
    is kept; zero-target samples are kept at stride ``negative_sample_rate``
    counted within each video.  Augmentation (positives only) draws from ``rng``
    (default: seeded from ``config.seed``).
    """
    if rng is None:
        rng = np.random.default_rng([config.seed, 1])
    samples = []
    for vid in features:
        x = features[vid]
        if not isinstance(x, np.ndarray):
            from .preprocess import stack_inputs
            x = stack_inputs(x)
        y = np.asarray(getattr(labels[vid], "scores", labels[vid]), dtype=np.float64)
        if len(x) != len(y):
            raise ValueError(f"video {vid}: {len(x)} inputs but {len(y)} labels")
        negatives = 0
        for i in range(len(y)):
            s = TrainingSample(x[i], float(y[i]), str(vid), i)
            if y[i] > 0:
                samples.extend(augment(s, rng) if config.augment else [s])
            else:
                if negatives % config.negative_sample_rate == 0:
                    samples.append(s)
                negatives += 1
    return samples


def train(samples, config, expression_class="macro"):
    """Per-sample SGD on the squared error; deterministic for a fixed seed."""
    if len(samples) == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(config.seed)
    model = SoftNetModel.initialize(rng, expression_class)
    xs = [np.ascontiguousarray(s.x, dtype=np.float64) for s in samples]
    for x in xs:
        if x.shape != (INPUT, INPUT, 3):
            raise ValueError(f"training input must be 42x42x3, got {x.shape}")
    lr = float(config.learning_rate)
    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        total = 0.0
        for i in order:
            loss = sgd_step_fused(xs[i], float(samples[i].target), lr, *model.params)
            if not np.isfinite(loss):
                raise FloatingPointError(f"training diverged at epoch {epoch + 1}")
            total += loss
        if not all(np.all(np.isfinite(p)) for p in model.params):
            raise FloatingPointError(f"non-finite weights after epoch {epoch + 1}")
        model.loss_history.append(total / len(samples))
        log.debug("epoch %d/%d mean loss %.6f", epoch + 1, config.epochs, model.loss_history[-1])
    return model


def predict_scores(model, features, video_id="", batch_size=256):
    """Raw per-pair confidence scores, in input order."""
    x = features if isinstance(features, np.ndarray) else [getattr(f, "data", f) for f in features]
    n = len(x)
    out = np.zeros(n)
    for start in range(0, n, batch_size):
        batch = np.asarray(x[start:start + batch_size], dtype=np.float64)
        out[start:start + len(batch)] = forward(model, batch)[0]
    return ScoreSeries(out, offset=0, video_id=video_id, expression_class=model.expression_class)


# --------------------------------------------------------------------------
# GradCAM
# --------------------------------------------------------------------------


def grad_cam_weights(model, inputs):
    """Per-channel spatial mean of d(score)/d(concat activations), shape (16,)."""
    score, cache = forward(model, inputs)
    _, d_concat = _backprop(model, cache, np.ones_like(score))
    return d_concat[0].mean(axis=(0, 1)), cache["concat"][0]


def grad_cam(model, inputs):
    """42x42 class-activation heatmap in [0, 1] from the concatenated 14x14 maps."""
    weights, concat = grad_cam_weights(model, inputs)
    cam = np.maximum(concat @ weights, 0.0)
    cam = np.maximum(resize_bilinear(cam, INPUT, INPUT), 0.0)
    peak = cam.max()
    return cam / peak if peak > 0 else np.zeros((INPUT, INPUT))


# --------------------------------------------------------------------------
# model file
# --------------------------------------------------------------------------

MODEL_MAGIC = b"SFTN"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    pass


def save_model(model, path):
    """Binary model: magic, u16 version, u8 class, then per tensor a dim header and f32 LE data."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<HB", MODEL_VERSION, EXPRESSION_CLASSES.index(model.expression_class)))
        fh.write(struct.pack("<H", len(model.params)))
        for p in model.params:
            fh.write(struct.pack("<B", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}I", *p.shape))
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    try:
        version, cls = struct.unpack_from("<HB", buf, 4)
        if version != MODEL_VERSION:
            raise ModelFormatError(f"{path}: unsupported model version {version}")
        (count,), pos = struct.unpack_from("<H", buf, 7), 9
        params = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<B", buf, pos)
            shape = struct.unpack_from(f"<{ndim}I", buf, pos + 1)
            pos += 1 + 4 * ndim
            n = int(np.prod(shape))
            if pos + 4 * n > len(buf):
                raise ModelFormatError(f"{path}: truncated weight block")
            params.append(np.frombuffer(buf, dtype="<f4", count=n, offset=pos)
                          .reshape(shape).astype(np.float64))
            pos += 4 * n
    except struct.error as exc:
        raise ModelFormatError(f"{path}: truncated header") from exc
    if pos != len(buf):
        raise ModelFormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return SoftNetModel(params, EXPRESSION_CLASSES[cls])
