"""Dense TV-L1 optical flow and optical strain.

The solver follows the duality-based TV-L1 scheme (Zach, Pock & Bischof;
Sanchez Perez, Meinhardt-Llopis & Facciolo's reference implementation) with
a coarse-to-fine pyramid and image warping.  The total variation term is the
anisotropic one, sum over pixel edges of ``|u(a) - u(b)|``, which makes the
discrete solver exactly equivariant under mirroring of the frame pair.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage

from ._resample import resize_bilinear

MIN_LEVEL_SIZE = 16
PRESMOOTHING_SIGMA = 0.8
ZOOM_SIGMA_ZERO = 0.6
GRAD_IS_ZERO = 1e-10


@dataclass(frozen=True)
class TvL1Params:
    """TV-L1 solver parameters (defaults: the reference implementation's)."""

    lambda_: float = 0.15
    theta: float = 0.3
    tau: float = 0.25
    warps: int = 5
    scales: int = 5
    zoom: float = 0.5
    max_iterations: int = 300
    stop_epsilon: float = 0.01
    median_filter: bool = False

    def __post_init__(self):
        for name in ("lambda_", "theta", "tau", "zoom", "stop_epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TvL1Params.{name} must be > 0")
        if not self.zoom < 1:
            raise ValueError("TvL1Params.zoom must lie in (0, 1)")
        if self.warps < 1 or self.scales < 1 or self.max_iterations < 1:
            raise ValueError("warps, scales and max_iterations must be >= 1")


@dataclass
class FlowField:
    """Per-pixel displacement; ``u`` horizontal, ``v`` vertical, both ``(H, W)``."""

    u: np.ndarray
    v: np.ndarray
    energy_trace: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.ndim != 2 or self.u.shape != self.v.shape:
            raise ValueError(f"u/v shape mismatch: {self.u.shape} vs {self.v.shape}")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("flow contains non-finite values")

    @property
    def height(self):
        return self.u.shape[0]

    @property
    def width(self):
        return self.u.shape[1]

    def __mul__(self, s):
        return FlowField(self.u * s, self.v * s)

    __rmul__ = __mul__


@dataclass
class StrainField:
    exx: np.ndarray
    eyy: np.ndarray
    exy: np.ndarray
    magnitude: np.ndarray


def as_gray_frame(frame):
    """Validate a luminance frame and return it as float64 in [0, 1].

    8-bit input is divided by 255; float input must already lie in [0, 1].
    """
    a = np.asarray(frame)
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError(f"expected a non-empty 2-D grayscale frame, got shape {a.shape}")
    if a.dtype == np.uint8:
        return a.astype(np.float64) / 255.0
    a = a.astype(np.float64)
    if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
        raise ValueError("float frames must be finite and lie in [0, 1]")
    return a


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _bilinear(img, y, x):
    H, W = img.shape
    if y < 0.0:
        y = 0.0
    if x < 0.0:
        x = 0.0
    if y > H - 1.0:
        y = H - 1.0
    if x > W - 1.0:
        x = W - 1.0
    y0 = int(np.floor(y))
    x0 = int(np.floor(x))
    y1 = min(y0 + 1, H - 1)
    x1 = min(x0 + 1, W - 1)
    fy = y - y0
    fx = x - x0
    a = img[y0, x0] + fx * (img[y0, x1] - img[y0, x0])
    b = img[y1, x0] + fx * (img[y1, x1] - img[y1, x0])
    return a + fy * (b - a)


@njit(cache=True, nogil=True)
def _warp(I1, I1x, I1y, u1, u2, I1w, I1wx, I1wy):
    H, W = I1.shape
    for i in range(H):
        for j in range(W):
            y = i + u2[i, j]
            x = j + u1[i, j]
            I1w[i, j] = _bilinear(I1, y, x)
            # outside the frame the clamped image no longer depends on u
            if x < 0.0 or y < 0.0 or x > W - 1.0 or y > H - 1.0:
                I1wx[i, j] = 0.0
                I1wy[i, j] = 0.0
            else:
                I1wx[i, j] = _bilinear(I1x, y, x)
                I1wy[i, j] = _bilinear(I1y, y, x)


@njit(cache=True, nogil=True)
def _tv(u):
    H, W = u.shape
    s = 0.0
    for i in range(H):
        for j in range(W):
            if j + 1 < W:
                s += abs(u[i, j + 1] - u[i, j])
            if i + 1 < H:
                s += abs(u[i + 1, j] - u[i, j])
    return s


@njit(cache=True, nogil=True)
def _energy(I0, I1, u1, u2, lam):
    H, W = I0.shape
    data = 0.0
    for i in range(H):
        for j in range(W):
            data += abs(_bilinear(I1, i + u2[i, j], j + u1[i, j]) - I0[i, j])
    return _tv(u1) + _tv(u2) + lam * data


@njit(cache=True, nogil=True, fastmath=True)
def _solve_warp(I0, I1w, I1wx, I1wy, u1, u2, p1x, p1y, p2x, p2y,
                lam, theta, tau, max_iter, eps2):
    """Inner primal-dual iterations for one linearisation; updates u and p in place."""
    H, W = I0.shape
    n_px = H * W
    l_t = lam * theta
    taut = tau / theta
    grad = np.empty((H, W))
    rho_c = np.empty((H, W))
    for i in range(H):
        for j in range(W):
            gx = I1wx[i, j]
            gy = I1wy[i, j]
            grad[i, j] = gx * gx + gy * gy
            rho_c[i, j] = I1w[i, j] - gx * u1[i, j] - gy * u2[i, j] - I0[i, j]

    n = 0
    err = np.inf
    while err > eps2 and n < max_iter:
        n += 1
        # pointwise thresholding of the linearised data term, then the
        # primal step u = v + theta * div(p); both are per-pixel
        err = 0.0
        for i in range(H):
            for j in range(W):
                gx = I1wx[i, j]
                gy = I1wy[i, j]
                g = grad[i, j]
                a = u1[i, j]
                b = u2[i, j]
                rho = rho_c[i, j] + gx * a + gy * b
                if rho < -l_t * g:
                    v1 = a + l_t * gx
                    v2 = b + l_t * gy
                elif rho > l_t * g:
                    v1 = a - l_t * gx
                    v2 = b - l_t * gy
                elif g > GRAD_IS_ZERO:
                    v1 = a - rho * gx / g
                    v2 = b - rho * gy / g
                else:
                    v1 = a
                    v2 = b
                div1 = p1x[i, j] + p1y[i, j]
                div2 = p2x[i, j] + p2y[i, j]
                if j > 0:
                    div1 -= p1x[i, j - 1]
                    div2 -= p2x[i, j - 1]
                if i > 0:
                    div1 -= p1y[i - 1, j]
                    div2 -= p2y[i - 1, j]
                v1 += theta * div1
                v2 += theta * div2
                err += (v1 - a) * (v1 - a) + (v2 - b) * (v2 - b)
                u1[i, j] = v1
                u2[i, j] = v2
        err /= n_px
        # dual step on every pixel edge, projected onto |p| <= 1
        for i in range(H):
            for j in range(W):
                if j + 1 < W:
                    g1 = u1[i, j + 1] - u1[i, j]
                    g2 = u2[i, j + 1] - u2[i, j]
                    p1x[i, j] = (p1x[i, j] + taut * g1) / (1.0 + taut * abs(g1))
                    p2x[i, j] = (p2x[i, j] + taut * g2) / (1.0 + taut * abs(g2))
                if i + 1 < H:
                    g1 = u1[i + 1, j] - u1[i, j]
                    g2 = u2[i + 1, j] - u2[i, j]
                    p1y[i, j] = (p1y[i, j] + taut * g1) / (1.0 + taut * abs(g1))
                    p2y[i, j] = (p2y[i, j] + taut * g2) / (1.0 + taut * abs(g2))
    return n


# --------------------------------------------------------------------------
# pyramid helpers
# --------------------------------------------------------------------------


def _pyramid_sizes(h, w, params):
    sizes = [(h, w)]
    while len(sizes) < params.scales:
        nh = int(round(sizes[-1][0] * params.zoom))
        nw = int(round(sizes[-1][1] * params.zoom))
        if min(nh, nw) < MIN_LEVEL_SIZE:
            break
        sizes.append((nh, nw))
    return sizes


def _zoom_out(img, shape, zoom):
    sigma = ZOOM_SIGMA_ZERO * np.sqrt(1.0 / zoom**2 - 1.0)
    return resize_bilinear(ndimage.gaussian_filter(img, sigma, mode="reflect"), *shape)


def _normalize_pair(I0, I1):
    lo = min(I0.min(), I1.min())
    hi = max(I0.max(), I1.max())
    den = hi - lo
    if den <= 0:
        return np.zeros_like(I0), np.zeros_like(I1)
    return 255.0 * (I0 - lo) / den, 255.0 * (I1 - lo) / den


def tvl1_flow(prev, next, params=None):
    """Dense TV-L1 flow mapping ``prev`` toward ``next``.

    ``next(x + u(x)) ~ prev(x)``.  Frames must share a shape of at least
    16x16; the number of pyramid levels is capped so the coarsest level keeps
    ``min(H, W) >= 16``.  The returned field carries ``energy_trace``, the TV-L1
    energy after every warp of the finest level.
    """
    params = params or TvL1Params()
    I0 = as_gray_frame(prev)
    I1 = as_gray_frame(next)
    if I0.shape != I1.shape:
        raise ValueError(f"frame dimensions differ: {I0.shape} vs {I1.shape}")
    h, w = I0.shape
    if min(h, w) < MIN_LEVEL_SIZE:
        raise ValueError(f"frames must be at least {MIN_LEVEL_SIZE}x{MIN_LEVEL_SIZE}, got {h}x{w}")

    I0, I1 = _normalize_pair(I0, I1)
    I0 = ndimage.gaussian_filter(I0, PRESMOOTHING_SIGMA, mode="reflect")
    I1 = ndimage.gaussian_filter(I1, PRESMOOTHING_SIGMA, mode="reflect")

    sizes = _pyramid_sizes(h, w, params)
    pyr0, pyr1 = [I0], [I1]
    for shape in sizes[1:]:
        pyr0.append(_zoom_out(pyr0[-1], shape, params.zoom))
        pyr1.append(_zoom_out(pyr1[-1], shape, params.zoom))

    u1 = np.zeros(sizes[-1])
    u2 = np.zeros(sizes[-1])
    eps2 = params.stop_epsilon**2
    trace = []
    for level in range(len(sizes) - 1, -1, -1):
        L0 = np.ascontiguousarray(pyr0[level])
        L1 = np.ascontiguousarray(pyr1[level])
        lh, lw = L0.shape
        if u1.shape != (lh, lw):
            ph, pw = u1.shape
            u1 = resize_bilinear(u1, lh, lw) * (lw / pw)
            u2 = resize_bilinear(u2, lh, lw) * (lh / ph)
        L1y, L1x = np.gradient(L1)
        L1x = np.ascontiguousarray(L1x)
        L1y = np.ascontiguousarray(L1y)
        duals = [np.zeros((lh, lw)) for _ in range(4)]
        I1w = np.empty((lh, lw))
        I1wx = np.empty((lh, lw))
        I1wy = np.empty((lh, lw))
        finest = level == 0
        for w in range(params.warps):
            if finest and w > 0:
                prev_u1, prev_u2 = u1.copy(), u2.copy()
            _warp(L1, L1x, L1y, u1, u2, I1w, I1wx, I1wy)
            _solve_warp(L0, I1w, I1wx, I1wy, u1, u2, *duals,
                        params.lambda_, params.theta, params.tau,
                        params.max_iterations, eps2)
            if params.median_filter:
                u1 = ndimage.median_filter(u1, size=3, mode="nearest")
                u2 = ndimage.median_filter(u2, size=3, mode="nearest")
            if finest:
                # later relinearisations that raise the true energy are rolled back
                energy = _energy(L0, L1, u1, u2, params.lambda_)
                if trace and energy > trace[-1]:
                    u1, u2 = prev_u1, prev_u2
                    break
                trace.append(energy)

    return FlowField(u1, u2, energy_trace=np.asarray(trace))


def optical_strain(flow):
    """Infinitesimal strain of a flow field and its magnitude.

    Derivatives are central differences inside the field and one-sided at the
    border.  The shear term is stored once (``exy == eyx``), so the magnitude
    is ``sqrt(exx**2 + eyy**2 + 2 * exy**2)``.
    """
    u, v = flow.u, flow.v
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise ValueError("flow contains non-finite values")
    if min(u.shape) < 2:
        raise ValueError("flow must be at least 2x2 to differentiate")
    du_dy, du_dx = np.gradient(u)
    dv_dy, dv_dx = np.gradient(v)
    exy = 0.5 * (du_dy + dv_dx)
    mag = np.sqrt(du_dx**2 + dv_dy**2 + 2.0 * exy**2)
    return StrainField(exx=du_dx, eyy=dv_dy, exy=exy, magnitude=mag)
