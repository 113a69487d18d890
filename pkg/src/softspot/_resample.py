"""Bilinear resampling shared by cropping, pyramids, ROI composition and GradCAM."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _resize_kernel(img, out_h, out_w, y0, x0, box_h, box_w):
    H, W = img.shape
    out = np.empty((out_h, out_w), np.float64)
    sy = box_h / out_h
    sx = box_w / out_w
    for i in range(out_h):
        y = y0 + (i + 0.5) * sy - 0.5
        if y < 0.0:
            y = 0.0
        if y > H - 1.0:
            y = H - 1.0
        iy = int(np.floor(y))
        iy1 = min(iy + 1, H - 1)
        fy = y - iy
        for j in range(out_w):
            x = x0 + (j + 0.5) * sx - 0.5
            if x < 0.0:
                x = 0.0
            if x > W - 1.0:
                x = W - 1.0
            ix = int(np.floor(x))
            ix1 = min(ix + 1, W - 1)
            fx = x - ix
            a = img[iy, ix] + fx * (img[iy, ix1] - img[iy, ix])
            b = img[iy1, ix] + fx * (img[iy1, ix1] - img[iy1, ix])
            out[i, j] = a + fy * (b - a)
    return out


def resize_bilinear(img, out_h, out_w, box=None):
    """Resample ``img`` (or the inclusive pixel box ``(y0, x0, y1, x1)``) to ``out_h x out_w``.

    Pixel centres are aligned (half-pixel convention) and reads outside the
    image are clamped to the border, so a box of the output size is copied
    verbatim and constants stay constant.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    if box is None:
        y0, x0, y1, x1 = 0, 0, img.shape[0] - 1, img.shape[1] - 1
    else:
        y0, x0, y1, x1 = box
    return _resize_kernel(img, int(out_h), int(out_w), float(y0), float(x0),
                          float(y1 - y0 + 1), float(x1 - x0 + 1))
