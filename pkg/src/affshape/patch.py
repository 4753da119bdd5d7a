"""Differentiable affine patch sampling.

Output grid coordinates ``u`` span ``[-1, 1]`` inclusive with ``S`` samples per
axis; sample ``(row j, col i)`` is read at ``center + mr_scale * A @ (u_i, u_j)``
by bilinear interpolation. Samples outside the image clamp to the border.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import AffineFrame, DegenerateFrame
from .image import ScaleSpace

DEFAULT_SIZE = 32
DEFAULT_MR_SCALE = 3.0
MAX_CLAMPED_FRACTION = 0.1
_EPS_STD = 1e-8


class OutOfBounds(ValueError):
    """The whole measurement region falls outside the image."""


@dataclass
class Patch:
    values: np.ndarray
    normalized: bool = False
    clamped_fraction: float = 0.0

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass
class PatchJacobian:
    dA: np.ndarray  # (S, S, 4): d value / d (a11, a12, a21, a22)
    dc: np.ndarray  # (S, S, 2): d value / d (cx, cy)


def unit_grid(S: int) -> tuple[np.ndarray, np.ndarray]:
    u = np.linspace(-1.0, 1.0, S)
    return np.meshgrid(u, u)


def sample_batch(img, centers, mats, S=DEFAULT_SIZE, mr_scale=DEFAULT_MR_SCALE,
                 jacobian=False):
    """Sample ``n`` patches at once.

    Returns ``(values, clamped)`` with shapes ``(n, S, S)`` and ``(n, S, S)``
    (bool), plus ``(dA, dc)`` of shapes ``(n, S, S, 4)`` and ``(n, S, S, 2)``
    when ``jacobian`` is set. No determinant check is made here.
    """
    img = np.asarray(img, dtype=np.float64)
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    M = mr_scale * np.asarray(mats, dtype=float).reshape(-1, 2, 2)
    UX, UY = unit_grid(S)
    px = centers[:, 0, None, None] + M[:, 0, 0, None, None] * UX + M[:, 0, 1, None, None] * UY
    py = centers[:, 1, None, None] + M[:, 1, 0, None, None] * UX + M[:, 1, 1, None, None] * UY

    H, W = img.shape
    outside = (px < 0) | (px > W - 1) | (py < 0) | (py > H - 1)
    xc = np.clip(px, 0, W - 1)
    yc = np.clip(py, 0, H - 1)
    x0 = np.minimum(np.floor(xc).astype(np.int64), max(W - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.int64), max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = xc - x0
    fy = yc - y0
    i00 = img[y0, x0]
    i01 = img[y0, x1]
    i10 = img[y1, x0]
    i11 = img[y1, x1]
    top = i00 + fx * (i01 - i00)
    bot = i10 + fx * (i11 - i10)
    values = top + fy * (bot - top)
    if not jacobian:
        return values, outside

    gx = (1 - fy) * (i01 - i00) + fy * (i11 - i10)
    gy = bot - top
    gx = np.where(outside, 0.0, gx)
    gy = np.where(outside, 0.0, gy)
    dA = np.stack([mr_scale * gx * UX, mr_scale * gx * UY,
                   mr_scale * gy * UX, mr_scale * gy * UY], axis=-1)
    dc = np.stack([gx, gy], axis=-1)
    return values, outside, dA, dc


def _source(img_or_ss, frame: AffineFrame):
    """Resolve the image to sample from and the frame in its pixel units."""
    if isinstance(img_or_ss, ScaleSpace):
        lev = img_or_ss.nearest_level(np.sqrt(frame.det))
        s = float(lev.step)
        return lev.image, frame.center / s, frame.A / s
    return img_or_ss, frame.center, frame.A


def _check(frame: AffineFrame, outside: np.ndarray) -> float:
    if frame.det <= 0:
        raise DegenerateFrame("frame determinant must be positive")
    frac = float(outside.mean())
    if frac == 1.0:
        raise OutOfBounds(f"frame at ({frame.cx}, {frame.cy}) lies outside the image")
    return frac


def sample_patch(img, f: AffineFrame, S: int = DEFAULT_SIZE,
                 mr_scale: float = DEFAULT_MR_SCALE) -> Patch:
    """Warp the measurement region of ``f`` into an ``S x S`` patch.

    ``img`` may be an image array or a :class:`ScaleSpace`; in the latter case
    the level whose blur is closest to the frame scale is used.
    """
    src, c, A = _source(img, f)
    values, outside = sample_batch(src, c, A, S, mr_scale)
    frac = _check(f, outside)
    return Patch(values[0], normalized=False, clamped_fraction=frac)


def sample_patch_with_jacobian(img, f: AffineFrame, S: int = DEFAULT_SIZE,
                               mr_scale: float = DEFAULT_MR_SCALE):
    src, c, A = _source(img, f)
    values, outside, dA, dc = sample_batch(src, c, A, S, mr_scale, jacobian=True)
    frac = _check(f, outside)
    if isinstance(img, ScaleSpace):
        # frame entries and center were divided by the level step
        step = float(img.nearest_level(np.sqrt(f.det)).step)
        dA, dc = dA / step, dc / step
    return (Patch(values[0], normalized=False, clamped_fraction=frac),
            PatchJacobian(dA[0], dc[0]))


def normalize_values(x):
    """Per-patch zero mean, unit std over the last two axes.

    Returns ``(y, std)``; constant patches map to zeros with ``std = 0``.
    """
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=(-2, -1), keepdims=True)
    centered = x - mean
    std = np.sqrt((centered ** 2).mean(axis=(-2, -1), keepdims=True))
    safe = np.where(std > _EPS_STD, std, 1.0)
    y = np.where(std > _EPS_STD, centered / safe, 0.0)
    return y, np.where(std > _EPS_STD, std, 0.0)


def normalize_backward(y, std, grad_y):
    """Vector-Jacobian product of :func:`normalize_values`.

    For ``y = (x - mean) / std``: ``dx = (g - mean(g) - y * mean(g * y)) / std``.
    """
    g = np.asarray(grad_y, dtype=np.float64)
    gm = g.mean(axis=(-2, -1), keepdims=True)
    gym = (g * y).mean(axis=(-2, -1), keepdims=True)
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, (g - gm - y * gym) / safe, 0.0)


def normalize_patch(p: Patch) -> Patch:
    y, _ = normalize_values(p.values)
    return Patch(y, normalized=True, clamped_fraction=p.clamped_fraction)
