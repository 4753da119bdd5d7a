"""Affine frame algebra.

A frame is a keypoint center plus a 2x2 matrix ``A`` mapping the unit circle
onto the feature ellipse ``{x : x^T (A A^T)^-1 x <= 1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class DegenerateFrame(ValueError):
    """Raised when a frame matrix has a non-positive determinant."""


class ReprojectionError(ValueError):
    """Raised when a homography sends a point to infinity."""


def rotation(alpha: float) -> np.ndarray:
    """Orientation matrix ``[[cos, sin], [-sin, cos]]``."""
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[c, s], [-s, c]])


@dataclass(frozen=True)
class AffineFrame:
    cx: float
    cy: float
    a11: float
    a12: float
    a21: float
    a22: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.a11, self.a12, self.a21, self.a22)
        if not all(math.isfinite(v) for v in vals):
            raise DegenerateFrame(f"non-finite frame entries: {vals}")
        if self.a11 * self.a22 - self.a12 * self.a21 <= 0:
            raise DegenerateFrame(f"frame determinant must be positive: {vals}")

    @classmethod
    def from_matrix(cls, center, A) -> "AffineFrame":
        A = np.asarray(A, dtype=float)
        return cls(float(center[0]), float(center[1]),
                   float(A[0, 0]), float(A[0, 1]), float(A[1, 0]), float(A[1, 1]))

    @classmethod
    def circle(cls, x: float, y: float, radius: float) -> "AffineFrame":
        return cls(float(x), float(y), float(radius), 0.0, 0.0, float(radius))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    @property
    def A(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a21

    def with_matrix(self, A) -> "AffineFrame":
        return AffineFrame.from_matrix((self.cx, self.cy), A)


@dataclass(frozen=True)
class FrameDecomposition:
    """``A = lam * R(alpha) * aprime`` with ``aprime`` lower-triangular, det 1."""

    lam: float
    alpha: float
    aprime: np.ndarray

    @property
    def adoubleprime(self) -> np.ndarray:
        return residual_shape(self.aprime)


def _as_matrix(A) -> np.ndarray:
    if isinstance(A, AffineFrame):
        return A.A
    return np.asarray(A, dtype=float)


def decompose(A) -> FrameDecomposition:
    """Split ``A`` into isotropic scale, rotation and lower-triangular shape.

    The scale is ``sqrt(det A)`` so that the three factors multiply back to
    ``A`` exactly; rotation is chosen to zero the upper-right entry of the
    shape, which then has a positive diagonal.
    """
    A = _as_matrix(A)
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    if not det > 0:
        raise DegenerateFrame(f"determinant {det} is not positive")
    lam = math.sqrt(det)
    B = A / lam
    r = math.hypot(B[0, 1], B[1, 1])
    c, s = B[1, 1] / r, B[0, 1] / r
    alpha = math.atan2(s, c)
    aprime = np.array([
        [(c * B[0, 0] - s * B[1, 0]), 0.0],
        [(s * B[0, 0] + c * B[1, 0]), r],
    ])
    return FrameDecomposition(lam, alpha, aprime)


def compose(d: FrameDecomposition) -> np.ndarray:
    return d.lam * rotation(d.alpha) @ np.asarray(d.aprime, dtype=float)


def residual_shape(aprime) -> np.ndarray:
    return np.asarray(aprime, dtype=float) - np.eye(2)


def elongation(A) -> float:
    """Long-to-short axis ratio of the ellipse, ``s_max / s_min`` of ``A``."""
    sv = np.linalg.svd(_as_matrix(A), compute_uv=False)
    if sv[1] == 0:
        return math.inf
    return float(sv[0] / sv[1])


def elongations(As: np.ndarray) -> np.ndarray:
    """Vectorized :func:`elongation` over a stack of shape ``(n, 2, 2)``."""
    As = np.asarray(As, dtype=float).reshape(-1, 2, 2)
    sv = np.linalg.svd(As, compute_uv=False)
    with np.errstate(divide="ignore"):
        return np.where(sv[:, 1] > 0, sv[:, 0] / np.where(sv[:, 1] > 0, sv[:, 1], 1.0), np.inf)


def geometric_error(pairs: Iterable[tuple]) -> float:
    """Sum over pairs of ``2 ||A - Ad||_F^2 / (det A + det Ad)``.

    This is a sum, not a mean; divide by the pair count to normalize.
    """
    total = 0.0
    for A, Ad in pairs:
        A, Ad = _as_matrix(A), _as_matrix(Ad)
        diff = A - Ad
        num = 2.0 * float(np.sum(diff * diff))
        if num == 0.0:
            continue
        total += num / (np.linalg.det(A) + np.linalg.det(Ad))
    return total


def geometric_error_batch(As: np.ndarray, Ads: np.ndarray) -> float:
    As = np.asarray(As, dtype=float).reshape(-1, 2, 2)
    Ads = np.asarray(Ads, dtype=float).reshape(-1, 2, 2)
    diff = As - Ads
    num = 2.0 * np.sum(diff * diff, axis=(1, 2))
    den = np.linalg.det(As) + np.linalg.det(Ads)
    nz = num != 0
    return float(np.sum(num[nz] / den[nz]))


class Homography:
    """Projective 3x3 map, normalized so that ``h[2, 2] == 1``."""

    def __init__(self, h):
        h = np.asarray(h, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(h)):
            raise ValueError("homography has non-finite entries")
        if abs(np.linalg.det(h)) < 1e-300:
            raise ValueError("homography is singular")
        if h[2, 2] != 0:
            h = h / h[2, 2]
        self.h = h

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def load(cls, path) -> "Homography":
        with open(path) as fh:
            vals = [float(v) for v in fh.read().split()]
        if len(vals) != 9:
            raise ValueError(f"{path}: expected 9 values, found {len(vals)}")
        return cls(vals)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for row in self.h:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.h, np.eye(3)))

    def apply(self, pts) -> np.ndarray:
        """Map ``(n, 2)`` points; raises :class:`ReprojectionError` at infinity."""
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        pts = pts.reshape(-1, 2)
        w = self.h[2, 0] * pts[:, 0] + self.h[2, 1] * pts[:, 1] + self.h[2, 2]
        if np.any(~(w > 1e-12)):
            raise ReprojectionError("point maps to infinity or behind the camera")
        x = (self.h[0, 0] * pts[:, 0] + self.h[0, 1] * pts[:, 1] + self.h[0, 2]) / w
        y = (self.h[1, 0] * pts[:, 0] + self.h[1, 1] * pts[:, 1] + self.h[1, 2]) / w
        out = np.stack([x, y], axis=1)
        return out[0] if single else out

    def jacobian(self, pt) -> np.ndarray:
        """2x2 Jacobian of the projective map at ``pt``."""
        x, y = float(pt[0]), float(pt[1])
        h = self.h
        w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
        if not w > 1e-12:
            raise ReprojectionError(f"point ({x}, {y}) maps to infinity")
        u = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w
        v = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w
        return np.array([
            [(h[0, 0] - u * h[2, 0]) / w, (h[0, 1] - u * h[2, 1]) / w],
            [(h[1, 0] - v * h[2, 0]) / w, (h[1, 1] - v * h[2, 1]) / w],
        ])


def reproject_frame(f: AffineFrame, H: Homography) -> AffineFrame:
    """First-order (affine) transfer of a frame through ``H``."""
    c = H.apply(f.center)
    J = H.jacobian(f.center)
    return AffineFrame.from_matrix(c, J @ f.A)


def _ellipse_halfwidths(A: np.ndarray) -> np.ndarray:
    M = A @ A.T
    return np.sqrt(np.diag(M))


def overlap_error(f1: AffineFrame, f2: AffineFrame,
                  normalize_radius: float | None = 30.0,
                  resolution: float = 2.0) -> float:
    """Rasterized ``1 - |E1 & E2| / |E1 | E2|`` of the two frame ellipses.

    Both frames are first rescaled about ``f1``'s center so that ``f1`` has
    equivalent radius ``normalize_radius`` (pass None to skip). Areas are
    counted on cell centers of a grid with ``resolution`` samples per pixel.
    """
    A1, A2 = f1.A, f2.A
    c1, c2 = f1.center, f2.center
    if normalize_radius is not None:
        s = normalize_radius / math.sqrt(abs(np.linalg.det(A1)))
        A1, A2 = s * A1, s * A2
        c2 = (c2 - c1) * s
        c1 = np.zeros(2)
    h1, h2 = _ellipse_halfwidths(A1), _ellipse_halfwidths(A2)
    lo = np.minimum(c1 - h1, c2 - h2)
    hi = np.maximum(c1 + h1, c2 + h2)
    if np.any(c1 + h1 < c2 - h2) or np.any(c2 + h2 < c1 - h1):
        return 1.0
    step = 1.0 / resolution
    nx = max(int(math.ceil((hi[0] - lo[0]) / step)), 1)
    ny = max(int(math.ceil((hi[1] - lo[1]) / step)), 1)
    xs = lo[0] + (np.arange(nx) + 0.5) * step
    ys = lo[1] + (np.arange(ny) + 0.5) * step
    X, Y = np.meshgrid(xs, ys)
    in1 = _inside(X, Y, c1, A1)
    in2 = _inside(X, Y, c2, A2)
    union = np.count_nonzero(in1 | in2)
    if union == 0:
        return 1.0
    return 1.0 - np.count_nonzero(in1 & in2) / union


def _inside(X, Y, c, A) -> np.ndarray:
    Q = np.linalg.inv(A @ A.T)
    dx, dy = X - c[0], Y - c[1]
    return Q[0, 0] * dx * dx + 2 * Q[0, 1] * dx * dy + Q[1, 1] * dy * dy <= 1.0


def frames_to_arrays(frames: Sequence[AffineFrame]) -> tuple[np.ndarray, np.ndarray]:
    """Stack frames into centers ``(n, 2)`` and matrices ``(n, 2, 2)``."""
    if len(frames) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2, 2))
    centers = np.array([[f.cx, f.cy] for f in frames], dtype=float)
    mats = np.array([f.A for f in frames], dtype=float)
    return centers, mats
