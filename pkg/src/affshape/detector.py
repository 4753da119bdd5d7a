"""Hessian keypoints and Baumberg affine shape adaptation."""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .geometry import AffineFrame, elongation
from .image import ScaleSpace, build_pyramid, gradients
from .patch import sample_batch

DEFAULT_THRESHOLD = 1e-4
MAX_ITER = 16
MAX_ELONGATION = 6.0
CONVERGENCE_RATIO = 1.05
WINDOW = 19
WINDOW_MR = 3.0


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    sigma: float
    response: float
    octave: int = 0
    level: int = 0


class Outcome(str, enum.Enum):
    CONVERGED = "converged"
    REJECTED_ELONGATION = "rejected_elong"
    REJECTED_BOUNDARY = "rejected_border"
    REJECTED_NONCONVERGENCE = "rejected_nonconv"


@dataclass(frozen=True)
class AdaptationResult:
    outcome: Outcome
    frame: AffineFrame | None = None
    iterations: int = 0

    @property
    def converged(self) -> bool:
        return self.outcome is Outcome.CONVERGED


def hessian_response(level_image: np.ndarray, sigma: float) -> np.ndarray:
    """Scale-normalized determinant of the Hessian, ``sigma^4 (Ixx Iyy - Ixy^2)``."""
    f = np.pad(np.asarray(level_image, dtype=np.float64), 1, mode="edge")
    c = f[1:-1, 1:-1]
    ixx = f[1:-1, 2:] - 2 * c + f[1:-1, :-2]
    iyy = f[2:, 1:-1] - 2 * c + f[:-2, 1:-1]
    ixy = 0.25 * (f[2:, 2:] - f[2:, :-2] - f[:-2, 2:] + f[:-2, :-2])
    return sigma ** 4 * (ixx * iyy - ixy * ixy)


def _parabola_offset(left, mid, right):
    denom = left - 2 * mid + right
    safe = np.where(denom < 0, denom, -1.0)
    off = np.where(denom < 0, 0.5 * (left - right) / safe, 0.0)
    return np.clip(off, -0.5, 0.5)


def hessian_detect(ss: ScaleSpace, threshold: float = DEFAULT_THRESHOLD) -> list[Keypoint]:
    """Strict 3x3x3 maxima of the Hessian response above ``threshold``.

    Positions get a per-axis parabolic sub-pixel refinement and are returned
    in original image coordinates, strongest first.
    """
    kps = []
    for octave in ss.octaves:
        if len(octave) < 3:
            continue
        R = np.stack([hessian_response(lev.image, lev.sigma) for lev in octave])
        L, H, W = R.shape
        if H < 3 or W < 3:
            continue
        core = R[1:-1, 1:-1, 1:-1]
        is_max = core > threshold
        for dz in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if dz == dy == dx == 0:
                        continue
                    nb = R[1 + dz:L - 1 + dz, 1 + dy:H - 1 + dy, 1 + dx:W - 1 + dx]
                    is_max &= core > nb
        zs, ys, xs = np.nonzero(is_max)
        zs, ys, xs = zs + 1, ys + 1, xs + 1
        mid = R[zs, ys, xs]
        ox = _parabola_offset(R[zs, ys, xs - 1], mid, R[zs, ys, xs + 1])
        oy = _parabola_offset(R[zs, ys - 1, xs], mid, R[zs, ys + 1, xs])
        for z, y, x, dx_, dy_, r in zip(zs, ys, xs, ox, oy, mid):
            lev = octave[z]
            step = lev.step
            kps.append(Keypoint(float((x + dx_) * step), float((y + dy_) * step),
                                float(lev.abs_sigma), float(r), lev.octave, lev.index))
    kps.sort(key=lambda k: (-k.response, k.y, k.x))
    return kps


def second_moment_matrix(window, weight_sigma: float) -> np.ndarray:
    """Gaussian-weighted mean of gradient outer products over ``window``."""
    w_img = np.asarray(window, dtype=np.float64)
    gx, gy = gradients(w_img)
    h, w = w_img.shape
    ry = np.arange(h) - (h - 1) / 2.0
    rx = np.arange(w) - (w - 1) / 2.0
    wt = np.exp(-(ry[:, None] ** 2 + rx[None, :] ** 2) / (2 * weight_sigma ** 2))
    total = wt.sum()
    a = float((wt * gx * gx).sum() / total)
    b = float((wt * gx * gy).sum() / total)
    c = float((wt * gy * gy).sum() / total)
    return np.array([[a, b], [b, c]])


def sym_eig2(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigen-decomposition of a symmetric 2x2 matrix.

    Returns eigenvalues in descending order and the matching unit
    eigenvectors as columns.
    """
    a, b, c = float(m[0, 0]), float(m[0, 1]), float(m[1, 1])
    half_tr = 0.5 * (a + c)
    rad = math.hypot(0.5 * (a - c), b)
    l1, l2 = half_tr + rad, half_tr - rad
    if b == 0.0:
        v = np.array([1.0, 0.0]) if a >= c else np.array([0.0, 1.0])
    else:
        # first row of (m - l1 I) v = 0
        v = np.array([b, l1 - a])
        v /= math.hypot(v[0], v[1])
    V = np.array([[v[0], -v[1]], [v[1], v[0]]])
    return np.array([l1, l2]), V


def inv_sqrt_spd(m: np.ndarray) -> np.ndarray:
    vals, V = sym_eig2(m)
    return V @ np.diag(vals ** -0.5) @ V.T


def baumberg_adapt(ss: ScaleSpace, kp: Keypoint, max_iter: int = MAX_ITER,
                   window: int = WINDOW, convergence_ratio: float = CONVERGENCE_RATIO,
                   max_elongation: float = MAX_ELONGATION, sample_from: str = "scalespace",
                   window_mr: float = WINDOW_MR) -> AdaptationResult:
    """Iterate ``U <- U mu^-1/2`` (det-normalized) until the window is isotropic.

    ``mu`` is the second moment matrix of a ``window x window`` patch sampled
    through the current shape at the detection scale, covering
    ``window_mr`` sigma on each side. ``sample_from`` selects the scale-space
    level of the detection ("scalespace") or the unblurred input ("image").
    Rejections: any window sample off the image, elongation above
    ``max_elongation``, or no convergence within ``max_iter`` iterations.
    """
    if sample_from == "scalespace":
        lev = ss.nearest_level(kp.sigma)
        src, step = lev.image, float(lev.step)
    elif sample_from == "image":
        src, step = ss.source, 1.0
    else:
        raise ValueError(f"unknown sample_from {sample_from!r}")
    center = np.array([kp.x, kp.y]) / step
    weight_sigma = (window - 1) / 4.0
    U = np.eye(2)
    for it in range(1, max_iter + 1):
        vals, outside = sample_batch(src, center, kp.sigma * U / step, window, window_mr)
        if outside.any():
            return AdaptationResult(Outcome.REJECTED_BOUNDARY, iterations=it)
        mu = second_moment_matrix(vals[0], weight_sigma)
        ev, _ = sym_eig2(mu)
        if not ev[1] > 0:
            return AdaptationResult(Outcome.REJECTED_NONCONVERGENCE, iterations=it)
        if ev[0] / ev[1] <= convergence_ratio:
            frame = AffineFrame.from_matrix((kp.x, kp.y), kp.sigma * U)
            return AdaptationResult(Outcome.CONVERGED, frame, it)
        U = U @ inv_sqrt_spd(mu)
        U /= math.sqrt(np.linalg.det(U))
        if elongation(U) > max_elongation:
            return AdaptationResult(Outcome.REJECTED_ELONGATION, iterations=it)
    return AdaptationResult(Outcome.REJECTED_NONCONVERGENCE, iterations=max_iter)


def adapt_all(ss: ScaleSpace, kps, **kwargs) -> tuple[list[AffineFrame], Counter]:
    """Run :func:`baumberg_adapt` over ``kps``; stats count every outcome."""
    frames, stats = [], Counter({o.value: 0 for o in Outcome})
    for kp in kps:
        res = baumberg_adapt(ss, kp, **kwargs)
        stats[res.outcome.value] += 1
        if res.converged:
            frames.append(res.frame)
    return frames, stats


def circular_frames(kps) -> list[AffineFrame]:
    return [AffineFrame.circle(k.x, k.y, k.sigma) for k in kps]


def detect_frames(img, threshold: float = DEFAULT_THRESHOLD, affine: bool = True,
                  levels_per_octave: int = 3, initial_sigma: float = 1.6, **adapt_kw):
    """Hessian detection followed by (optional) Baumberg adaptation.

    Returns ``(frames, responses, stats)``; with ``affine=False`` every
    keypoint becomes a circular frame of radius sigma.
    """
    ss = build_pyramid(img, levels_per_octave, initial_sigma)
    kps = hessian_detect(ss, threshold)
    stats = Counter({o.value: 0 for o in Outcome})
    frames, responses = [], []
    for kp in kps:
        if affine:
            res = baumberg_adapt(ss, kp, **adapt_kw)
            stats[res.outcome.value] += 1
            if not res.converged:
                continue
            frames.append(res.frame)
        else:
            frames.append(AffineFrame.circle(kp.x, kp.y, kp.sigma))
        responses.append(kp.response)
    stats["detected"] = len(kps)
    stats["adapted"] = len(frames)
    return frames, responses, stats
