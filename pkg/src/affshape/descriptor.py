"""Patch descriptors: SIFT, RootSIFT and mean-normalized raw pixels."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import rotation
from .image import gradients
from .patch import Patch, normalize_values, sample_patch

SIFT_CELLS = 4
SIFT_BINS = 8
SIFT_CLAMP = 0.2
ORI_BINS = 36


class KindMismatch(ValueError):
    pass


class PreconditionError(ValueError):
    pass


class DescriptorKind(str, enum.Enum):
    SIFT = "sift"
    ROOTSIFT = "rootsift"
    RAWPIXELS = "rawpixels"


@dataclass
class Descriptor:
    kind: DescriptorKind
    values: np.ndarray

    def __len__(self):
        return len(self.values)


def _as_stack(patches) -> np.ndarray:
    if isinstance(patches, Patch):
        patches = patches.values
    arr = np.asarray(patches, dtype=np.float64)
    return arr[None] if arr.ndim == 2 else arr


def sift_batch(patches) -> np.ndarray:
    """SIFT vectors of a stack of square patches, shape ``(n, 128)``.

    Gradient votes are split trilinearly over the 4x4 spatial cells and the
    8 orientation bins, weighted by a Gaussian of sigma ``S/2``.
    """
    P = _as_stack(patches)
    n, S, S2 = P.shape
    if S != S2 or S < 16:
        raise PreconditionError(f"SIFT needs square patches of side >= 16, got {P.shape[1:]}")
    gx, gy = gradients(P)
    mag = np.hypot(gx, gy)
    ori = np.mod(np.arctan2(gy, gx), 2 * np.pi)

    c = (S - 1) / 2.0
    r = np.arange(S) - c
    w = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * (S / 2.0) ** 2))
    weighted = mag * w

    cell = S / SIFT_CELLS
    pos = (np.arange(S) + 0.5) / cell - 0.5
    b0 = np.floor(pos).astype(np.int64)
    f = pos - b0
    ob = ori / (2 * np.pi / SIFT_BINS)
    o0 = np.floor(ob).astype(np.int64)
    fo = ob - o0
    o0 %= SIFT_BINS
    o1 = (o0 + 1) % SIFT_BINS

    hist = np.zeros(n * SIFT_CELLS * SIFT_CELLS * SIFT_BINS)
    base = (np.arange(n) * SIFT_CELLS * SIFT_CELLS * SIFT_BINS)[:, None, None]
    for dy in (0, 1):
        by = b0 + dy
        wy = f if dy else 1 - f
        oky = (by >= 0) & (by < SIFT_CELLS)
        for dx in (0, 1):
            bx = b0 + dx
            wx = f if dx else 1 - f
            okx = (bx >= 0) & (bx < SIFT_CELLS)
            ok = (oky[:, None] & okx[None, :])
            sp_w = (wy[:, None] * wx[None, :]) * ok
            cell_idx = (np.clip(by, 0, SIFT_CELLS - 1)[:, None] * SIFT_CELLS
                        + np.clip(bx, 0, SIFT_CELLS - 1)[None, :]) * SIFT_BINS
            for ob_idx, ow in ((o0, 1 - fo), (o1, fo)):
                idx = base + cell_idx[None] + ob_idx
                hist += np.bincount(idx.ravel(), (weighted * sp_w[None] * ow).ravel(),
                                    minlength=hist.size)
    desc = hist.reshape(n, -1)
    return _sift_normalize(desc)


def _sift_normalize(desc: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(desc, axis=1, keepdims=True)
    ok = norm[:, 0] > 1e-12
    out = np.zeros_like(desc)
    out[ok] = desc[ok] / norm[ok]
    out = np.minimum(out, SIFT_CLAMP)
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    out[ok] = out[ok] / norm[ok]
    return out


def rootsift_batch(sift: np.ndarray) -> np.ndarray:
    sift = np.asarray(sift, dtype=np.float64)
    l1 = sift.sum(axis=-1, keepdims=True)
    safe = np.where(l1 > 0, l1, 1.0)
    return np.where(l1 > 0, np.sqrt(np.maximum(sift, 0) / safe), 0.0)


def sift_descriptor(p: Patch) -> Descriptor:
    return Descriptor(DescriptorKind.SIFT, sift_batch(p)[0])


def rootsift(d: Descriptor) -> Descriptor:
    """Hellinger mapping: L1-normalize, then elementwise square root."""
    if d.kind != DescriptorKind.SIFT:
        raise KindMismatch(f"rootsift expects a SIFT descriptor, got {d.kind.value}")
    if np.any(d.values < 0):
        raise PreconditionError("SIFT values must be non-negative")
    return Descriptor(DescriptorKind.ROOTSIFT, rootsift_batch(d.values[None])[0])


def raw_pixel_descriptor(p: Patch) -> Descriptor:
    if not p.normalized:
        raise PreconditionError("raw pixel descriptor needs a normalized patch")
    return Descriptor(DescriptorKind.RAWPIXELS, np.asarray(p.values, dtype=np.float64).ravel())


def describe_batch(normalized_patches: np.ndarray, kind) -> np.ndarray:
    """Descriptors for a stack of already normalized patches."""
    kind = DescriptorKind(kind)
    P = _as_stack(normalized_patches)
    if kind == DescriptorKind.RAWPIXELS:
        return P.reshape(P.shape[0], -1)
    s = sift_batch(P)
    return rootsift_batch(s) if kind == DescriptorKind.ROOTSIFT else s


def dominant_orientation(p) -> tuple[float, bool]:
    """Peak of the 36-bin gradient orientation histogram.

    Returns ``(angle, degenerate)``: the angle in radians in ``(-pi, pi]``
    (image axes, y down) and whether the patch had no gradient at all.
    Bin ``k`` is centered on ``k * 10`` degrees.
    """
    P = _as_stack(p)[0]
    S = P.shape[0]
    if S < 16:
        raise PreconditionError("orientation needs patches of side >= 16")
    gx, gy = gradients(P)
    mag = np.hypot(gx, gy)
    if not np.any(mag > 1e-12):
        return 0.0, True
    c = (S - 1) / 2.0
    r = np.arange(S) - c
    w = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * (S / 4.0) ** 2))
    width = 2 * np.pi / ORI_BINS
    ob = np.mod(np.arctan2(gy, gx), 2 * np.pi) / width
    b0 = np.floor(ob).astype(np.int64)
    fo = ob - b0
    hist = (np.bincount((b0 % ORI_BINS).ravel(), (mag * w * (1 - fo)).ravel(), minlength=ORI_BINS)
            + np.bincount(((b0 + 1) % ORI_BINS).ravel(), (mag * w * fo).ravel(), minlength=ORI_BINS))
    for _ in range(2):
        hist = (np.roll(hist, 1) + hist + np.roll(hist, -1)) / 3.0
    k = int(np.argmax(hist))
    left, mid, right = hist[(k - 1) % ORI_BINS], hist[k], hist[(k + 1) % ORI_BINS]
    denom = left - 2 * mid + right
    offset = 0.5 * (left - right) / denom if denom < 0 else 0.0
    angle = (k + offset) * width
    angle = math.atan2(math.sin(angle), math.cos(angle))
    if angle == -math.pi:
        angle = math.pi
    return angle, False


def distance(a: Descriptor, b: Descriptor) -> float:
    if a.kind != b.kind or len(a) != len(b):
        raise KindMismatch(f"cannot compare {a.kind.value}[{len(a)}] with {b.kind.value}[{len(b)}]")
    return float(np.linalg.norm(a.values - b.values))


def _frame_patches(img, frames, S, mr_scale):
    out = np.empty((len(frames), S, S))
    for k, f in enumerate(frames):
        out[k] = sample_patch(img, f, S, mr_scale).values
    return out


def orient_frames(img, frames, S: int = 32, mr_scale: float = 3.0):
    """Rotate each frame so its dominant gradient points along the patch x axis.

    ``img`` may be an image or a scale space, as for :func:`sample_patch`.
    Frames with no gradient keep their matrix.
    """
    out = []
    for f, p in zip(frames, _frame_patches(img, frames, S, mr_scale)):
        angle, degenerate = dominant_orientation(p)
        out.append(f if degenerate else f.with_matrix(f.A @ rotation(-angle)))
    return out


def describe_frames(img, frames, kind, S: int = 32, mr_scale: float = 3.0) -> np.ndarray:
    """Descriptor matrix, one row per frame."""
    if not frames:
        n = S * S if DescriptorKind(kind) == DescriptorKind.RAWPIXELS else 128
        return np.zeros((0, n))
    y, _ = normalize_values(_frame_patches(img, frames, S, mr_scale))
    return describe_batch(y, kind)
