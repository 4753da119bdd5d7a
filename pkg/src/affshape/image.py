"""Grayscale image I/O, Gaussian smoothing, scale space and gradients.

Images are plain ``float32`` numpy arrays of shape ``(height, width)`` with
values in ``[0, 1]``; pixel ``(x, y)`` is ``img[y, x]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

LUMA = (0.299, 0.587, 0.114)
MIN_OCTAVE_SIZE = 32


class ImageIOError(OSError):
    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


def as_gray(arr) -> np.ndarray:
    img = np.asarray(arr, dtype=np.float32)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def _to_luma(rgb: np.ndarray) -> np.ndarray:
    r, g, b = (rgb[..., k].astype(np.float64) for k in range(3))
    return LUMA[0] * r + LUMA[1] * g + LUMA[2] * b


def _read_netpbm(path, data: bytes) -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ImageIOError(path, f"unsupported netpbm magic {magic!r}")
    channels = 3 if magic in (b"P3", b"P6") else 1
    # header: magic, width, height, maxval; '#' comments allowed between tokens
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ImageIOError(path, "truncated header")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ImageIOError(path, f"bad header tokens {tokens}") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise ImageIOError(path, f"bad dimensions or maxval {(width, height, maxval)}")
    count = width * height * channels
    if magic in (b"P5", b"P6"):
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[pos:pos + count * dtype.itemsize]
        if len(raw) < count * dtype.itemsize:
            raise ImageIOError(path, "truncated pixel data")
        vals = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    else:
        body = b" ".join(line.split(b"#")[0] for line in data[pos:].splitlines())
        try:
            vals = np.array([int(t) for t in body.split()[:count]], dtype=np.float64)
        except ValueError:
            raise ImageIOError(path, "non-integer pixel value") from None
        if vals.size < count:
            raise ImageIOError(path, "truncated pixel data")
    vals = vals / maxval
    if channels == 3:
        return _to_luma(vals.reshape(height, width, 3))
    return vals.reshape(height, width)


def load_image(path) -> np.ndarray:
    """Read PGM/PPM (P2, P3, P5, P6) or PNG into a gray ``float32`` array."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ImageIOError(path, exc.strerror or str(exc)) from exc
    if data[:1] == b"P":
        img = _read_netpbm(path, data)
    elif data[:8] == b"\x89PNG\r\n\x1a\n":
        img = _read_png(path)
    else:
        raise ImageIOError(path, "not a PGM/PPM or PNG file")
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _read_png(path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                return arr
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise ImageIOError(path, f"corrupt PNG: {exc}") from exc
    if arr.ndim == 3:
        return _to_luma(arr)
    return arr


def save_pgm(path, img) -> None:
    """Binary 8-bit PGM dump (debugging and fixtures)."""
    img = np.asarray(img)
    h, w = img.shape
    q = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(q.tobytes())


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, radius ``ceil(3 sigma)``, edge-clamped borders."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    img = np.asarray(img, dtype=np.float32)
    if sigma == 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    out = correlate1d(img.astype(np.float64), k, axis=1, mode="nearest")
    out = correlate1d(out, k, axis=0, mode="nearest")
    return out.astype(np.float32)


@dataclass
class Level:
    image: np.ndarray
    sigma: float  # blur in this octave's own pixel units
    octave: int
    index: int

    @property
    def step(self) -> int:
        """Original-image pixels per pixel of this level."""
        return 2 ** self.octave

    @property
    def abs_sigma(self) -> float:
        return self.sigma * self.step


@dataclass
class ScaleSpace:
    octaves: list[list[Level]] = field(default_factory=list)
    levels_per_octave: int = 3
    initial_sigma: float = 1.6
    source: np.ndarray | None = None  # unblurred input image

    def levels(self):
        for octave in self.octaves:
            yield from octave

    @property
    def shape(self) -> tuple[int, int]:
        return self.source.shape

    def nearest_level(self, abs_sigma: float) -> Level:
        """Level whose absolute blur is closest to ``abs_sigma`` in log scale."""
        best, best_d = None, math.inf
        for lev in self.levels():
            d = abs(math.log(lev.abs_sigma / abs_sigma))
            if d < best_d:
                best, best_d = lev, d
        return best


def build_pyramid(img, levels_per_octave: int = 3, initial_sigma: float = 1.6,
                  extra_levels: int = 2, assumed_blur: float = 0.0) -> ScaleSpace:
    """Gaussian scale space, halving resolution each octave.

    Each octave holds ``levels_per_octave + extra_levels`` images with blur
    ``initial_sigma * 2**(k / levels_per_octave)`` in octave pixels; the extra
    levels give every octave scale neighbours on both sides for extremum
    search. Octaves are added while the smaller side is at least 32 px.
    """
    if levels_per_octave < 1:
        raise ValueError("levels_per_octave must be >= 1")
    img = as_gray(img)
    ss = ScaleSpace(levels_per_octave=levels_per_octave, initial_sigma=initial_sigma,
                    source=img)
    inc0 = math.sqrt(max(initial_sigma ** 2 - assumed_blur ** 2, 0.0))
    base = gaussian_blur(img, inc0)
    if min(img.shape) < MIN_OCTAVE_SIZE:
        ss.octaves.append([Level(base, initial_sigma, 0, 0)])
        return ss
    n_levels = levels_per_octave + extra_levels
    octave = 0
    while min(base.shape) >= MIN_OCTAVE_SIZE:
        levels = [Level(base, initial_sigma, octave, 0)]
        for k in range(1, n_levels):
            sig = initial_sigma * 2.0 ** (k / levels_per_octave)
            prev = levels[-1]
            inc = math.sqrt(sig ** 2 - prev.sigma ** 2)
            levels.append(Level(gaussian_blur(prev.image, inc), sig, octave, k))
        ss.octaves.append(levels)
        # level with twice the base blur becomes the next octave's base
        src = levels[levels_per_octave] if levels_per_octave < n_levels else levels[-1]
        base = src.image[::2, ::2].copy()
        octave += 1
    return ss


def gradients(img) -> tuple[np.ndarray, np.ndarray]:
    """Central differences ``(f(x+1) - f(x-1)) / 2`` with clamped borders.

    Operates on the last two axes, so a stack of patches works too.
    """
    f = np.asarray(img, dtype=np.float64)
    pad = [(0, 0)] * (f.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(f, pad, mode="edge")
    gx = 0.5 * (p[..., 1:-1, 2:] - p[..., 1:-1, :-2])
    gy = 0.5 * (p[..., 2:, 1:-1] - p[..., :-2, 1:-1])
    return gx, gy
