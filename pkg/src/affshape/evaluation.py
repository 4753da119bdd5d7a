"""Matching and repeatability protocols."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import AffineFrame, Homography, overlap_error, reproject_frame
from .loss import BatchTooSmall

RATIO_THRESHOLD = 0.8
PX_THRESHOLD = 3.0
OVERLAP_THRESHOLD = 0.4


@dataclass(frozen=True)
class Match:
    index_a: int
    index_b: int
    dist_first: float
    dist_second: float
    ratio: float


@dataclass
class RepeatabilityReport:
    n_correspondences: int
    repeatability: float
    n_common_a: int
    n_common_b: int

    def to_dict(self) -> dict:
        return asdict(self)


def match_ratio_test(desc_a, desc_b, ratio_threshold: float = RATIO_THRESHOLD,
                     mutual: bool = False) -> list[Match]:
    """Nearest-neighbour matching a -> b with the first/second distance ratio.

    A match is kept when ``ratio < ratio_threshold`` (strict). Neighbour ties
    resolve to the lower index in ``desc_b``.
    """
    A = np.asarray(desc_a, dtype=np.float64)
    B = np.asarray(desc_b, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if len(B) < 2:
        raise BatchTooSmall("ratio test needs at least two candidates in desc_b")
    if len(A) == 0:
        return []
    D = cdist(A, B)
    order = np.argsort(D, axis=1, kind="stable")
    rows = np.arange(len(A))
    j1, j2 = order[:, 0], order[:, 1]
    d1, d2 = D[rows, j1], D[rows, j2]
    if mutual:
        back = np.argmin(D, axis=0)
    out = []
    for i in range(len(A)):
        first, second = float(d1[i]), float(d2[i])
        if second == 0.0:
            ratio = 1.0 if first == 0.0 else math.inf
        else:
            ratio = first / second
        if not ratio < ratio_threshold:
            continue
        if mutual and back[j1[i]] != i:
            continue
        out.append(Match(i, int(j1[i]), first, second, ratio))
    return out


def _centers(frames) -> np.ndarray:
    if len(frames) == 0:
        return np.zeros((0, 2))
    if isinstance(frames, np.ndarray):
        return frames.reshape(-1, 2).astype(float)
    return np.array([[f.cx, f.cy] for f in frames], dtype=float)


def count_correct_matches(matches, frames_a, frames_b, H: Homography,
                          px_threshold: float = PX_THRESHOLD) -> int:
    """Matches whose reprojected ``a`` center lies within ``px_threshold`` (inclusive)."""
    if not matches:
        return 0
    ca = _centers(frames_a)
    cb = _centers(frames_b)
    ia = np.array([m.index_a for m in matches])
    ib = np.array([m.index_b for m in matches])
    proj = H.apply(ca[ia])
    err = np.hypot(proj[:, 0] - cb[ib, 0], proj[:, 1] - cb[ib, 1])
    return int(np.count_nonzero(err <= px_threshold))


def _inside(pts: np.ndarray, dims) -> np.ndarray:
    h, w = dims
    return (pts[:, 0] >= 0) & (pts[:, 0] <= w - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= h - 1)


def common_region(frames_a, frames_b, H: Homography, dims_a, dims_b):
    """Indices of frames whose (back-)projected centers fall in the other image.

    ``dims`` are ``(height, width)``; pass None to keep every frame.
    """
    ca, cb = _centers(frames_a), _centers(frames_b)
    keep_a = np.arange(len(ca))
    keep_b = np.arange(len(cb))
    if dims_b is not None and len(ca):
        keep_a = keep_a[_inside(H.apply(ca), dims_b)]
    if dims_a is not None and len(cb):
        keep_b = keep_b[_inside(H.inverse().apply(cb), dims_a)]
    return keep_a, keep_b


def overlap_candidates(proj_a, frames_b, overlap_threshold: float):
    """All ``(err, i, j)`` with ``overlap_error(proj_a[i], frames_b[j]) < threshold``."""
    out = []
    if not proj_a or not frames_b:
        return out
    ca = _centers(proj_a)
    cb = _centers(frames_b)
    ra = np.array([np.linalg.norm(f.A, 2) for f in proj_a])
    rb = np.array([np.linalg.norm(f.A, 2) for f in frames_b])
    near = cdist(ca, cb) <= ra[:, None] + rb[None, :]
    for i, j in zip(*np.nonzero(near)):
        err = overlap_error(proj_a[i], frames_b[j])
        if err < overlap_threshold:
            out.append((err, int(i), int(j)))
    return out


def greedy_assignment(candidates) -> list[tuple[int, int]]:
    """One-to-one pairs taken in order of increasing overlap error."""
    used_a, used_b, pairs = set(), set(), []
    for _, i, j in sorted(candidates):
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    return pairs


def repeatability(frames_a, frames_b, H: Homography, img_a_dims, img_b_dims,
                  overlap_threshold: float = OVERLAP_THRESHOLD) -> RepeatabilityReport:
    """Overlap-error repeatability of two frame sets related by ``H`` (a -> b)."""
    ka, kb = common_region(frames_a, frames_b, H, img_a_dims, img_b_dims)
    n_a, n_b = len(ka), len(kb)
    if min(n_a, n_b) == 0:
        return RepeatabilityReport(0, 0.0, n_a, n_b)
    proj = [reproject_frame(frames_a[i], H) for i in ka]
    sub_b = [frames_b[j] for j in kb]
    pairs = greedy_assignment(overlap_candidates(proj, sub_b, overlap_threshold))
    n = len(pairs)
    return RepeatabilityReport(n, n / min(n_a, n_b), n_a, n_b)


@dataclass
class MatchingReport:
    n_matches: int
    n_correct: int
    matching_score: float
    n_common_a: int
    n_common_b: int


def matching_score_report(frames_a, frames_b, desc_a, desc_b, H: Homography,
                          ratio_threshold: float = RATIO_THRESHOLD,
                          px_threshold: float = PX_THRESHOLD,
                          dims_a=None, dims_b=None) -> MatchingReport:
    ka, kb = common_region(frames_a, frames_b, H, dims_a, dims_b)
    denom = min(len(ka), len(kb))
    if denom == 0 or len(kb) < 2:
        return MatchingReport(0, 0, 0.0, len(ka), len(kb))
    da = np.asarray(desc_a)[ka]
    db = np.asarray(desc_b)[kb]
    matches = match_ratio_test(da, db, ratio_threshold)
    ca = _centers(frames_a)[ka]
    cb = _centers(frames_b)[kb]
    correct = count_correct_matches(matches, ca, cb, H, px_threshold)
    return MatchingReport(len(matches), correct, correct / denom, len(ka), len(kb))


def matching_score(frames_a, frames_b, desc_a, desc_b, H: Homography,
                   ratio_threshold: float = RATIO_THRESHOLD,
                   px_threshold: float = PX_THRESHOLD, dims_a=None, dims_b=None) -> float:
    """Correct ratio-test matches over the smaller common-region frame count."""
    return matching_score_report(frames_a, frames_b, desc_a, desc_b, H, ratio_threshold,
                                 px_threshold, dims_a, dims_b).matching_score
