"""Descriptor losses with in-batch hardest-negative mining, and Adam.

``s[i]`` and ``sdot[i]`` are matching descriptors. For pair ``i`` the hardest
negative is the closest of ``sdot[j]`` (distance to ``s[i]``) and ``s[j]``
(distance to ``sdot[i]``) over ``j != i``.

HardNegC treats the mined negative ``N`` as a constant: no gradient reaches
``N``, while the anchor of the negative distance is still pushed away from it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

MARGIN = 1.0


class BatchTooSmall(ValueError):
    pass


class LossKind(str, enum.Enum):
    POSDIST = "posdist"
    HARDNEG = "hardneg"
    HARDNEGC = "hardnegc"


class Side(str, enum.Enum):
    S = "s"
    SDOT = "sdot"


@dataclass
class PairBatch:
    s: np.ndarray
    sdot: np.ndarray

    def __post_init__(self):
        self.s = np.atleast_2d(np.asarray(self.s, dtype=np.float64))
        self.sdot = np.atleast_2d(np.asarray(self.sdot, dtype=np.float64))
        if self.s.shape != self.sdot.shape:
            raise ValueError(f"descriptor shapes differ: {self.s.shape} vs {self.sdot.shape}")

    @property
    def n(self) -> int:
        return self.s.shape[0]


@dataclass
class LossResult:
    value: float
    grad_s: np.ndarray
    grad_sdot: np.ndarray


def distance_matrix(a, b) -> np.ndarray:
    """``D[i, j] = ||a[i] - b[j]||`` computed from differences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    D = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        diff = b - a[i]
        D[i] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return D


def _dist_grad(x, y, d):
    """Gradient of ``||x - y||`` w.r.t. ``x``; zero where the distance is 0."""
    d = np.asarray(d, dtype=np.float64)
    safe = np.where(d > 0, d, 1.0)
    return np.where((d > 0)[..., None], (x - y) / safe[..., None], 0.0)


def _mine(D: np.ndarray):
    """Hardest negatives for every pair from ``D[i, j] = d(s_i, sdot_j)``.

    Candidates for pair ``i`` are ordered ``j = 0..n-1`` with the ``s_j``
    candidate (``D[j, i]``) before the ``sdot_j`` one (``D[i, j]``), so argmin
    applies the tie rule: smallest ``j``, s-side first.
    """
    n = D.shape[0]
    cand = np.empty((n, 2 * n))
    cand[:, 0::2] = D.T
    cand[:, 1::2] = D
    idx = np.arange(n)
    cand[idx, 2 * idx] = np.inf
    cand[idx, 2 * idx + 1] = np.inf
    k = np.argmin(cand, axis=1)
    return cand[idx, k], k // 2, k % 2  # side: 0 -> s_j, 1 -> sdot_j


def hardest_negative(b: PairBatch, i: int) -> tuple[float, int, Side]:
    if b.n < 2:
        raise BatchTooSmall("negative mining needs at least two pairs")
    dist, j, side = _mine(distance_matrix(b.s, b.sdot))
    return float(dist[i]), int(j[i]), Side.S if side[i] == 0 else Side.SDOT


def posdist_loss(b: PairBatch) -> LossResult:
    d = np.linalg.norm(b.s - b.sdot, axis=1)
    g = _dist_grad(b.s, b.sdot, d) / b.n
    return LossResult(float(d.mean()), g, -g)


def _triplet(b: PairBatch, negative_grad: str) -> LossResult:
    # negative_grad: "both" (HardNeg), "anchor" (HardNegC: N held constant) or "none"
    n = b.n
    if n < 2:
        raise BatchTooSmall("negative mining needs at least two pairs")
    D = distance_matrix(b.s, b.sdot)
    dneg, j, side = _mine(D)
    idx = np.arange(n)
    dpos = D[idx, idx]
    terms = MARGIN + dpos - dneg
    active = terms > 0
    value = float(np.maximum(terms, 0.0).sum() / n)

    gs = np.zeros_like(b.s)
    gd = np.zeros_like(b.sdot)
    gpos = _dist_grad(b.s, b.sdot, dpos) * (active / n)[:, None]
    gs += gpos
    gd -= gpos
    if negative_grad != "none":
        w = (active / n)[:, None]
        # side 1: N = sdot_j, distance d(s_i, sdot_j); side 0: N = s_j, distance d(s_j, sdot_i)
        on_sdot = side == 1
        anchor = np.where(on_sdot[:, None], b.s, b.sdot)
        neg = np.where(on_sdot[:, None], b.sdot[j], b.s[j])
        gn = _dist_grad(anchor, neg, dneg) * w  # d dneg / d anchor, scaled
        # loss has -dneg: anchor moves away
        np.add.at(gs, idx[on_sdot], -gn[on_sdot])
        np.add.at(gd, idx[~on_sdot], -gn[~on_sdot])
        if negative_grad == "both":
            np.add.at(gd, j[on_sdot], gn[on_sdot])
            np.add.at(gs, j[~on_sdot], gn[~on_sdot])
    return LossResult(value, gs, gd)


def hardneg_loss(b: PairBatch) -> LossResult:
    return _triplet(b, "both")


def hardnegc_loss(b: PairBatch) -> LossResult:
    return _triplet(b, "anchor")


LOSSES = {
    LossKind.POSDIST: posdist_loss,
    LossKind.HARDNEG: hardneg_loss,
    LossKind.HARDNEGC: hardnegc_loss,
}


def compute_loss(kind, b: PairBatch) -> LossResult:
    return LOSSES[LossKind(kind)](b)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)


def adam_step(params, grads, st: AdamState) -> np.ndarray:
    """One bias-corrected Adam update; ``st`` is advanced in place."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}")
    if st.m is None:
        st.m = np.zeros_like(params)
        st.v = np.zeros_like(params)
    elif st.m.shape != params.shape:
        raise ValueError(f"Adam buffers have shape {st.m.shape}, params {params.shape}")
    st.t += 1
    st.m = st.beta1 * st.m + (1 - st.beta1) * grads
    st.v = st.beta2 * st.v + (1 - st.beta2) * grads * grads
    m_hat = st.m / (1 - st.beta1 ** st.t)
    v_hat = st.v / (1 - st.beta2 ** st.t)
    return params - st.lr * m_hat / (np.sqrt(v_hat) + st.eps)
