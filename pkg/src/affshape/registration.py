"""Descriptor-driven optimization experiments.

``toy_experiment`` moves free 2-D points under a descriptor loss.
``register_shapes`` moves the affine shapes of corresponding features in two
images so as to minimize a loss on their descriptors, with frame centers
held fixed.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import descriptor as desc_mod
from .descriptor import DescriptorKind
from .geometry import (AffineFrame, Homography, elongations, frames_to_arrays,
                       geometric_error_batch, rotation)
from .image import build_pyramid
from .loss import AdamState, LossKind, PairBatch, adam_step, compute_loss
from .patch import (DEFAULT_MR_SCALE, DEFAULT_SIZE, MAX_CLAMPED_FRACTION, normalize_backward,
                    normalize_values, sample_batch)
from .evaluation import PX_THRESHOLD, RATIO_THRESHOLD, matching_score

COLLAPSE_ELONGATION = 6.0
CSV_HEADER = ("step", "loss", "E", "collapsed_frac", "match_score")


class EmptyExperiment(RuntimeError):
    pass


class Coupling(str, enum.Enum):
    COUPLED = "coupled"
    INDEPENDENT = "independent"


class GradientMode(str, enum.Enum):
    ANALYTIC = "analytic"
    FINITEDIFF = "finitediff"


# ---------------------------------------------------------------------------
# toy experiment


@dataclass
class ToyConfig:
    n_pairs: int = 5
    dims: int = 2
    steps: int = 150
    loss: LossKind = LossKind.HARDNEGC
    lr: float = 0.01
    seed: int = 1

    def __post_init__(self):
        self.loss = LossKind(self.loss)
        if self.n_pairs < 2:
            raise ValueError("toy experiment needs at least two pairs")


@dataclass
class ToyResult:
    positions: np.ndarray  # (steps + 1, 2, n_pairs, dims): side 0 = s, side 1 = sdot
    losses: np.ndarray  # (steps + 1,)

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]


def toy_initial_points(cfg: ToyConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    return rng.uniform(0.0, 1.0, size=(2, cfg.n_pairs, cfg.dims))


def toy_experiment(cfg: ToyConfig) -> ToyResult:
    pts = toy_initial_points(cfg)
    p = pts.ravel().copy()
    st = AdamState(lr=cfg.lr)
    positions = [pts.copy()]
    losses = []
    for step in range(cfg.steps + 1):
        s, sdot = p.reshape(pts.shape)
        res = compute_loss(cfg.loss, PairBatch(s, sdot))
        losses.append(res.value)
        if step == cfg.steps:
            break
        p = adam_step(p, np.concatenate([res.grad_s.ravel(), res.grad_sdot.ravel()]), st)
        positions.append(p.reshape(pts.shape).copy())
    return ToyResult(np.array(positions), np.array(losses))


def positive_distances(points: np.ndarray) -> np.ndarray:
    return np.linalg.norm(points[0] - points[1], axis=-1)


def min_cross_pair_distance(points: np.ndarray) -> float:
    """Smallest distance between any two points that belong to different pairs."""
    n = points.shape[1]
    allp = points.reshape(2 * n, -1)
    label = np.tile(np.arange(n), 2)
    diff = allp[:, None, :] - allp[None, :, :]
    D = np.sqrt((diff ** 2).sum(-1))
    D[label[:, None] == label[None, :]] = np.inf
    return float(D.min())


# ---------------------------------------------------------------------------
# perturbations


def random_affine_perturbation(rng: np.random.Generator, tilt_max: float,
                               rotation_tied: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Random det-1 pair ``R(phi) R(-psi) diag(t, 1) R(psi) / sqrt(t)``.

    ``t ~ U[1, tilt_max]`` and ``psi ~ U[0, pi)`` are drawn per matrix;
    ``phi ~ U[-pi, pi)`` is shared by the pair when ``rotation_tied``.
    """
    if tilt_max < 1:
        raise ValueError("tilt_max must be >= 1")
    phi = rng.uniform(-math.pi, math.pi)
    phi_dot = phi if rotation_tied else rng.uniform(-math.pi, math.pi)

    def one(angle):
        t = rng.uniform(1.0, tilt_max)
        psi = rng.uniform(0.0, math.pi)
        if t == 1.0:
            return rotation(angle)
        skew = rotation(-psi) @ np.diag([t, 1.0]) @ rotation(psi)
        return rotation(angle) @ skew / math.sqrt(t)

    return one(phi), one(phi_dot)


def collapsed_fraction(frames) -> float:
    """Fraction of frames with elongation above 6."""
    if len(frames) == 0:
        return 0.0
    if isinstance(frames, np.ndarray):
        mats = frames.reshape(-1, 2, 2)
    else:
        mats = np.array([f.A if isinstance(f, AffineFrame) else f for f in frames], dtype=float)
    return float(np.mean(elongations(mats) > COLLAPSE_ELONGATION))


# ---------------------------------------------------------------------------
# shape registration


@dataclass
class RegistrationConfig:
    loss: LossKind = LossKind.HARDNEGC
    descriptor: DescriptorKind = DescriptorKind.RAWPIXELS
    coupling: Coupling = Coupling.INDEPENDENT
    steps: int = 150
    lr: float = 0.005
    noise: float = 1.0  # tilt_max of the initial perturbation, 1 = none
    gradient_mode: GradientMode | None = None  # None: analytic for raw pixels
    seed: int = 0
    patch_size: int = DEFAULT_SIZE
    mr_scale: float = DEFAULT_MR_SCALE
    sample_from: str = "image"
    fd_step: float = 1e-3
    ratio_threshold: float = RATIO_THRESHOLD
    px_threshold: float = PX_THRESHOLD
    unit_norm_loss: bool = True  # feed the loss L2-normalized descriptors

    def __post_init__(self):
        self.loss = LossKind(self.loss)
        self.descriptor = DescriptorKind(self.descriptor)
        self.coupling = Coupling(self.coupling)
        if self.gradient_mode is None:
            self.gradient_mode = (GradientMode.ANALYTIC if self.descriptor == DescriptorKind.RAWPIXELS
                                  else GradientMode.FINITEDIFF)
        self.gradient_mode = GradientMode(self.gradient_mode)
        if self.gradient_mode == GradientMode.ANALYTIC and self.descriptor != DescriptorKind.RAWPIXELS:
            raise ValueError("analytic gradients are only available for raw pixel descriptors")
        if self.sample_from not in ("image", "scalespace"):
            raise ValueError(f"unknown sample_from {self.sample_from!r}")


@dataclass
class StepRecord:
    step: int
    loss: float
    E: float
    collapsed_frac: float
    match_score: float


@dataclass
class Trajectory:
    records: list[StepRecord] = field(default_factory=list)
    n_frames: int = 0
    n_dropped: int = 0
    final_ref: np.ndarray | None = field(default=None, repr=False)
    final_tgt: np.ndarray | None = field(default=None, repr=False)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.records:
            w.writerow([r.step] + [repr(float(getattr(r, k))) for k in CSV_HEADER[1:]])
        return buf.getvalue()


class _View:
    """One image as seen by a set of frames: source pixels and unit conversion."""

    def __init__(self, img, centers, scales, sample_from):
        self.centers = centers
        if sample_from == "scalespace":
            ss = build_pyramid(img)
            levels = [ss.nearest_level(s) for s in scales]
            self.groups = {}
            for i, lev in enumerate(levels):
                self.groups.setdefault((lev.octave, lev.index), (lev, []))[1].append(i)
        else:
            self.groups = {None: (None, list(range(len(centers))))}
            self.img = np.asarray(img, dtype=np.float64)

    def sample(self, mats, S, mr, jacobian=False):
        n = len(self.centers)
        vals = np.empty((n, S, S))
        outside = np.empty((n, S, S), dtype=bool)
        dA = np.empty((n, S, S, 4)) if jacobian else None
        for lev, idx in self.groups.values():
            idx = np.asarray(idx)
            if lev is None:
                src, step = self.img, 1.0
            else:
                src, step = lev.image, float(lev.step)
            out = sample_batch(src, self.centers[idx] / step, mats[idx] / step, S, mr, jacobian)
            vals[idx], outside[idx] = out[0], out[1]
            if jacobian:
                dA[idx] = out[2] / step
        return vals, outside, dA


class _Problem:
    def __init__(self, img_ref, img_tgt, H: Homography, frames, cfg: RegistrationConfig):
        self.cfg = cfg
        if not frames:
            raise EmptyExperiment("no frames to register")
        c_ref, A_ref = frames_to_arrays(frames)
        c_tgt = H.apply(c_ref)
        J = np.array([H.jacobian(c) for c in c_ref]).reshape(-1, 2, 2)
        A_tgt = J @ A_ref
        if cfg.noise > 1.0:
            rng = np.random.default_rng(cfg.seed)
            for i in range(len(A_ref)):
                T, Td = random_affine_perturbation(rng, cfg.noise, rotation_tied=True)
                A_ref[i] = A_ref[i] @ T
                A_tgt[i] = (J[i] @ A_ref[i] if cfg.coupling == Coupling.COUPLED
                            else A_tgt[i] @ Td)
        scale = np.sqrt(np.abs(np.linalg.det(A_ref)))
        ref = _View(img_ref, c_ref, scale, cfg.sample_from)
        tgt = _View(img_tgt, c_tgt, scale, cfg.sample_from)
        S, mr = cfg.patch_size, cfg.mr_scale
        _, out_r, _ = ref.sample(A_ref, S, mr)
        _, out_t, _ = tgt.sample(A_tgt, S, mr)
        keep = ((out_r.mean(axis=(1, 2)) <= MAX_CLAMPED_FRACTION)
                & (out_t.mean(axis=(1, 2)) <= MAX_CLAMPED_FRACTION))
        self.n_dropped = int(np.count_nonzero(~keep))
        if not keep.any():
            raise EmptyExperiment("no frame survives patch sampling")
        k = np.nonzero(keep)[0]
        self.ref = _View(img_ref, c_ref[k], scale[k], cfg.sample_from)
        self.tgt = _View(img_tgt, c_tgt[k], scale[k], cfg.sample_from)
        self.H = H
        self.J = J[k]
        self.scale = scale[k]
        self.n = len(k)
        P_ref = A_ref[k] / self.scale[:, None, None]
        if cfg.coupling == Coupling.COUPLED:
            self.params = P_ref.reshape(-1).copy()
        else:
            P_tgt = A_tgt[k] / self.scale[:, None, None]
            self.params = np.concatenate([P_ref.reshape(-1), P_tgt.reshape(-1)])

    def matrices(self, params):
        n, sc = self.n, self.scale[:, None, None]
        A_ref = params[:4 * n].reshape(n, 2, 2) * sc
        if self.cfg.coupling == Coupling.COUPLED:
            A_tgt = self.J @ A_ref
        else:
            A_tgt = params[4 * n:].reshape(n, 2, 2) * sc
        return A_ref, A_tgt

    @property
    def loss_scale(self) -> float:
        # raw pixels have zero mean and unit std over S^2 values, hence norm S;
        # SIFT and RootSIFT are already unit length
        if self.cfg.unit_norm_loss and self.cfg.descriptor == DescriptorKind.RAWPIXELS:
            return 1.0 / self.cfg.patch_size
        return 1.0

    def _describe(self, view, mats, jacobian=False):
        vals, _, dA = view.sample(mats, self.cfg.patch_size, self.cfg.mr_scale, jacobian)
        y, std = normalize_values(vals)
        return desc_mod.describe_batch(y, self.cfg.descriptor), y, std, dA

    def evaluate(self, params, with_grad=True):
        cfg = self.cfg
        A_ref, A_tgt = self.matrices(params)
        analytic = with_grad and cfg.gradient_mode == GradientMode.ANALYTIC
        d_ref, y_r, std_r, dA_r = self._describe(self.ref, A_ref, analytic)
        d_tgt, y_t, std_t, dA_t = self._describe(self.tgt, A_tgt, analytic)
        c = self.loss_scale
        res = compute_loss(cfg.loss, PairBatch(d_ref * c, d_tgt * c))
        res.grad_s *= c
        res.grad_sdot *= c
        grad = None
        if with_grad:
            if analytic:
                S = cfg.patch_size
                gx_r = normalize_backward(y_r, std_r, res.grad_s.reshape(-1, S, S))
                gx_t = normalize_backward(y_t, std_t, res.grad_sdot.reshape(-1, S, S))
                G_ref = np.einsum("nij,nijk->nk", gx_r, dA_r).reshape(-1, 2, 2)
                G_tgt = np.einsum("nij,nijk->nk", gx_t, dA_t).reshape(-1, 2, 2)
            else:
                G_ref, G_tgt = self._fd_grads(A_ref, A_tgt, res)
            grad = self._param_grad(G_ref, G_tgt)
        return res.value, grad, A_ref, A_tgt, d_ref, d_tgt

    def _fd_grads(self, A_ref, A_tgt, res):
        """Loss gradient w.r.t. A via central differences of the descriptors.

        Each of the four entries of every frame is perturbed by ``fd_step``
        (in units of the frame scale); the descriptor differences are
        contracted with the exact loss gradient on the descriptors.
        """
        h = self.cfg.fd_step
        coupled = self.cfg.coupling == Coupling.COUPLED
        G_ref = np.zeros((self.n, 2, 2))
        G_tgt = np.zeros((self.n, 2, 2))
        for k in range(4):
            E = np.zeros((2, 2))
            E.flat[k] = 1.0
            dM = h * self.scale[:, None, None] * E
            plus, _, _, _ = self._describe(self.ref, A_ref + dM)
            minus, _, _, _ = self._describe(self.ref, A_ref - dM)
            g_r = np.einsum("nd,nd->n", res.grad_s, plus - minus) / (2 * h * self.scale)
            if coupled:
                dT = self.J @ dM
                plus, _, _, _ = self._describe(self.tgt, A_tgt + dT)
                minus, _, _, _ = self._describe(self.tgt, A_tgt - dT)
                g_r = g_r + np.einsum("nd,nd->n", res.grad_sdot, plus - minus) / (2 * h * self.scale)
                G_ref.reshape(self.n, 4)[:, k] = g_r
            else:
                G_ref.reshape(self.n, 4)[:, k] = g_r
                plus, _, _, _ = self._describe(self.tgt, A_tgt + dM)
                minus, _, _, _ = self._describe(self.tgt, A_tgt - dM)
                G_tgt.reshape(self.n, 4)[:, k] = (np.einsum("nd,nd->n", res.grad_sdot, plus - minus)
                                                  / (2 * h * self.scale))
        return G_ref, (None if coupled else G_tgt)

    def _param_grad(self, G_ref, G_tgt):
        """Chain from gradients w.r.t. A matrices to the scale-normalized parameters."""
        sc = self.scale[:, None, None]
        if self.cfg.coupling == Coupling.COUPLED:
            G = G_ref if G_tgt is None else G_ref + np.transpose(self.J, (0, 2, 1)) @ G_tgt
            return (G * sc).reshape(-1)
        return np.concatenate([(G_ref * sc).reshape(-1), (G_tgt * sc).reshape(-1)])

    def metrics(self, A_ref, A_tgt, d_ref, d_tgt):
        E = geometric_error_batch(self.J @ A_ref, A_tgt)
        el = np.maximum(elongations(A_ref), elongations(A_tgt))
        collapsed = float(np.mean(el > COLLAPSE_ELONGATION))
        score = matching_score(self.ref.centers, self.tgt.centers, d_ref, d_tgt, self.H,
                               self.cfg.ratio_threshold, self.cfg.px_threshold)
        return E, collapsed, score


def register_shapes(img_ref, img_tgt, H: Homography, frames, cfg: RegistrationConfig) -> Trajectory:
    """Optimize frame shapes in both images to minimize the descriptor loss.

    Frames are detected in ``img_ref`` and transferred to ``img_tgt`` through
    ``H``. Frames whose patches have more than 10% clamped samples at the
    start are dropped. Every step (including step 0, before any update)
    records loss, geometric error, collapsed fraction and matching score.
    """
    prob = _Problem(img_ref, img_tgt, H, list(frames), cfg)
    st = AdamState(lr=cfg.lr)
    params = prob.params
    traj = Trajectory(n_frames=prob.n, n_dropped=prob.n_dropped)
    for step in range(cfg.steps + 1):
        last = step == cfg.steps
        value, grad, A_ref, A_tgt, d_ref, d_tgt = prob.evaluate(params, with_grad=not last)
        E, collapsed, score = prob.metrics(A_ref, A_tgt, d_ref, d_tgt)
        traj.records.append(StepRecord(step, value, E, collapsed, score))
        if not last:
            params = adam_step(params, grad, st)
    traj.final_ref, traj.final_tgt = prob.matrices(params)
    return traj


def config_dict(cfg) -> dict:
    out = asdict(cfg)
    return {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in out.items()}
