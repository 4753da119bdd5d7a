"""Command line interface.

Commands: ``detect``, ``register``, ``toy``, ``repeat`` and ``match``. Every
command writes its outputs and the resolved configuration (``config.json``)
into ``--out``. Exit codes: 0 success, 1 IO or format error, 2 empty result
or failed precondition.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import statistics
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .descriptor import DescriptorKind, describe_frames, orient_frames
from .detector import detect_frames
from .evaluation import matching_score_report, repeatability
from .geometry import AffineFrame, Homography
from .image import ImageIOError, build_pyramid, load_image
from .loss import LossKind
from .registration import EmptyExperiment, GradientMode, register_shapes, toy_experiment

EXIT_OK = 0
EXIT_IO = 1
EXIT_EMPTY = 2

IMAGE_EXTS = (".ppm", ".pgm", ".png")
STAT_KEYS = ("detected", "adapted", "rejected_elong", "rejected_border", "rejected_nonconv")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# dataset layout


def _find_image(root: Path, stem: str) -> Path | None:
    for ext in IMAGE_EXTS:
        p = root / f"{stem}{ext}"
        if p.is_file():
            return p
    return None


@dataclass
class SequenceDir:
    """``1..6`` images with ``H_1_k`` files, or Oxford ``img1..6`` with ``H1tokp``."""

    root: Path
    images: list[Path] = field(default_factory=list)
    homographies: dict[int, Path | None] = field(default_factory=dict)

    @classmethod
    def open(cls, root) -> "SequenceDir":
        root = Path(root)
        if not root.is_dir():
            raise CliError(EXIT_IO, f"{root}: not a directory")
        seq = cls(root)
        for k in range(1, 7):
            p = _find_image(root, str(k)) or _find_image(root, f"img{k}")
            if p is None:
                break
            seq.images.append(p)
            if k > 1:
                h = [root / f"H_1_{k}", root / f"H1to{k}p"]
                seq.homographies[k] = next((c for c in h if c.is_file()), None)
        if len(seq.images) < 2:
            raise CliError(EXIT_IO, f"{root}: expected images 1 and 2 (or img1 and img2)")
        return seq

    @property
    def n_images(self) -> int:
        return len(self.images)

    def image(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.n_images:
            raise CliError(EXIT_EMPTY, f"{self.root}: no image {k}")
        return load_image(self.images[k - 1])

    def homography(self, k: int, assume_identity: bool = False) -> Homography:
        path = self.homographies.get(k)
        if path is None:
            if assume_identity:
                return Homography.identity()
            raise CliError(EXIT_EMPTY, f"{self.root}: missing homography 1->{k} "
                                       "(use --assume-identity)")
        return _load_homography(path)


def _load_homography(path) -> Homography:
    try:
        return Homography.load(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"{path}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_IO, f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# text formats


def _num(v) -> str:
    return repr(float(v))


def frame_line(f: AffineFrame, response: float) -> str:
    return " ".join(_num(v) for v in (f.cx, f.cy, f.a11, f.a12, f.a21, f.a22, response))


def stats_footer(stats) -> str:
    return "# " + " ".join(f"{k}={int(stats.get(k, 0))}" for k in STAT_KEYS)


def write_frames(path, frames, responses, stats) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f, r in zip(frames, responses):
            fh.write(frame_line(f, r) + "\n")
        fh.write(stats_footer(stats) + "\n")


def read_frames(path) -> tuple[list[AffineFrame], list[float]]:
    frames, responses = [], []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = line.split()
            if len(vals) != 7:
                raise ValueError(f"{path}:{n}: expected 7 values, found {len(vals)}")
            v = [float(x) for x in vals]
            frames.append(AffineFrame(*v[:6]))
            responses.append(v[6])
    return frames, responses


def oxford_ellipse(f: AffineFrame) -> tuple[float, float, float]:
    """``(a, b, c)`` with ``[a b; b c] = (A A^T)^-1``."""
    M = np.linalg.inv(f.A @ f.A.T)
    return float(M[0, 0]), float(0.5 * (M[0, 1] + M[1, 0])), float(M[1, 1])


def write_oxford(path, frames) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("1.0\n")
        fh.write(f"{len(frames)}\n")
        for f in frames:
            fh.write(" ".join(_num(v) for v in (f.cx, f.cy, *oxford_ellipse(f))) + "\n")


def write_descriptors(path, frames, responses, desc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f, r, d in zip(frames, responses, desc):
            fh.write(frame_line(f, r) + " " + " ".join(_num(v) for v in d) + "\n")


def _dump_json(path, obj) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return text


# ---------------------------------------------------------------------------
# argument handling


def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("shared options")
    g.add_argument("--seed", type=int)
    g.add_argument("--config", help="JSON config; flags given on the command line win")
    g.add_argument("--out", default="out", help="output directory (default: out)")
    g.add_argument("--descriptor", choices=[k.value for k in DescriptorKind])
    g.add_argument("--loss", choices=[k.value for k in LossKind])
    c = g.add_mutually_exclusive_group()
    c.add_argument("--coupled", dest="coupling", action="store_const", const="coupled")
    c.add_argument("--independent", dest="coupling", action="store_const", const="independent")
    g.add_argument("--ratio", type=float, help="ratio-test threshold")
    g.add_argument("--overlap-threshold", type=float)
    g.add_argument("--px-threshold", type=float)
    g.add_argument("--assume-identity", action="store_true",
                   help="use the identity when a homography file is missing")
    g.add_argument("--no-affine", action="store_true", help="skip Baumberg adaptation")
    g.add_argument("--patch-size", type=int)
    g.add_argument("--mr-scale", type=float)
    g.add_argument("--sample-from", choices=["image", "scalespace"])
    g.add_argument("--threshold", type=float, help="Hessian response threshold")
    g.add_argument("--steps", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--noise", type=float, help="maximal tilt of the initial shape perturbation")
    g.add_argument("--gradient-mode", choices=[m.value for m in GradientMode])
    g.add_argument("--no-plot", action="store_true", help="skip SVG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affshape", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="Hessian-affine frames of one image")
    p.add_argument("image")
    _add_common(p)

    p = sub.add_parser("register", help="descriptor-driven shape registration on a pair")
    p.add_argument("sequence", help="sequence directory")
    p.add_argument("--pair", type=int, default=2, help="target image index (default: 2)")
    _add_common(p)

    p = sub.add_parser("toy", help="pairs of 2-D points moved by a descriptor loss")
    p.add_argument("--pairs", type=int)
    _add_common(p)

    p = sub.add_parser("repeat", help="repeatability of image 1 against images 2..6")
    p.add_argument("sequence", help="sequence directory")
    _add_common(p)

    p = sub.add_parser("match", help="matching score of an image pair")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--homography", help="file with the 3x3 map from image_a to image_b")
    _add_common(p)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    det, mat, reg, toy = cfg.detect, cfg.match, cfg.registration, cfg.toy
    d_over, m_over, r_over, t_over = {}, {}, {}, {}
    if args.seed is not None:
        r_over["seed"] = t_over["seed"] = args.seed
    if args.descriptor is not None:
        m_over["descriptor"] = r_over["descriptor"] = args.descriptor
        # pick the gradient mode again for the new descriptor
        r_over["gradient_mode"] = None
    if args.loss is not None:
        r_over["loss"] = t_over["loss"] = args.loss
    if args.coupling is not None:
        r_over["coupling"] = args.coupling
    if args.ratio is not None:
        m_over["ratio_threshold"] = r_over["ratio_threshold"] = args.ratio
    if args.px_threshold is not None:
        m_over["px_threshold"] = r_over["px_threshold"] = args.px_threshold
    if args.overlap_threshold is not None:
        m_over["overlap_threshold"] = args.overlap_threshold
    if args.no_affine:
        d_over["affine"] = False
    if args.patch_size is not None:
        m_over["patch_size"] = r_over["patch_size"] = args.patch_size
    if args.mr_scale is not None:
        m_over["mr_scale"] = r_over["mr_scale"] = args.mr_scale
    if args.sample_from is not None:
        d_over["sample_from"] = r_over["sample_from"] = args.sample_from
    if args.threshold is not None:
        d_over["threshold"] = args.threshold
    if args.steps is not None:
        r_over["steps"] = t_over["steps"] = args.steps
    if args.lr is not None:
        r_over["lr"] = t_over["lr"] = args.lr
    if args.noise is not None:
        r_over["noise"] = args.noise
    if args.gradient_mode is not None:
        r_over["gradient_mode"] = args.gradient_mode
    if getattr(args, "pairs", None) is not None:
        t_over["n_pairs"] = args.pairs
    try:
        return RunConfig(replace(det, **d_over), replace(mat, **m_over),
                         replace(reg, **r_over), replace(toy, **t_over))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands


def _detect(img, cfg: RunConfig):
    d = cfg.detect
    return detect_frames(img, threshold=d.threshold, affine=d.affine,
                         levels_per_octave=d.levels_per_octave, initial_sigma=d.initial_sigma,
                         max_iter=d.max_iter, window=d.window, window_mr=d.window_mr,
                         convergence_ratio=d.convergence_ratio,
                         max_elongation=d.max_elongation, sample_from=d.sample_from)


def cmd_detect(args, cfg: RunConfig, out: Path) -> int:
    img = load_image(args.image)
    frames, responses, stats = _detect(img, cfg)
    write_frames(out / "frames.txt", frames, responses, stats)
    write_oxford(out / "frames.oxford", frames)
    print(stats_footer(stats))
    return EXIT_OK


def cmd_register(args, cfg: RunConfig, out: Path) -> int:
    seq = SequenceDir.open(args.sequence)
    img_ref = seq.image(1)
    img_tgt = seq.image(args.pair)
    H = seq.homography(args.pair, args.assume_identity)
    frames, _, stats = _detect(img_ref, cfg)
    if not frames:
        raise CliError(EXIT_EMPTY, f"no frames detected in {seq.images[0]} ({stats_footer(stats)})")
    try:
        traj = register_shapes(img_ref, img_tgt, H, frames, cfg.registration)
    except EmptyExperiment as exc:
        raise CliError(EXIT_EMPTY, str(exc)) from exc
    with open(out / "trajectory.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(traj.to_csv())
    if not args.no_plot:
        from .plotting import plot_trajectory

        r = cfg.registration
        plot_trajectory(traj, out / "trajectory.svg",
                        f"{r.loss.value}, {r.descriptor.value}, {r.coupling.value}")
    first, last = traj.records[0], traj.records[-1]
    print(f"frames={traj.n_frames} dropped={traj.n_dropped} "
          f"match_score {first.match_score:.4f} -> {last.match_score:.4f} "
          f"collapsed={last.collapsed_frac:.4f} E={last.E:.4f}")
    return EXIT_OK


def toy_csv(result) -> tuple[str, str]:
    pos = result.positions
    dims = pos.shape[-1]
    head = ["step", "loss", "pair", "side"] + [f"x{k}" for k in range(dims)]
    traj, final = io.StringIO(), io.StringIO()
    wt = csv.writer(traj, lineterminator="\n")
    wf = csv.writer(final, lineterminator="\n")
    wt.writerow(head)
    wf.writerow(head[2:])
    for step in range(pos.shape[0]):
        for side, name in ((0, "s"), (1, "sdot")):
            for i in range(pos.shape[2]):
                row = [i, name] + [_num(v) for v in pos[step, side, i]]
                wt.writerow([step, _num(result.losses[step])] + row)
                if step == pos.shape[0] - 1:
                    wf.writerow(row)
    return traj.getvalue(), final.getvalue()


def cmd_toy(args, cfg: RunConfig, out: Path) -> int:
    res = toy_experiment(cfg.toy)
    traj, final = toy_csv(res)
    with open(out / "toy.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(traj)
    with open(out / "toy_final.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(final)
    if not args.no_plot and cfg.toy.dims == 2:
        from .plotting import plot_toy

        plot_toy(res, out / "toy.svg", cfg.toy.loss.value)
    print(f"loss {res.losses[0]:.6f} -> {res.losses[-1]:.6f}")
    return EXIT_OK


def _aggregate(reports: list[dict]) -> tuple[dict, dict]:
    keys = [k for k in reports[0] if k != "pair"]
    mean = {k: float(np.mean([r[k] for r in reports])) for k in keys}
    median = {k: float(statistics.median([r[k] for r in reports])) for k in keys}
    return mean, median


def cmd_repeat(args, cfg: RunConfig, out: Path) -> int:
    seq = SequenceDir.open(args.sequence)
    pairs = list(range(2, seq.n_images + 1))
    Hs = {k: seq.homography(k, args.assume_identity) for k in pairs}
    img1 = seq.image(1)
    frames1, _, _ = _detect(img1, cfg)
    reports = []
    for k in pairs:
        img_k = seq.image(k)
        frames_k, _, _ = _detect(img_k, cfg)
        rep = repeatability(frames1, frames_k, Hs[k], img1.shape, img_k.shape,
                            cfg.match.overlap_threshold)
        reports.append({"pair": k, **rep.to_dict()})
    mean, median = _aggregate(reports)
    text = _dump_json(out / "repeat.json", {"pairs": reports, "mean": mean, "median": median})
    if not args.no_plot:
        from .plotting import plot_repeatability

        plot_repeatability([f"1-{k}" for k in pairs], [r["repeatability"] for r in reports],
                           out / "repeat.svg", seq.root.name)
    sys.stdout.write(text)
    return EXIT_OK


def match_images(img_a, img_b, H: Homography, cfg: RunConfig):
    """Detect, orient and describe both images; returns the JSON record and the dumps."""
    m = cfg.match
    frames_a, resp_a, _ = _detect(img_a, cfg)
    frames_b, resp_b, _ = _detect(img_b, cfg)
    ss_a, ss_b = build_pyramid(img_a), build_pyramid(img_b)
    if m.orient:
        frames_a = orient_frames(ss_a, frames_a, m.patch_size, m.mr_scale)
        frames_b = orient_frames(ss_b, frames_b, m.patch_size, m.mr_scale)
    desc_a = describe_frames(ss_a, frames_a, m.descriptor, m.patch_size, m.mr_scale)
    desc_b = describe_frames(ss_b, frames_b, m.descriptor, m.patch_size, m.mr_scale)
    rep = repeatability(frames_a, frames_b, H, img_a.shape, img_b.shape, m.overlap_threshold)
    ms = matching_score_report(frames_a, frames_b, desc_a, desc_b, H, m.ratio_threshold,
                               m.px_threshold, img_a.shape, img_b.shape)
    record = {
        "n_correspondences": rep.n_correspondences,
        "repeatability": rep.repeatability,
        "n_common_a": rep.n_common_a,
        "n_common_b": rep.n_common_b,
        "n_matches": ms.n_matches,
        "n_correct": ms.n_correct,
        "matching_score": ms.matching_score,
    }
    return record, (frames_a, resp_a, desc_a), (frames_b, resp_b, desc_b)


def cmd_match(args, cfg: RunConfig, out: Path) -> int:
    img_a = load_image(args.image_a)
    img_b = load_image(args.image_b)
    if args.homography:
        H = _load_homography(args.homography)
    elif args.assume_identity:
        H = Homography.identity()
    else:
        raise CliError(EXIT_EMPTY, "no homography given (use --homography or --assume-identity)")
    record, dump_a, dump_b = match_images(img_a, img_b, H, cfg)
    write_descriptors(out / "descriptors_a.txt", *dump_a)
    write_descriptors(out / "descriptors_b.txt", *dump_b)
    sys.stdout.write(_dump_json(out / "match.json", record))
    return EXIT_OK


COMMANDS = {
    "detect": cmd_detect,
    "register": cmd_register,
    "toy": cmd_toy,
    "repeat": cmd_repeat,
    "match": cmd_match,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(args.out)
        os.makedirs(out, exist_ok=True)
        cfg.save(out / "config.json")
        return COMMANDS[args.command](args, cfg, out)
    except CliError as exc:
        print(f"affshape {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, ImageIOError, OSError) as exc:
        print(f"affshape {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
