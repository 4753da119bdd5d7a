"""Affine local-feature geometry, descriptor losses and shape registration."""

from .descriptor import DescriptorKind, describe_frames, orient_frames
from .detector import Outcome, adapt_all, baumberg_adapt, detect_frames, hessian_detect
from .evaluation import match_ratio_test, matching_score, repeatability
from .geometry import (AffineFrame, FrameDecomposition, Homography, compose, decompose,
                       elongation, geometric_error, overlap_error, reproject_frame)
from .image import build_pyramid, load_image
from .loss import LossKind, PairBatch, hardneg_loss, hardnegc_loss, posdist_loss
from .registration import (Coupling, GradientMode, RegistrationConfig, ToyConfig,
                           register_shapes, toy_experiment)

__version__ = "0.1.0"

__all__ = [
    "AffineFrame", "Coupling", "DescriptorKind", "FrameDecomposition", "GradientMode",
    "Homography", "LossKind", "Outcome", "PairBatch", "RegistrationConfig", "ToyConfig",
    "adapt_all", "baumberg_adapt", "build_pyramid", "compose", "decompose", "describe_frames",
    "detect_frames", "elongation", "geometric_error", "hardneg_loss", "hardnegc_loss",
    "hessian_detect", "load_image", "match_ratio_test", "matching_score", "orient_frames",
    "overlap_error", "posdist_loss", "register_shapes", "repeatability", "reproject_frame",
    "toy_experiment",
]
