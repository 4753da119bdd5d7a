"""Regenerate the bundled illumination-change pair under src/affshape/data/illum.

Source: scikit-image's ``astronaut`` sample (NASA, public domain), converted
to luma and resized to 256x256. Image 2 applies a gamma curve, a smooth
random shading field times a left-to-right ramp, a relief term mimicking a
moved light source, and sensor noise; the geometry is unchanged.
"""

import os
import sys

import numpy as np
from scipy.ndimage import gaussian_filter
from skimage import data
from skimage.transform import resize

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from affshape.geometry import Homography  # noqa: E402
from affshape.image import gradients, save_pgm  # noqa: E402

OUT = os.path.join(os.path.dirname(__file__), "..", "src", "affshape", "data", "illum")


def main():
    rgb = data.astronaut().astype(np.float64) / 255.0
    gray = rgb[..., :3] @ np.array([0.299, 0.587, 0.114])
    ref = resize(gray, (256, 256), anti_aliasing=True)
    rng = np.random.default_rng(7)
    h, w = ref.shape
    field = gaussian_filter(rng.normal(size=ref.shape), 12)
    field /= field.std()
    ramp = 0.5 + 0.6 * np.linspace(0.0, 1.0, w)[None, :]
    shade = np.exp(0.5 * field) * ramp
    gx, gy = gradients(gaussian_filter(ref, 1.5))
    relief = 0.7 * (gx - gy)
    tgt = shade * ref ** 0.6 + relief + rng.normal(0.0, 0.03, size=ref.shape)
    tgt = np.clip(tgt, 0.0, 1.0)
    os.makedirs(OUT, exist_ok=True)
    save_pgm(os.path.join(OUT, "1.pgm"), ref)
    save_pgm(os.path.join(OUT, "2.pgm"), tgt)
    Homography.identity().save(os.path.join(OUT, "H_1_2"))


if __name__ == "__main__":
    main()
