"""Record run-time sanity values that tests compare against.

Writes tests/fixtures/derived.json. The tilt entry is the repeatability of
the bundled reference image against a copy compressed along x by cos(20 deg),
as measured by the ``repeat`` command with default settings.
"""

import json
import math
import os
import sys
import tempfile

import numpy as np
from scipy.ndimage import affine_transform

ROOT = os.path.join(os.path.dirname(__file__), "..")
sys.path.insert(0, os.path.join(ROOT, "src"))
from affshape.geometry import Homography  # noqa: E402
from affshape.image import load_image, save_pgm  # noqa: E402
from affshape import cli  # noqa: E402

ILLUM = os.path.join(ROOT, "src", "affshape", "data", "illum")
OUT = os.path.join(ROOT, "tests", "fixtures", "derived.json")
TILT_DEG = 20.0


def tilt_sequence(root):
    """Write ``1.pgm``, ``2.pgm`` and ``H_1_2`` for the x-compression warp."""
    img = load_image(os.path.join(ILLUM, "1.pgm")).astype(np.float64)
    c = math.cos(math.radians(TILT_DEG))
    h, w = img.shape
    out_w = int(math.ceil(w * c))
    # output pixel (x, y) samples input (x / c, y); affine_transform works in (row, col)
    warped = affine_transform(img, np.diag([1.0, 1.0 / c]), output_shape=(h, out_w), order=3,
                              mode="nearest")
    save_pgm(os.path.join(root, "1.pgm"), img)
    save_pgm(os.path.join(root, "2.pgm"), np.clip(warped, 0, 1))
    Homography(np.diag([c, 1.0, 1.0])).save(os.path.join(root, "H_1_2"))


def main():
    with tempfile.TemporaryDirectory() as tmp:
        seq = os.path.join(tmp, "seq")
        os.makedirs(seq)
        tilt_sequence(seq)
        out = os.path.join(tmp, "out")
        code = cli.main(["repeat", seq, "--out", out, "--no-plot"])
        if code != 0:
            raise SystemExit(code)
        with open(os.path.join(out, "repeat.json")) as fh:
            rep = json.load(fh)["pairs"][0]
    derived = {"tilt20_repeatability": rep["repeatability"],
               "tilt20_n_correspondences": rep["n_correspondences"]}
    with open(OUT, "w") as fh:
        json.dump(derived, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(derived)


if __name__ == "__main__":
    main()
