import json
from pathlib import Path

import numpy as np
import pytest

from affshape.image import load_image

FIXTURES = Path(__file__).parent / "fixtures"
ILLUM = Path(__file__).resolve().parents[1] / "src" / "affshape" / "data" / "illum"


def gaussian_blob(shape=(128, 128), center=None, cov=((16.0, 0.0), (0.0, 16.0)), amp=1.0):
    h, w = shape
    cx, cy = ((w - 1) / 2.0, (h - 1) / 2.0) if center is None else center
    y, x = np.mgrid[0:h, 0:w].astype(float)
    d = np.stack([x - cx, y - cy], axis=-1)
    P = np.linalg.inv(np.asarray(cov, dtype=float))
    q = np.einsum("...i,ij,...j->...", d, P, d)
    return amp * np.exp(-0.5 * q)


@pytest.fixture(scope="session")
def illum_pair():
    return load_image(ILLUM / "1.pgm"), load_image(ILLUM / "2.pgm")


@pytest.fixture(scope="session")
def toy_oracle():
    with open(FIXTURES / "toy_oracle.json") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def derived():
    with open(FIXTURES / "derived.json") as fh:
        return json.load(fh)
