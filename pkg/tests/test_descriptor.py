import math

import numpy as np
import pytest

from affshape.descriptor import (Descriptor, DescriptorKind, KindMismatch, PreconditionError,
                                 describe_batch, describe_frames, distance, dominant_orientation,
                                 orient_frames, raw_pixel_descriptor, rootsift, rootsift_batch,
                                 sift_batch, sift_descriptor)
from affshape.geometry import AffineFrame
from affshape.image import gaussian_blur
from affshape.patch import (Patch, normalize_backward, normalize_patch, normalize_values,
                            sample_patch, sample_patch_with_jacobian)


def smooth_patch(seed, S=32):
    return gaussian_blur(np.random.default_rng(seed).random((S, S)), 1.5).astype(np.float64)


def angle_diff(a, b):
    return math.atan2(math.sin(a - b), math.cos(a - b))


class TestSift:
    def test_constant_patch(self):
        d = sift_descriptor(Patch(np.full((16, 16), 0.5)))
        assert d.kind is DescriptorKind.SIFT and len(d) == 128
        assert not d.values.any()

    def test_vertical_edge(self):
        p = np.zeros((32, 32))
        p[:, 16:] = 1.0
        v = sift_descriptor(Patch(p)).values.reshape(16, 8)
        mass = v.sum()
        assert (v[:, 0].sum() + v[:, 4].sum()) / mass > 0.95

    def test_scalar_loop_oracle(self):
        S = 16
        p = smooth_patch(8, S)
        hist = np.zeros((4, 4, 8))
        c = (S - 1) / 2
        for i in range(S):
            for j in range(S):
                gx = 0.5 * (p[i, min(j + 1, S - 1)] - p[i, max(j - 1, 0)])
                gy = 0.5 * (p[min(i + 1, S - 1), j] - p[max(i - 1, 0), j])
                m = math.hypot(gx, gy) * math.exp(-((i - c) ** 2 + (j - c) ** 2) / (2 * (S / 2) ** 2))
                o = (math.atan2(gy, gx) % (2 * math.pi)) / (math.pi / 4)
                yb, xb = (i + 0.5) / 4 - 0.5, (j + 0.5) / 4 - 0.5
                for cy in range(4):
                    for cx in range(4):
                        wy, wx = 1 - abs(yb - cy), 1 - abs(xb - cx)
                        if wy <= 0 or wx <= 0:
                            continue
                        for ob in range(8):
                            dist = min(abs(o - ob), 8 - abs(o - ob))
                            if dist < 1:
                                hist[cy, cx, ob] += m * wy * wx * (1 - dist)
        v = hist.ravel() / np.linalg.norm(hist)
        v = np.minimum(v, 0.2)
        v /= np.linalg.norm(v)
        np.testing.assert_allclose(sift_batch(p)[0], v, atol=1e-12)

    def test_constant_shift(self):
        p = smooth_patch(0)
        np.testing.assert_allclose(sift_batch(p), sift_batch(p + 0.3), atol=1e-12)

    def test_affine_intensity_invariance(self):
        p = smooth_patch(1)
        np.testing.assert_allclose(sift_batch(p), sift_batch(2.7 * p - 0.4), atol=1e-5)

    def test_normalized(self):
        v = sift_batch(smooth_patch(2))[0]
        assert np.linalg.norm(v) == pytest.approx(1.0)
        assert v.min() >= 0

    def test_small_patch(self):
        with pytest.raises(PreconditionError):
            sift_batch(np.zeros((8, 8)))

    def test_batch_independent(self):
        stack = np.stack([smooth_patch(k) for k in range(3)])
        out = sift_batch(stack)
        for k in range(3):
            np.testing.assert_allclose(out[k], sift_batch(stack[k])[0], atol=1e-15)


class TestRootSift:
    def test_zero(self):
        d = rootsift(Descriptor(DescriptorKind.SIFT, np.zeros(128)))
        assert d.kind is DescriptorKind.ROOTSIFT and not d.values.any()

    def test_one_hot(self):
        v = np.zeros(128)
        v[7] = 0.3
        np.testing.assert_array_equal(rootsift(Descriptor(DescriptorKind.SIFT, v)).values,
                                      np.eye(128)[7])

    def test_uniform(self):
        r = rootsift(Descriptor(DescriptorKind.SIFT, np.full(128, 0.2))).values
        np.testing.assert_allclose(r, math.sqrt(1 / 128))
        assert np.linalg.norm(r) == pytest.approx(1.0, abs=1e-12)

    def test_kind_mismatch(self):
        with pytest.raises(KindMismatch):
            rootsift(Descriptor(DescriptorKind.RAWPIXELS, np.ones(4)))

    def test_negative_input(self):
        with pytest.raises(PreconditionError):
            rootsift(Descriptor(DescriptorKind.SIFT, -np.ones(128)))

    def test_hellinger_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b = rng.random(128), rng.random(128)
            ra, rb = rootsift_batch(np.stack([a, b]))
            p, q = a / a.sum(), b / b.sum()
            hell = math.sqrt(max(0.0, 2 - 2 * np.sqrt(p * q).sum()))
            assert float(np.linalg.norm(ra - rb)) == pytest.approx(hell, abs=1e-9)


class TestRawPixels:
    def test_two_by_two(self):
        p = Patch(np.array([[-1.0, 1.0], [1.0, -1.0]]), normalized=True)
        d = raw_pixel_descriptor(p)
        np.testing.assert_array_equal(d.values, [-1, 1, 1, -1])
        assert distance(d, d) == 0

    def test_unnormalized(self):
        with pytest.raises(PreconditionError):
            raw_pixel_descriptor(Patch(np.zeros((2, 2))))

    def test_moments(self):
        d = raw_pixel_descriptor(normalize_patch(Patch(smooth_patch(4))))
        assert abs(d.values.mean()) < 1e-9 and d.values.std() == pytest.approx(1.0, abs=1e-6)

    def test_chain_rule(self):
        rng = np.random.default_rng(5)
        img = gaussian_blur(rng.random((64, 64)), 1.0).astype(np.float64)
        # generic frame so no sample sits on a pixel edge
        f = AffineFrame(32.37, 31.21, 3.13, 0.41, -0.29, 2.47)
        ref = raw_pixel_descriptor(normalize_patch(sample_patch(img, AffineFrame.circle(30, 33, 3.0))))

        def dist(A):
            g = f.with_matrix(A)
            return distance(raw_pixel_descriptor(normalize_patch(sample_patch(img, g))), ref)

        p, J = sample_patch_with_jacobian(img, f)
        y, std = normalize_values(p.values)
        d = np.linalg.norm(y.ravel() - ref.values)
        gy = (y.ravel() - ref.values).reshape(y.shape) / d
        gx = normalize_backward(y, std, gy)
        analytic = np.einsum("ij,ijk->k", gx, J.dA).reshape(2, 2)
        h = 1e-6  # keeps every sample inside its pixel cell
        num = np.zeros((2, 2))
        for idx in np.ndindex(2, 2):
            E = np.zeros((2, 2))
            E[idx] = h
            num[idx] = (dist(f.A + E) - dist(f.A - E)) / (2 * h)
        np.testing.assert_allclose(analytic, num, rtol=1e-3, atol=1e-6)


class TestOrientation:
    def test_constant(self):
        assert dominant_orientation(np.full((16, 16), 0.2)) == (0.0, True)

    def test_horizontal_ramp(self):
        p = np.tile(np.arange(32.0), (32, 1))
        angle, degenerate = dominant_orientation(p)
        assert not degenerate and abs(angle) <= math.pi / 18

    @pytest.mark.parametrize("seed", range(5))
    def test_rot90_shift(self, seed):
        y, x = np.mgrid[0:32, 0:32].astype(float)
        theta = 0.3 + seed
        p = math.cos(theta) * x + math.sin(theta) * y + 2 * smooth_patch(seed)
        a, _ = dominant_orientation(p)
        b, _ = dominant_orientation(np.rot90(p).copy())
        # rot90 maps gradient (gx, gy) to (gy, -gx)
        assert abs(angle_diff(b, a - math.pi / 2)) <= math.pi / 18

    def test_range(self):
        for seed in range(10):
            a, _ = dominant_orientation(smooth_patch(seed))
            assert -math.pi < a <= math.pi

    def test_small(self):
        with pytest.raises(PreconditionError):
            dominant_orientation(np.zeros((8, 8)))


class TestDistance:
    def test_zero_and_one_hot(self):
        a = Descriptor(DescriptorKind.SIFT, np.eye(4)[0])
        b = Descriptor(DescriptorKind.SIFT, np.eye(4)[2])
        assert distance(a, a) == 0
        assert distance(a, b) == pytest.approx(math.sqrt(2))

    def test_direct_summation(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            u, v = rng.normal(size=(2, 37))
            ref = math.sqrt(sum((p - q) ** 2 for p, q in zip(u, v)))
            got = distance(Descriptor(DescriptorKind.RAWPIXELS, u), Descriptor(DescriptorKind.RAWPIXELS, v))
            assert got == pytest.approx(ref, abs=1e-9)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a, b, c = (Descriptor(DescriptorKind.SIFT, rng.random(16)) for _ in range(3))
            assert distance(a, c) <= distance(a, b) + distance(b, c) + 1e-12

    def test_mismatch(self):
        with pytest.raises(KindMismatch):
            distance(Descriptor(DescriptorKind.SIFT, np.zeros(4)), Descriptor(DescriptorKind.ROOTSIFT, np.zeros(4)))
        with pytest.raises(KindMismatch):
            distance(Descriptor(DescriptorKind.SIFT, np.zeros(4)), Descriptor(DescriptorKind.SIFT, np.zeros(5)))


class TestFrames:
    def test_describe_frames_shapes(self, illum_pair):
        img = illum_pair[0]
        frames = [AffineFrame.circle(100, 120, 4.0), AffineFrame(60, 70, 3.0, 0.2, 0.1, 4.0)]
        assert describe_frames(img, frames, "rootsift").shape == (2, 128)
        assert describe_frames(img, frames, "rawpixels", S=16).shape == (2, 256)
        assert describe_frames(img, [], "sift").shape == (0, 128)

    def test_describe_frames_matches_batch(self, illum_pair):
        img = illum_pair[0]
        frames = [AffineFrame.circle(100, 120, 4.0)]
        y, _ = normalize_values(sample_patch(img, frames[0]).values)
        np.testing.assert_allclose(describe_frames(img, frames, "sift"), describe_batch(y, "sift"))

    def test_orient_frames(self):
        y, x = np.mgrid[0:96, 0:96].astype(float)
        img = 0.01 * y  # gradient along +y
        f = AffineFrame.circle(48, 48, 4.0)
        (g,) = orient_frames(img, [f])
        angle, _ = dominant_orientation(sample_patch(img, g).values)
        assert abs(angle) <= math.pi / 18
        assert g.det == pytest.approx(f.det)

    def test_orient_degenerate(self):
        f = AffineFrame.circle(20, 20, 2.0)
        assert orient_frames(np.zeros((40, 40)), [f]) == [f]
