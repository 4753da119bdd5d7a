import math

import numpy as np
import pytest
from scipy import stats

from affshape.descriptor import describe_frames
from affshape.evaluation import matching_score
from affshape.geometry import AffineFrame, Homography
from affshape.image import gaussian_blur
from affshape.loss import LossKind, PairBatch, posdist_loss
from affshape.registration import (CSV_HEADER, EmptyExperiment, GradientMode, RegistrationConfig,
                                   ToyConfig, _Problem, collapsed_fraction, min_cross_pair_distance,
                                   positive_distances, random_affine_perturbation, register_shapes,
                                   toy_experiment, toy_initial_points)


@pytest.fixture(scope="module")
def texture():
    return gaussian_blur(np.random.default_rng(0).random((128, 128)), 2.0).astype(np.float64)


@pytest.fixture(scope="module")
def grid_frames():
    return [AffineFrame.circle(x, y, 3.0) for x in range(34, 100, 10) for y in range(34, 100, 10)]


def small_cfg(**kw):
    base = dict(patch_size=16, steps=5, sample_from="image")
    base.update(kw)
    return RegistrationConfig(**base)


class TestToy:
    @pytest.mark.parametrize("seed", range(100))
    def test_posdist_contracts(self, seed):
        r = toy_experiment(ToyConfig(loss="posdist", seed=seed))
        d = [positive_distances(p).mean() for p in (r.positions[0], r.final)]
        assert d[1] < 0.1 * d[0]

    def test_shapes(self):
        r = toy_experiment(ToyConfig(steps=20))
        assert r.positions.shape == (21, 2, 5, 2) and r.losses.shape == (21,)
        np.testing.assert_array_equal(r.positions[0], toy_initial_points(ToyConfig()))

    @pytest.mark.parametrize("loss", ["posdist", "hardneg", "hardnegc"])
    def test_matches_oracle(self, toy_oracle, loss):
        cfg = ToyConfig(n_pairs=toy_oracle["n_pairs"], dims=toy_oracle["dims"],
                        steps=toy_oracle["steps"], lr=toy_oracle["lr"], seed=toy_oracle["seed"],
                        loss=loss)
        r = toy_experiment(cfg)
        np.testing.assert_allclose(r.positions[0], toy_oracle["initial"], atol=1e-12)
        run = toy_oracle["runs"][loss]
        np.testing.assert_allclose(r.final, run["final"], atol=1e-5)
        assert positive_distances(r.final).mean() == pytest.approx(run["mean_positive"], abs=1e-5)
        assert min_cross_pair_distance(r.final) == pytest.approx(run["min_cross_pair"], abs=1e-5)

    def test_hardnegc_positive_distances_decrease(self):
        # a pair closer than a few Adam steps oscillates around zero, so only
        # pairs that stay clear of that scale are checked step by step
        clear = 4 * 0.01 * math.sqrt(2)
        for seed in range(100):
            r = toy_experiment(ToyConfig(loss="hardnegc", seed=seed, steps=10))
            d = np.array([positive_distances(p) for p in r.positions])
            assert np.all(d[-1] < d[0])
            far = d.min(axis=0) > clear
            assert np.all(np.diff(d[:, far], axis=0) < 0)

    def test_coincident_pairs(self):
        s = np.array([[0.0, 0.0], [0.5, 0.5], [3.0, 3.0]])
        sdot = s.copy()
        sdot[2] += 0.2
        r = posdist_loss(PairBatch(s, sdot))
        assert not r.grad_s[:2].any() and not r.grad_sdot[:2].any()

    def test_seed_reproducible(self):
        a = toy_experiment(ToyConfig(seed=3))
        b = toy_experiment(ToyConfig(seed=3))
        np.testing.assert_array_equal(a.positions, b.positions)

    def test_min_cross_pair(self):
        pts = np.array([[[0.0, 0.0], [5.0, 0.0]], [[0.1, 0.0], [5.0, 1.0]]])
        # pair 0 at x ~ 0, pair 1 at x = 5
        assert min_cross_pair_distance(pts) == pytest.approx(math.hypot(4.9, 0.0))

    def test_too_few_pairs(self):
        with pytest.raises(ValueError):
            ToyConfig(n_pairs=1)


class TestPerturbation:
    def test_no_tilt_is_rotation(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            T, Td = random_affine_perturbation(rng, 1.0, rotation_tied=False)
            np.testing.assert_allclose(T @ T.T, np.eye(2), atol=1e-12)
            assert np.linalg.det(T) == pytest.approx(1.0)

    def test_tied_no_tilt_equal(self):
        rng = np.random.default_rng(1)
        T, Td = random_affine_perturbation(rng, 1.0, rotation_tied=True)
        np.testing.assert_array_equal(T, Td)

    def test_det_one(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            for M in random_affine_perturbation(rng, 3.0):
                assert np.linalg.det(M) == pytest.approx(1.0, abs=1e-12)

    def test_tilt_uniform(self):
        rng = np.random.default_rng(3)
        tilt_max = 2.5
        tilts = np.empty(100_000)
        for k in range(len(tilts)):
            T, _ = random_affine_perturbation(rng, tilt_max)
            sv = np.linalg.svd(T, compute_uv=False)
            tilts[k] = sv[0] / sv[1]
        assert tilts.min() >= 1 - 1e-9 and tilts.max() <= tilt_max + 1e-9
        p = stats.kstest(tilts, stats.uniform(loc=1.0, scale=tilt_max - 1.0).cdf).pvalue
        assert p > 0.01

    def test_bad_tilt(self):
        with pytest.raises(ValueError):
            random_affine_perturbation(np.random.default_rng(0), 0.5)


class TestCollapsedFraction:
    def test_identities(self):
        assert collapsed_fraction([np.eye(2)] * 5) == 0.0

    def test_one_of_ten(self):
        frames = [np.eye(2)] * 9 + [np.diag([7.0, 1 / 7.0])]
        assert collapsed_fraction(frames) == pytest.approx(0.1)

    def test_empty(self):
        assert collapsed_fraction([]) == 0.0

    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(4)
        mats = rng.normal(size=(200, 2, 2)) * np.array([[3.0, 1.0], [0.2, 0.5]])
        count = 0
        for M in mats:
            a, b, c, d = M.ravel()
            # singular values of a 2x2 from its Frobenius norm and determinant
            fro, det = a * a + b * b + c * c + d * d, abs(a * d - b * c)
            disc = math.sqrt(max(fro * fro - 4 * det * det, 0.0))
            s1, s2 = math.sqrt((fro + disc) / 2), math.sqrt(max((fro - disc) / 2, 0.0))
            count += s2 == 0 or s1 / s2 > 6
        assert collapsed_fraction(mats) == pytest.approx(count / 200)

    def test_frames(self):
        assert collapsed_fraction([AffineFrame(0, 0, 7.0, 0, 0, 1 / 7.0), AffineFrame.circle(0, 0, 2)]) == 0.5


class TestConfig:
    def test_analytic_needs_raw_pixels(self):
        with pytest.raises(ValueError):
            RegistrationConfig(descriptor="sift", gradient_mode="analytic")

    def test_default_modes(self):
        assert RegistrationConfig().gradient_mode is GradientMode.ANALYTIC
        assert RegistrationConfig(descriptor="rootsift").gradient_mode is GradientMode.FINITEDIFF

    def test_bad_source(self):
        with pytest.raises(ValueError):
            RegistrationConfig(sample_from="disk")


class TestRegister:
    def test_identical_images_posdist(self, texture, grid_frames):
        cfg = small_cfg(loss="posdist", steps=10)
        traj = register_shapes(texture, texture, Homography.identity(), grid_frames, cfg)
        assert len(traj.records) == 11
        assert np.all(traj.column("loss") == 0)
        assert np.all(traj.column("E") == 0)
        A0 = np.array([f.A for f in grid_frames])
        np.testing.assert_array_equal(traj.final_ref, A0)
        np.testing.assert_array_equal(traj.final_tgt, A0)

    def test_brightness_change_improves(self, texture):
        # gamma plus structured noise so that step 0 is well below a perfect score
        noise = gaussian_blur(np.random.default_rng(5).random(texture.shape), 1.0)
        target = texture ** 0.7 + 0.6 * (noise - noise.mean()) / noise.std() * texture.std()
        frames = [AffineFrame.circle(x, y, 2.0) for x in range(30, 100, 5) for y in range(30, 100, 5)]
        cfg = small_cfg(loss="hardnegc", steps=150)
        traj = register_shapes(texture, target, Homography.identity(), frames, cfg)
        ms = traj.column("match_score")
        assert ms[0] < 0.9
        assert ms[-1] >= ms[0]

    def test_coupled_geometric_error_zero(self, texture, grid_frames):
        target = texture + 0.02 * np.random.default_rng(6).random(texture.shape)
        cfg = small_cfg(coupling="coupled", steps=10, noise=1.5)
        traj = register_shapes(texture, target, Homography.identity(), grid_frames, cfg)
        assert np.all(traj.column("E") == 0)

    def test_coupled_under_homography(self, texture, grid_frames):
        H = Homography(np.array([[1.05, 0.02, 1.0], [-0.01, 0.97, 2.0], [0.0, 0.0, 1.0]]))
        cfg = small_cfg(coupling="coupled", steps=3)
        traj = register_shapes(texture, texture, H, grid_frames, cfg)
        np.testing.assert_allclose(traj.column("E"), 0, atol=1e-20)

    def test_step0_matching_score(self, texture, grid_frames):
        target = texture ** 0.8
        cfg = small_cfg(steps=0)
        traj = register_shapes(texture, target, Homography.identity(), grid_frames, cfg)
        da = describe_frames(texture, grid_frames, "rawpixels", S=16)
        db = describe_frames(target, grid_frames, "rawpixels", S=16)
        expect = matching_score(grid_frames, grid_frames, da, db, Homography.identity())
        assert traj.records[0].match_score == expect

    def test_independent_drifts(self, texture, grid_frames):
        target = texture ** 0.8
        traj = register_shapes(texture, target, Homography.identity(), grid_frames,
                               small_cfg(steps=5))
        assert traj.column("E")[0] == 0 and traj.column("E")[-1] > 0

    def test_determinism_analytic(self, texture, grid_frames):
        cfg = small_cfg(noise=1.5, seed=3)
        a = register_shapes(texture, texture ** 0.8, Homography.identity(), grid_frames, cfg)
        b = register_shapes(texture, texture ** 0.8, Homography.identity(), grid_frames, cfg)
        np.testing.assert_allclose(a.column("loss"), b.column("loss"), atol=1e-9)

    def test_determinism_finite_diff(self, texture, grid_frames):
        cfg = small_cfg(descriptor="sift", steps=2, seed=4, noise=1.3)
        a = register_shapes(texture, texture ** 0.8, Homography.identity(), grid_frames[:8], cfg)
        b = register_shapes(texture, texture ** 0.8, Homography.identity(), grid_frames[:8], cfg)
        assert a.to_csv() == b.to_csv()

    def test_posdist_descent(self, texture, grid_frames):
        target = texture ** 0.8
        ok = 0
        for seed in range(20):
            cfg = small_cfg(loss="posdist", steps=1, lr=1e-4, noise=2.0, seed=seed)
            loss = register_shapes(texture, target, Homography.identity(), grid_frames, cfg).column("loss")
            ok += loss[1] <= loss[0]
        assert ok >= 19

    def test_analytic_matches_finite_diff(self, texture, grid_frames):
        target = texture ** 0.8
        grads = []
        for mode in ("analytic", "finitediff"):
            cfg = small_cfg(gradient_mode=mode, fd_step=1e-6, noise=1.5, seed=1)
            prob = _Problem(texture, target, Homography.identity(), grid_frames, cfg)
            grads.append(prob.evaluate(prob.params)[1])
        np.testing.assert_allclose(grads[0], grads[1], rtol=1e-3, atol=1e-8)

    def test_empty(self, texture):
        with pytest.raises(EmptyExperiment):
            register_shapes(texture, texture, Homography.identity(),
                            [AffineFrame.circle(1.0, 1.0, 3.0)], small_cfg())
        with pytest.raises(EmptyExperiment):
            register_shapes(texture, texture, Homography.identity(), [], small_cfg())

    def test_drops_border_frames(self, texture, grid_frames):
        frames = grid_frames + [AffineFrame.circle(2.0, 64.0, 3.0)]
        traj = register_shapes(texture, texture, Homography.identity(), frames, small_cfg(steps=0))
        assert traj.n_frames == len(grid_frames) and traj.n_dropped == 1

    def test_csv(self, texture, grid_frames):
        traj = register_shapes(texture, texture, Homography.identity(), grid_frames, small_cfg(steps=2))
        lines = traj.to_csv().splitlines()
        assert lines[0] == ",".join(CSV_HEADER)
        assert len(lines) == 4 and lines[1].startswith("0,")

    def test_unit_norm_only_rescales(self, texture, grid_frames):
        target = texture ** 0.8
        vals = []
        for unit in (True, False):
            cfg = small_cfg(loss="posdist", unit_norm_loss=unit)
            prob = _Problem(texture, target, Homography.identity(), grid_frames, cfg)
            vals.append(prob.evaluate(prob.params, with_grad=False)[0])
        assert vals[0] * 16 == pytest.approx(vals[1])

    def test_loss_kinds(self, texture, grid_frames):
        losses = {k: register_shapes(texture, texture ** 0.8, Homography.identity(), grid_frames,
                                     small_cfg(loss=k, steps=0)).records[0].loss for k in LossKind}
        assert losses[LossKind.HARDNEG] == losses[LossKind.HARDNEGC]
