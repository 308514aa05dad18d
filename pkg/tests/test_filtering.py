import numpy as np
import pytest

from swapf.distance import build_swdm
from swapf.errors import EmptySupport
from swapf.filtering import (
    CenterSemantic,
    FullSpace,
    Layered,
    initialize,
    resample_if_needed,
    step,
    systematic_resample,
)
from swapf.measurement import (
    CameraModel,
    FrameWeigher,
    MeasurementContext,
    SemanticWeights,
    build_rotation_cache,
    weigh_all,
)
from swapf.motion import NoiseParams, OdometryInput
from swapf.raster import SemanticRaster
from swapf.state import ParticleSet, StateBounds
from swapf.distance import build_cdf

ZERO_NOISE = NoiseParams(sigma_xy=0.0, sigma_h=0.0, sigma_theta=0.0)
BOUNDS = StateBounds(x=(0.0, 64.0), y=(0.0, 64.0), h=(5.0, 40.0))


def make_raster(labels, class_count=4, mpp=1.0):
    return SemanticRaster(labels=np.asarray(labels, dtype=np.uint8),
                          class_count=class_count, meters_per_pixel=mpp)


def make_ctx(map_raster, view_side=24, alpha=None, gamma=10.0, bins=100):
    cam = CameraModel(fov_deg=90.0, view_side=view_side)
    if alpha is None:
        alpha = np.ones(map_raster.class_count)
    return MeasurementContext(
        map_raster=map_raster,
        swdm=build_swdm(map_raster),
        cdf=build_cdf(view_side),
        weights=SemanticWeights(alpha=np.asarray(alpha, float), gamma=gamma),
        cam=cam,
        bin_count=bins,
    )


class TestInitialize:
    def test_full_space_in_bounds(self):
        ps = initialize(5000, BOUNDS, FullSpace(), seed=1)
        assert ps.n == 5000
        assert (ps.weights == 1.0 / 5000).all()
        assert (ps.poses[:, 0] >= 0).all() and (ps.poses[:, 0] < 64).all()
        assert (ps.poses[:, 1] >= 0).all() and (ps.poses[:, 1] < 64).all()
        assert (ps.poses[:, 2] >= 5).all() and (ps.poses[:, 2] <= 40).all()
        assert (ps.poses[:, 3] >= 0).all() and (ps.poses[:, 3] < 360).all()

    def test_layered_exact_replication(self):
        strategy = Layered(layer_heights=(150.0, 300.0, 450.0))
        bounds = StateBounds(x=(0, 100), y=(0, 100), h=(100, 500))
        ps = initialize(300, bounds, strategy, seed=2)
        for k, h in enumerate((150.0, 300.0, 450.0)):
            assert int(np.sum(ps.poses[:, 2] == h)) == 100
            block = ps.poses[k * 100 : (k + 1) * 100]
            assert (block[:, 2] == h).all()
        # (x, y, theta) tuples are duplicated across layers
        assert (ps.poses[:100, [0, 1, 3]] == ps.poses[100:200, [0, 1, 3]]).all()

    def test_layered_requires_divisible_count(self):
        with pytest.raises(ValueError):
            initialize(301, BOUNDS, Layered(layer_heights=(10.0, 20.0, 30.0)),
                       seed=0)

    def test_center_semantic_lands_on_class(self):
        labels = np.zeros((64, 64), dtype=np.uint8)
        labels[:32, :32] = 1  # buildings occupy one quadrant
        world = make_raster(labels)
        ps = initialize(500, BOUNDS, CenterSemantic(center_class=1), seed=3,
                        map_raster=world)
        cols = np.floor(ps.poses[:, 0] / world.meters_per_pixel).astype(int)
        rows = np.floor(ps.poses[:, 1] / world.meters_per_pixel).astype(int)
        assert (world.labels[rows, cols] == 1).all()

    def test_center_semantic_empty_support(self):
        world = make_raster(np.zeros((16, 16)))
        with pytest.raises(EmptySupport):
            initialize(10, BOUNDS, CenterSemantic(center_class=3), seed=0,
                       map_raster=world)


class TestSystematicResample:
    def test_uniform_weights_never_resample(self):
        ps = ParticleSet(poses=np.zeros((100, 4)) + 1.0,
                         weights=np.full(100, 0.01), master_seed=0)
        for frac in (0.1, 0.5, 0.99):
            out = resample_if_needed(ps, frac, np.random.default_rng(0))
            assert out is ps  # ESS == N, untouched

    def test_degenerate_weight_yields_copies(self):
        poses = np.arange(40.0).reshape(10, 4)
        weights = np.zeros(10)
        weights[7] = 1.0
        ps = ParticleSet(poses=poses, weights=weights, master_seed=0)
        out = resample_if_needed(ps, 0.5, np.random.default_rng(1))
        assert (out.poses == poses[7]).all()
        assert (out.weights == 0.1).all()

    @pytest.mark.parametrize("weights", [
        [0.5, 0.3, 0.1, 0.06, 0.04],
        [0.96, 0.01, 0.01, 0.01, 0.01],
        [0.2, 0.2, 0.2, 0.2, 0.2],
    ])
    def test_copy_counts_unbiased(self, weights):
        w = np.array(weights)
        n = w.size
        trials = 10_000
        rng = np.random.default_rng(9)
        counts = np.zeros((trials, n))
        for t in range(trials):
            idx = systematic_resample(w, rng)
            counts[t] = np.bincount(idx, minlength=n)
        mean = counts.mean(axis=0)
        se = counts.std(axis=0) / np.sqrt(trials)
        assert (np.abs(mean - n * w) <= 3 * se + 1e-9).all()

    def test_single_uniform_draw(self):
        # identical generator state => identical indices
        w = np.array([0.1, 0.2, 0.3, 0.4])
        a = systematic_resample(w, np.random.default_rng(5))
        b = systematic_resample(w, np.random.default_rng(5))
        assert (a == b).all()


class TestStep:
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.world = make_raster(rng.integers(0, 4, (64, 64)))
        self.ctx = make_ctx(self.world)
        self.obs = make_raster(rng.integers(0, 4, (24, 24)), mpp=0.0)
        self.odo = OdometryInput(vx=0.0, vy=0.0, vh=0.0, omega=0.0, dt=1.0)

    def test_particle_count_invariant_and_generation(self):
        ps = initialize(200, BOUNDS, FullSpace(), seed=5)
        out, _ = step(ps, self.obs, self.odo, self.ctx, ZERO_NOISE, BOUNDS)
        assert out.n == 200
        assert out.generation == 1

    def test_deterministic_trajectory(self):
        def run_twice():
            trajs = []
            for _ in range(2):
                ps = initialize(100, BOUNDS, FullSpace(), seed=11)
                states = []
                for _ in range(4):
                    ps, _ = step(ps, self.obs, self.odo, self.ctx,
                                 NoiseParams(2.0, 2.0, 1.0), BOUNDS)
                    states.append(ps.poses.copy())
                trajs.append(states)
            return trajs

        first, second = run_twice()
        for a, b in zip(first, second):
            assert (a == b).all()

    def test_poses_stay_in_altitude_bounds(self):
        ps = initialize(300, BOUNDS, FullSpace(), seed=6)
        for _ in range(3):
            ps, _ = step(ps, self.obs, self.odo, self.ctx,
                         NoiseParams(10.0, 10.0, 5.0), BOUNDS)
        assert (ps.poses[:, 2] >= BOUNDS.h[0]).all()
        assert (ps.poses[:, 2] <= BOUNDS.h[1]).all()
        assert (ps.poses[:, 3] >= 0).all() and (ps.poses[:, 3] < 360).all()

    def test_symmetric_hypotheses_keep_equal_mass(self):
        # two identical landmarks; clusters at each keep equal total weight
        labels = np.zeros((96, 96), dtype=np.uint8)
        labels[40:56, 12:28] = 1
        labels[40:56, 68:84] = 1
        world = make_raster(labels, class_count=2)
        ctx = make_ctx(world, view_side=16, alpha=[0.0, 1.0], bins=4)
        obs_labels = np.zeros((16, 16), dtype=np.uint8)
        obs_labels[4:12, 4:12] = 1
        obs = make_raster(obs_labels, class_count=2, mpp=0.0)

        poses = np.array(
            [[20.0, 48.0, 8.0, 0.0], [76.0, 48.0, 8.0, 0.0]] * 25
        )
        ps = ParticleSet(poses=poses, weights=np.full(50, 0.02), master_seed=3)
        out, _ = step(ps, obs, self.odo, ctx, ZERO_NOISE,
                      StateBounds(x=(0, 96), y=(0, 96), h=(5, 40)),
                      ess_threshold_fraction=0.01)
        left = out.weights[out.poses[:, 0] < 48].sum()
        right = out.weights[out.poses[:, 0] >= 48].sum()
        assert left == pytest.approx(right, abs=1e-12)

    def test_matching_region_gains_mass(self):
        labels = np.zeros((64, 64), dtype=np.uint8)
        labels[:, :32] = 1
        labels[:, 32:] = 2
        world = make_raster(labels, class_count=3)
        ctx = make_ctx(world, view_side=16, alpha=[0.0, 1.0, 1.0], bins=4)
        obs = make_raster(np.full((16, 16), 1), class_count=3, mpp=0.0)

        rng = np.random.default_rng(8)
        n = 100
        poses = np.column_stack([
            rng.uniform(4, 60, n), rng.uniform(4, 60, n),
            np.full(n, 8.0), np.zeros(n),
        ])
        ps = ParticleSet(poses=poses, weights=np.full(n, 1.0 / n), master_seed=1)
        prior_left = ps.weights[ps.poses[:, 0] < 32].sum()
        out, _ = step(ps, obs, self.odo, ctx, ZERO_NOISE,
                      StateBounds(x=(0, 64), y=(0, 64), h=(5, 40)),
                      ess_threshold_fraction=0.01)
        post_left = out.weights[out.poses[:, 0] < 32].sum()
        assert post_left > prior_left

    def test_fully_off_map_particle_scores_floor(self):
        ps_poses = np.array([[1e6, 1e6, 8.0, 0.0]])
        ps = ParticleSet(poses=ps_poses, weights=np.array([1.0]), master_seed=0)
        cache = build_rotation_cache(self.obs, self.ctx.bin_count)
        weigher = FrameWeigher(ctx=self.ctx, cache=cache)
        raw = weigher.unnormalized(ps.poses)
        sw = self.ctx.weights
        expected = (
            float(self.ctx.cdf.values.sum()) / (self.ctx.swdm.d_max + sw.d0)
            + sw.gamma
        )
        assert raw[0] == pytest.approx(expected, rel=1e-9)
