import math

import numba
import numpy as np
import pytest

from swapf.distance import build_cdf, build_swdm, flat_cdf
from swapf.errors import DegenerateWeights
from swapf.measurement import (
    CameraModel,
    FrameWeigher,
    MeasurementContext,
    SemanticWeights,
    build_rotation_cache,
    footprint_side,
    nearest_bin,
    particle_weight,
    weigh_all,
)
from swapf.motion import Pose4
from swapf.raster import SemanticRaster, crop_window, resize_nearest, rotate_discard
from swapf.state import ParticleSet

from reference import materialized_particle_weight


def make_raster(labels, class_count=4, mpp=1.0):
    return SemanticRaster(labels=np.asarray(labels, dtype=np.uint8),
                          class_count=class_count, meters_per_pixel=mpp)


def make_context(map_raster, cam, alpha=None, gamma=10.0, d0=1.0,
                 cdf_profile="linear", bin_count=100):
    if alpha is None:
        alpha = np.ones(map_raster.class_count)
    weights = SemanticWeights(alpha=np.asarray(alpha, float), gamma=gamma, d0=d0)
    cdf = (build_cdf(cam.view_side, cdf_profile) if cdf_profile != "flat"
           else flat_cdf(cam.view_side))
    return MeasurementContext(
        map_raster=map_raster, swdm=build_swdm(map_raster), cdf=cdf,
        weights=weights, cam=cam, bin_count=bin_count,
    )


class TestFootprint:
    def test_90_deg_fov(self):
        assert footprint_side(100.0, CameraModel(fov_deg=90.0)) == pytest.approx(200.0)

    def test_60_deg_fov(self):
        side = footprint_side(200.0, CameraModel(fov_deg=60.0))
        assert side == pytest.approx(2 * 200 * math.tan(math.radians(30)))
        assert side == pytest.approx(230.94, abs=0.01)

    def test_linear_in_altitude(self):
        cam = CameraModel(fov_deg=74.0)
        assert footprint_side(300.0, cam) == pytest.approx(
            2 * footprint_side(150.0, cam)
        )

    def test_requires_positive_altitude(self):
        with pytest.raises(ValueError):
            footprint_side(0.0, CameraModel())


class TestRotationCache:
    def test_bin_zero_is_input(self):
        rng = np.random.default_rng(0)
        obs = make_raster(rng.integers(0, 4, (40, 40)), mpp=0.0)
        cache = build_rotation_cache(obs, 100)
        assert cache.bin_count == 100
        assert cache.bin_width == pytest.approx(3.6)
        assert (cache.bins[0].labels == obs.labels).all()

    def test_bin_25_is_quarter_turn(self):
        rng = np.random.default_rng(1)
        obs = make_raster(rng.integers(0, 4, (40, 40)), mpp=0.0)
        cache = build_rotation_cache(obs, 100)
        quarter = rotate_discard(obs, 90.0)
        assert cache.bins[25].width == obs.width
        assert (cache.bins[25].labels == quarter.labels).all()
        assert (quarter.labels == np.rot90(obs.labels, 1)).all()

    def test_bin_50_is_half_turn(self):
        rng = np.random.default_rng(2)
        obs = make_raster(rng.integers(0, 4, (40, 40)), mpp=0.0)
        cache = build_rotation_cache(obs, 100)
        assert (cache.bins[50].labels == np.rot90(obs.labels, 2)).all()

    def test_requires_square(self):
        obs = make_raster(np.zeros((4, 6)), mpp=0.0)
        with pytest.raises(ValueError):
            build_rotation_cache(obs, 10)


class TestNearestBin:
    def setup_method(self):
        obs = make_raster(np.zeros((8, 8)), mpp=0.0)
        self.cache = build_rotation_cache(obs, 100)

    def test_zero(self):
        assert nearest_bin(0.0, self.cache) == 0

    def test_exact_bin_width(self):
        assert nearest_bin(3.6, self.cache) == 1

    def test_half_width_tie_rounds_up(self):
        assert nearest_bin(1.81, self.cache) == 1
        assert nearest_bin(1.79, self.cache) == 0
        assert nearest_bin(1.8, self.cache) == 1

    def test_wraparound(self):
        assert nearest_bin(359.9, self.cache) == 0
        assert nearest_bin(358.0, self.cache) == 99


class TestParticleWeight:
    def test_perfect_match_single_class(self):
        # every distance is zero, so the weight is alpha * sum(cdf) / d0 + gamma
        cam = CameraModel(fov_deg=90.0, view_side=32)
        map_raster = make_raster(np.zeros((64, 64), dtype=np.uint8),
                                 class_count=1, mpp=1.0)
        ctx = make_context(map_raster, cam, alpha=[1.0], gamma=10.0, d0=1.0)
        obs = make_raster(np.zeros((32, 32)), class_count=1, mpp=0.0)
        cache = build_rotation_cache(obs, ctx.bin_count)
        pose = Pose4(x=32.0, y=32.0, h=16.0, theta=0.0)  # footprint 32 m
        w = particle_weight(pose, cache, map_raster, ctx.swdm, ctx.cdf,
                            ctx.weights, cam)
        expected = float(ctx.cdf.values.sum()) + 10.0
        assert w == pytest.approx(expected, rel=1e-12)

    def test_absent_class_floor_bound(self):
        cam = CameraModel(fov_deg=90.0, view_side=32)
        map_raster = make_raster(np.zeros((64, 64)), class_count=4, mpp=1.0)
        ctx = make_context(map_raster, cam, gamma=10.0, d0=1.0)
        obs = make_raster(np.full((32, 32), 3), class_count=4, mpp=0.0)
        cache = build_rotation_cache(obs, ctx.bin_count)
        pose = Pose4(x=32.0, y=32.0, h=16.0, theta=0.0)
        w = particle_weight(pose, cache, map_raster, ctx.swdm, ctx.cdf,
                            ctx.weights, cam)
        d_sentinel = float(np.float32(ctx.swdm.d_max))
        bound = float(ctx.cdf.values.sum()) / (d_sentinel + 1.0) + 10.0
        assert w == pytest.approx(bound, rel=1e-9)
        assert w >= 10.0

    @pytest.mark.parametrize("map_side,view_side", [(32, 32), (64, 32)])
    def test_matches_materialized_view_oracle(self, map_side, view_side):
        rng = np.random.default_rng(map_side * 1000 + view_side)
        cam = CameraModel(fov_deg=90.0, view_side=view_side)
        for trial in range(12):
            map_raster = make_raster(rng.integers(0, 4, (map_side, map_side)),
                                     mpp=1.0)
            ctx = make_context(map_raster, cam,
                               alpha=rng.uniform(0.2, 2.0, 4), gamma=10.0)
            obs = make_raster(rng.integers(0, 4, (view_side, view_side)), mpp=0.0)
            cache = build_rotation_cache(obs, ctx.bin_count)
            pose = Pose4(
                x=float(rng.uniform(-5, map_side + 5)),
                y=float(rng.uniform(-5, map_side + 5)),
                h=float(rng.uniform(4.0, map_side * 0.7)),
                theta=float(rng.uniform(0, 360)),
            )
            got = particle_weight(pose, cache, map_raster, ctx.swdm, ctx.cdf,
                                  ctx.weights, cam)
            b = nearest_bin(pose.theta, cache)
            expected = materialized_particle_weight(
                (pose.x, pose.y, pose.h, pose.theta),
                cache.bins[b].labels,
                ctx.swdm.distances,
                ctx.swdm.d_max,
                map_raster.meters_per_pixel,
                cam.fov_deg,
                cam.view_side,
                ctx.weights.alpha,
                ctx.weights.gamma,
                ctx.weights.d0,
                ctx.cdf.values,
            )
            assert got == pytest.approx(expected, rel=1e-6)

    def test_cached_bin_equals_exact_rotation_bitwise(self):
        # at bin centers the cache introduces zero error: same raster, same sum
        rng = np.random.default_rng(33)
        cam = CameraModel(fov_deg=90.0, view_side=40)
        map_raster = make_raster(rng.integers(0, 4, (80, 80)), mpp=1.0)
        ctx = make_context(map_raster, cam)
        obs = make_raster(rng.integers(0, 4, (40, 40)), mpp=0.0)
        cache = build_rotation_cache(obs, 100)
        for theta in (0.0, 3.6, 90.0, 180.0, 270.0):
            pose = Pose4(x=40.0, y=40.0, h=25.0, theta=theta)
            via_cache = particle_weight(pose, cache, map_raster, ctx.swdm,
                                        ctx.cdf, ctx.weights, cam)
            exact_bin = rotate_discard(obs, theta)
            exact_cache = build_rotation_cache(exact_bin, 1)
            exact_pose = Pose4(x=40.0, y=40.0, h=25.0, theta=0.0)
            via_exact = particle_weight(exact_pose, exact_cache, map_raster,
                                        ctx.swdm, ctx.cdf, ctx.weights, cam)
            assert via_cache == via_exact

    def test_landmark_monotonicity(self):
        # particle on the landmark beats particles a footprint away
        cam = CameraModel(fov_deg=90.0, view_side=32)
        labels = np.zeros((200, 200), dtype=np.uint8)
        labels[90:110, 90:110] = 1
        map_raster = make_raster(labels, class_count=2, mpp=1.0)
        ctx = make_context(map_raster, cam, alpha=[0.0, 1.0])
        center = Pose4(x=100.0, y=100.0, h=20.0, theta=0.0)  # footprint 40 m
        obs = resize_nearest(crop_window(map_raster, (100, 100), 40), 32)
        obs = make_raster(obs.labels, class_count=2, mpp=0.0)
        cache = build_rotation_cache(obs, ctx.bin_count)
        w_center = particle_weight(center, cache, map_raster, ctx.swdm,
                                   ctx.cdf, ctx.weights, cam)
        for dx, dy in ((40, 0), (0, 40), (-40, 0), (0, -40), (60, 60)):
            shifted = Pose4(x=100.0 + dx, y=100.0 + dy, h=20.0, theta=0.0)
            w_shift = particle_weight(shifted, cache, map_raster, ctx.swdm,
                                      ctx.cdf, ctx.weights, cam)
            assert w_center >= w_shift

    def test_altitude_sensitivity_nested_squares(self):
        # true altitude outscores 2x altitude at the same (x, y, theta)
        cam = CameraModel(fov_deg=90.0, view_side=40)
        labels = np.zeros((400, 400), dtype=np.uint8)
        labels[160:240, 160:240] = 1
        labels[185:215, 185:215] = 2
        map_raster = make_raster(labels, class_count=3, mpp=1.0)
        ctx = make_context(map_raster, cam, alpha=[0.0, 1.0, 1.0])
        h_true = 50.0  # footprint 100 m covers both squares
        obs = resize_nearest(crop_window(map_raster, (200, 200), 100), 40)
        obs = make_raster(obs.labels, class_count=3, mpp=0.0)
        cache = build_rotation_cache(obs, ctx.bin_count)
        w_true = particle_weight(Pose4(200, 200, h_true, 0), cache, map_raster,
                                 ctx.swdm, ctx.cdf, ctx.weights, cam)
        w_double = particle_weight(Pose4(200, 200, 2 * h_true, 0), cache,
                                   map_raster, ctx.swdm, ctx.cdf, ctx.weights,
                                   cam)
        assert w_true > w_double


class TestWeighAll:
    def setup_method(self):
        rng = np.random.default_rng(50)
        self.cam = CameraModel(fov_deg=90.0, view_side=24)
        self.map_raster = make_raster(rng.integers(0, 4, (64, 64)), mpp=1.0)
        self.ctx = make_context(self.map_raster, self.cam)
        obs = make_raster(rng.integers(0, 4, (24, 24)), mpp=0.0)
        self.weigher = FrameWeigher(
            ctx=self.ctx, cache=build_rotation_cache(obs, self.ctx.bin_count)
        )

    def particles(self, n, seed=0):
        rng = np.random.default_rng(seed)
        poses = np.column_stack([
            rng.uniform(0, 64, n), rng.uniform(0, 64, n),
            rng.uniform(5, 40, n), rng.uniform(0, 360, n),
        ])
        return ParticleSet(poses=poses, weights=np.full(n, 1.0 / n),
                           master_seed=0)

    def test_single_particle_weight_one(self):
        ps, _ = weigh_all(self.particles(1), self.weigher)
        assert ps.weights[0] == 1.0

    def test_identical_particles_uniform(self):
        poses = np.tile([[32.0, 32.0, 20.0, 45.0]], (8, 1))
        ps = ParticleSet(poses=poses, weights=np.full(8, 0.125), master_seed=0)
        out, _ = weigh_all(ps, self.weigher)
        assert (out.weights == 0.125).all()

    def test_normalization_and_floor(self):
        ps, raw = weigh_all(self.particles(500), self.weigher)
        assert abs(float(np.sum(ps.weights)) - 1.0) <= 1e-9
        assert (raw >= self.ctx.weights.gamma).all()

    def test_order_preserved(self):
        ps = self.particles(100)
        out, raw = weigh_all(ps, self.weigher)
        assert (out.poses == ps.poses).all()
        assert np.argmax(out.weights) == np.argmax(raw)

    def test_parallel_equals_serial_bitwise(self):
        ps = self.particles(300, seed=3)
        old = numba.get_num_threads()
        try:
            numba.set_num_threads(1)
            serial = self.weigher.unnormalized(ps.poses)
            numba.set_num_threads(max(2, old))
            parallel = self.weigher.unnormalized(ps.poses)
        finally:
            numba.set_num_threads(old)
        assert (serial == parallel).all()

    def test_scalar_path_matches_bulk(self):
        ps = self.particles(20, seed=9)
        bulk = self.weigher.unnormalized(ps.poses)
        for i in range(ps.n):
            pose = Pose4(*ps.poses[i])
            w = particle_weight(pose, self.weigher.cache, self.map_raster,
                                self.ctx.swdm, self.ctx.cdf, self.ctx.weights,
                                self.cam)
            assert w == bulk[i]

    def test_degenerate_weights_guard(self):
        # gamma = 0 and an observation whose classes never score
        cam = CameraModel(fov_deg=90.0, view_side=8)
        map_raster = make_raster(np.zeros((16, 16)), class_count=2, mpp=1.0)
        ctx = make_context(map_raster, cam, alpha=[0.0, 1.0], gamma=0.0)
        obs = make_raster(np.zeros((8, 8)), class_count=2, mpp=0.0)
        weigher = FrameWeigher(ctx=ctx, cache=build_rotation_cache(obs, 4))
        ps = ParticleSet(poses=np.array([[8.0, 8.0, 4.0, 0.0]]),
                         weights=np.array([1.0]), master_seed=0)
        with pytest.raises(DegenerateWeights):
            weigh_all(ps, weigher)
