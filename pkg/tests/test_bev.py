import math

import numpy as np
import pytest

from greyzone.bev import (
    PointCloud,
    Pose2p5D,
    aggregate_frames,
    dequantize_height,
    pixel_centers,
    quantize_height,
    world_to_pixel,
)

IDENTITY = Pose2p5D(0.0, 0.0, 0.0, 0.0)


def test_world_to_pixel_examples():
    assert world_to_pixel((0.0, 0.0), 300, 300, 0.2) == (150, 150)
    # 10 m forward is 50 rows up the grid
    assert world_to_pixel((10.0, 0.0), 300, 300, 0.2) == (100, 150)
    # 40 m to the right is 200 columns past center: off the grid
    assert world_to_pixel((0.0, -40.0), 300, 300, 0.2) is None
    with pytest.raises(ValueError):
        world_to_pixel((0.0, 0.0), 300, 300, 0.0)


def test_world_to_pixel_translation_consistency():
    rng = np.random.default_rng(0)
    for _ in range(100):
        x, y = rng.uniform(-20, 20, 2)
        res = 0.2
        base = world_to_pixel((x, y), 300, 300, res)
        fwd = world_to_pixel((x + res, y), 300, 300, res)
        if base and fwd:
            assert fwd == (base[0] - 1, base[1])
        left = world_to_pixel((x, y + res), 300, 300, res)
        if base and left:
            assert left == (base[0], base[1] - 1)


def test_pixel_centers_round_trip():
    xs, ys = pixel_centers(64, 64, 0.2)
    for j in (0, 17, 63):
        for k in (0, 40, 63):
            assert world_to_pixel((xs[j], ys[k]), 64, 64, 0.2) == (j, k)


def test_quantize_endpoints_and_half_up():
    assert quantize_height(-2.0, (-2, 4)) == 0
    assert quantize_height(4.0, (-2, 4)) == 255
    # 255 * 3/6 = 127.5 rounds half-up
    assert quantize_height(1.0, (-2, 4)) == 128
    assert quantize_height(0.0, (-2, 4)) == 85
    with pytest.raises(ValueError):
        quantize_height(0.0, (1.0, 1.0))


def test_quantize_clamps_and_is_monotone():
    assert quantize_height(-10.0, (-2, 4)) == 0
    assert quantize_height(99.0, (-2, 4)) == 255
    hs = np.linspace(-3, 5, 400)
    qs = quantize_height(hs, (-2, 4))
    assert (np.diff(qs) >= 0).all()


def test_dequantize_inverts_quantize_on_codes():
    codes = np.arange(256)
    assert (quantize_height(dequantize_height(codes, (-2, 4)), (-2, 4)) == codes).all()


def test_yaw_normalization():
    assert Pose2p5D(0, 0, 0, 3 * math.pi).yaw == pytest.approx(math.pi)
    assert Pose2p5D(0, 0, 0, -math.pi).yaw == pytest.approx(math.pi)
    assert Pose2p5D(0, 0, 0, 0.5).yaw == pytest.approx(0.5)


def test_aggregate_single_point_quantized():
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0]]), IDENTITY)
    hm = aggregate_frames([cloud], IDENTITY, 300, 300, 0.2, (-2, 4))
    assert hm.valid.sum() == 1
    assert hm.valid[150, 150]
    assert hm.height[150, 150] == 85


def test_aggregate_max_rule_and_empty():
    pts = np.array([[0.0, 0.0, 0.1], [0.0, 0.0, 1.5]])
    hm = aggregate_frames([PointCloud(pts, IDENTITY)], IDENTITY, 64, 64, 0.2)
    assert hm.height[32, 32] == quantize_height(1.5, (-2, 4))

    empty = aggregate_frames([PointCloud(np.zeros((0, 3)), IDENTITY)], IDENTITY, 16, 16, 0.2)
    assert not empty.valid.any()
    assert (empty.height == 0).all()

    with pytest.raises(ValueError):
        aggregate_frames([], IDENTITY, 16, 16, 0.2)


def test_aggregate_permutation_invariant():
    rng = np.random.default_rng(3)
    clouds = [PointCloud(rng.uniform(-5, 5, (40, 3)), IDENTITY) for _ in range(4)]
    a = aggregate_frames(clouds, IDENTITY, 64, 64, 0.2)
    b = aggregate_frames(clouds[::-1], IDENTITY, 64, 64, 0.2)
    assert (a.height == b.height).all()
    assert (a.valid == b.valid).all()


def test_aggregate_pose_transform_equivalence():
    # points pre-transformed by pose P, aggregated with reference P, equal the
    # raw points aggregated with the identity reference
    rng = np.random.default_rng(11)
    raw = rng.uniform(-4, 4, (80, 3))
    pose = Pose2p5D(1.5, -2.0, 0.7, 0.6)
    with_pose = aggregate_frames([PointCloud(raw, pose)], pose, 64, 64, 0.2)
    without = aggregate_frames([PointCloud(raw, IDENTITY)], IDENTITY, 64, 64, 0.2)
    assert (with_pose.valid == without.valid).all()
    assert (with_pose.height == without.height).all()


def test_aggregate_rejects_nonfinite_points():
    with pytest.raises(ValueError):
        PointCloud(np.array([[np.nan, 0.0, 0.0]]), IDENTITY)


def test_aggregate_matches_per_point_oracle():
    # independent route: transform and bin every point one at a time
    rng = np.random.default_rng(21)
    ref = Pose2p5D(0.4, -0.3, 0.2, 0.3)
    clouds = [
        PointCloud(rng.uniform(-4, 4, (60, 3)), Pose2p5D(*rng.uniform(-1, 1, 3), rng.uniform(-2, 2)))
        for _ in range(3)
    ]
    got = aggregate_frames(clouds, ref, 48, 48, 0.2, (-2, 4))

    best = {}
    for cloud in clouds:
        for px, py, pz in np.asarray(cloud.points):
            wx = math.cos(cloud.pose.yaw) * px - math.sin(cloud.pose.yaw) * py + cloud.pose.x
            wy = math.sin(cloud.pose.yaw) * px + math.cos(cloud.pose.yaw) * py + cloud.pose.y
            rx = math.cos(-ref.yaw) * (wx - ref.x) - math.sin(-ref.yaw) * (wy - ref.y)
            ry = math.sin(-ref.yaw) * (wx - ref.x) + math.cos(-ref.yaw) * (wy - ref.y)
            cell = world_to_pixel((rx, ry), 48, 48, 0.2)
            if cell is not None:
                z = pz + cloud.pose.z - ref.z
                best[cell] = max(best.get(cell, -math.inf), z)
    want_valid = np.zeros((48, 48), bool)
    want_height = np.zeros((48, 48), int)
    for (j, k), z in best.items():
        want_valid[j, k] = True
        want_height[j, k] = quantize_height(z, (-2, 4))
    assert (got.valid == want_valid).all()
    assert (got.height == want_height).all()
