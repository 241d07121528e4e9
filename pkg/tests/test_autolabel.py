import numpy as np
import pytest

from oracles import oracle_region_grow, path_oracle_mask

from greyzone.autolabel import (
    NoSeedsError,
    RegionGrowParams,
    RegionGrowResult,
    make_weak_labels,
    polyline_distance_field,
    project_vehicle_path,
    region_grow,
)
from greyzone.bev import Pose2p5D, quantize_height
from greyzone.grids import HeightMap, Label, Role


def hm_from_meters(meters, valid=None, resolution=0.2):
    meters = np.asarray(meters, dtype=float)
    if valid is None:
        valid = np.ones(meters.shape, bool)
    return HeightMap(np.where(valid, quantize_height(meters), 0), valid, resolution)


def test_flat_grid_all_drivable():
    hm = hm_from_meters(np.zeros((3, 3)))
    res = region_grow(hm, RegionGrowParams())
    assert len(res.drivable) == 9
    assert not res.obstacle


def test_step_splits_line():
    hm = hm_from_meters([[0.0, 0.0, 1.0]])
    params = RegionGrowParams(t_h=0.3, t_a=0.8, seed_interval=(-0.1, 0.1))
    res = region_grow(hm, params)
    assert res.drivable == {(0, 0), (0, 1)}
    assert res.obstacle == {(0, 2)}


def test_no_seeds_raises():
    hm = hm_from_meters(np.full((2, 2), 2.0))
    with pytest.raises(NoSeedsError):
        region_grow(hm, RegionGrowParams(seed_interval=(-0.1, 0.1)))
    with pytest.raises(ValueError):
        region_grow(HeightMap(np.zeros((2, 2)), np.zeros((2, 2), bool)), RegionGrowParams())


def test_invalid_pixels_never_visited():
    valid = np.ones((4, 4), bool)
    valid[1:3, 1:3] = False
    hm = hm_from_meters(np.zeros((4, 4)), valid)
    res = region_grow(hm, RegionGrowParams())
    touched = res.drivable | res.obstacle
    for j in (1, 2):
        for k in (1, 2):
            assert (j, k) not in touched


def test_matches_oracle_on_random_grids():
    rng = np.random.default_rng(123)
    for trial in range(120):
        rows, cols = rng.integers(2, 17, 2)
        meters = rng.uniform(-0.6, 1.2, (rows, cols))
        valid = rng.random((rows, cols)) > 0.15
        hm = hm_from_meters(meters, valid)
        params = RegionGrowParams(
            t_h=float(rng.uniform(0.1, 0.8)),
            t_a=float(rng.uniform(0.3, 1.4)),
            seed_interval=(-0.2, 0.2),
            connectivity=int(rng.choice([4, 8])),
        )
        try:
            got = region_grow(hm, params)
        except (NoSeedsError, ValueError):
            with pytest.raises((NoSeedsError, ValueError)):
                oracle_region_grow(hm, params)
            continue
        want_d, want_o = oracle_region_grow(hm, params)
        assert got.drivable == want_d, f"trial {trial}"
        assert got.obstacle == want_o, f"trial {trial}"


def test_sets_disjoint_and_valid_only():
    rng = np.random.default_rng(5)
    meters = rng.uniform(-0.5, 1.5, (12, 12))
    valid = rng.random((12, 12)) > 0.2
    hm = hm_from_meters(meters, valid)
    res = region_grow(hm, RegionGrowParams())
    assert not (res.drivable & res.obstacle)
    for j, k in res.drivable | res.obstacle:
        assert valid[j, k]


def test_loosening_thresholds_grows_drivable():
    rng = np.random.default_rng(8)
    meters = rng.uniform(-0.4, 0.9, (10, 10))
    hm = hm_from_meters(meters)
    tight = region_grow(hm, RegionGrowParams(t_h=0.2, t_a=0.5))
    loose = region_grow(hm, RegionGrowParams(t_h=0.6, t_a=1.2))
    assert tight.drivable <= loose.drivable


def test_result_rejects_overlap():
    with pytest.raises(ValueError):
        RegionGrowResult(frozenset({(0, 0)}), frozenset({(0, 0)}))


def test_straight_path_band():
    poses = [Pose2p5D(0.0, 0.0, 0.0, 0.0), Pose2p5D(10.0, 0.0, 0.0, 0.0)]
    got = project_vehicle_path(poses, 2.0, 300, 300, 0.2)
    assert (got == path_oracle_mask(poses, 2.0, 300, 300, 0.2)).all()
    # the straight stretch is a 10-pixel-wide band on the center columns
    assert got[120, 145:155].all()
    assert not got[120, 144] and not got[120, 155]
    # 50 rows of forward travel are covered
    assert got[100:150, 150].all()


def test_single_pose_disk():
    poses = [Pose2p5D(0.0, 0.0, 0.0, 0.0)]
    got = project_vehicle_path(poses, 2.0, 64, 64, 0.2)
    assert (got == path_oracle_mask(poses, 2.0, 64, 64, 0.2)).all()
    js, ks = np.nonzero(got)
    assert 60 <= got.sum() <= 90  # ~pi * 5^2 pixels
    assert js.min() >= 27 and js.max() <= 36


def test_path_outside_grid_empty():
    poses = [Pose2p5D(100.0, 100.0, 0.0, 0.0), Pose2p5D(120.0, 100.0, 0.0, 0.0)]
    assert not project_vehicle_path(poses, 2.0, 64, 64, 0.2).any()


def test_path_random_oracle_equivalence():
    rng = np.random.default_rng(77)
    for _ in range(10):
        poses = [Pose2p5D(*rng.uniform(-3, 3, 2), 0.0, 0.0) for _ in range(rng.integers(1, 6))]
        width = float(rng.uniform(0.5, 3.0))
        got = project_vehicle_path(poses, width, 32, 32, 0.2)
        assert (got == path_oracle_mask(poses, width, 32, 32, 0.2)).all()


def test_path_errors():
    with pytest.raises(ValueError):
        project_vehicle_path([], 2.0, 16, 16, 0.2)
    with pytest.raises(ValueError):
        project_vehicle_path([Pose2p5D(0, 0, 0, 0)], 0.0, 16, 16, 0.2)
    with pytest.raises(ValueError):
        polyline_distance_field(np.zeros((0, 2)), 4, 4, 0.2)


def test_weak_labels_rules():
    hm = hm_from_meters(np.zeros((3, 3)))
    rg = RegionGrowResult(frozenset({(2, 2)}), frozenset({(0, 0), (1, 1)}))
    vp = np.zeros((3, 3), bool)
    vp[0, 0] = True  # collides with a region-grow obstacle: path wins
    weak = make_weak_labels(hm, rg, vp)
    assert weak.role is Role.WEAK
    assert weak.labels[0, 0] == Label.DRI
    assert weak.labels[1, 1] == Label.OBS
    assert weak.labels[2, 2] == Label.UNK  # grown drivable unused by default
    assert weak.labels[0, 1] == Label.UNK
    assert not (weak.labels == Label.GRE).any()

    rg_mode = make_weak_labels(hm, rg, vp, use_rg_drivable=True)
    assert rg_mode.labels[2, 2] == Label.DRI

    with pytest.raises(ValueError):
        make_weak_labels(hm, rg, np.zeros((2, 2), bool))
