import numpy as np
import pytest
from oracles import brute_force_report

from greyzone.grids import Label, LabelMap, Role
from greyzone.metrics import aggregate, evaluate

U, D, O, G = Label.UNK, Label.DRI, Label.OBS, Label.GRE


def lm(codes, role=Role.PREDICTION):
    return LabelMap(np.asarray(codes), role)


def test_perfect_prediction_scores_one():
    codes = np.array([[D, O], [O, D]])
    rep = evaluate(lm(codes), lm(codes, Role.HUMAN_GT))
    assert rep.q1_dri == rep.q2_dri == rep.f1_dri == 1.0
    assert rep.q1_obs == rep.q2_obs == rep.f1_obs == 1.0


def test_hand_counted_confusion_fixture():
    # gt has 10 drivable pixels; prediction recovers 8 of them and also marks
    # 2 obstacle-gt pixels drivable
    gt = np.full((3, 10), O)
    gt[0] = D
    pred = np.full((3, 10), O)
    pred[0, :8] = D
    pred[1, :2] = D
    rep = evaluate(lm(pred), lm(gt, Role.HUMAN_GT))
    assert rep.q1_dri == pytest.approx(0.8)
    assert rep.q2_dri == pytest.approx(0.8)
    assert rep.f1_dri == pytest.approx(0.8)


def test_vehicle_path_accuracy_fixture():
    gt = np.full((10, 10), D)
    pred = np.full((10, 10), D)
    pred[0, :5] = O  # 5 of the 100 path pixels predicted not-drivable
    vp = np.ones((10, 10), bool)
    rep = evaluate(lm(pred), lm(gt, Role.HUMAN_GT), vp)
    assert rep.q3 == pytest.approx(0.95)
    assert rep.vp_total == 100 and rep.vp_hit == 95


def test_grey_and_unknown_gt_excluded_from_reference_sets():
    gt = np.array([[G, U], [D, O]])
    pred = np.array([[D, D], [D, O]])
    rep = evaluate(lm(pred), lm(gt, Role.HUMAN_GT))
    # reference sets hold one pixel each; predictions over grey/unknown stay
    # in the predicted set and cost precision
    assert rep.gt_dri == 1 and rep.gt_obs == 1
    assert rep.pred_dri == 3
    assert rep.q1_dri == pytest.approx(1 / 3)
    assert rep.q2_dri == 1.0

    scoped = evaluate(lm(pred), lm(gt, Role.HUMAN_GT), exclude_grey_from_pred_sets=True)
    assert scoped.pred_dri == 2
    assert scoped.q1_dri == pytest.approx(0.5)


def test_zero_denominators_are_vacuous():
    gt = np.full((2, 2), G)
    pred = np.full((2, 2), G)
    rep = evaluate(lm(pred), lm(gt, Role.HUMAN_GT))
    assert rep.q1_dri == 1.0 and rep.q2_dri == 1.0
    assert rep.q3 == 1.0  # empty path
    assert rep.f1_obs == 1.0


def test_all_wrong_prediction_scores_zero_f1():
    gt = np.full((2, 2), D)
    pred = np.full((2, 2), O)
    rep = evaluate(lm(pred), lm(gt, Role.HUMAN_GT))
    # no drivable predictions: precision is vacuous, recall and F1 are zero
    assert rep.q1_dri == 1.0 and rep.q2_dri == 0.0 and rep.f1_dri == 0.0
    # predicted obstacle set is non-empty but gt has none: precision 0
    assert rep.q1_obs == 0.0 and rep.q2_obs == 1.0 and rep.f1_obs == 0.0


def test_matches_brute_force_on_random_maps():
    rng = np.random.default_rng(99)
    for _ in range(100):
        pred = rng.integers(0, 4, (16, 16))
        gt = rng.integers(0, 4, (16, 16))
        vp = rng.random((16, 16)) > 0.8
        rep = evaluate(lm(pred), lm(gt, Role.HUMAN_GT), vp)
        want = brute_force_report(pred, gt, vp)
        for key, val in want.items():
            assert getattr(rep, key) == pytest.approx(val), key


def test_permutation_invariance():
    rng = np.random.default_rng(4)
    pred = rng.integers(0, 4, (8, 8))
    gt = rng.integers(0, 4, (8, 8))
    a = evaluate(lm(pred), lm(gt, Role.HUMAN_GT))
    perm = rng.permutation(64)
    b = evaluate(
        lm(pred.reshape(-1)[perm].reshape(8, 8)),
        lm(gt.reshape(-1)[perm].reshape(8, 8), Role.HUMAN_GT),
    )
    assert a.as_dict() == b.as_dict()


def test_fixing_a_false_negative_never_hurts():
    rng = np.random.default_rng(17)
    for _ in range(30):
        pred = rng.integers(0, 4, (8, 8))
        gt = rng.integers(0, 4, (8, 8))
        miss = np.argwhere((gt == D) & (pred != D))
        if miss.size == 0:
            continue
        before = evaluate(lm(pred), lm(gt, Role.HUMAN_GT))
        j, k = miss[0]
        fixed = pred.copy()
        fixed[j, k] = D
        after = evaluate(lm(fixed), lm(gt, Role.HUMAN_GT))
        assert after.q1_dri >= before.q1_dri - 1e-12
        assert after.q2_dri >= before.q2_dri - 1e-12
        assert after.f1_dri >= before.f1_dri - 1e-12


def test_f1_between_precision_and_recall():
    rng = np.random.default_rng(23)
    for _ in range(50):
        pred = rng.integers(0, 4, (6, 6))
        gt = rng.integers(0, 4, (6, 6))
        rep = evaluate(lm(pred), lm(gt, Role.HUMAN_GT))
        assert min(rep.q1_dri, rep.q2_dri) - 1e-12 <= rep.f1_dri <= max(rep.q1_dri, rep.q2_dri) + 1e-12


def test_aggregate_macro_average():
    gt = np.full((2, 2), D)
    r1 = evaluate(lm(np.full((2, 2), D)), lm(gt, Role.HUMAN_GT))
    r2 = evaluate(lm(np.full((2, 2), O)), lm(gt, Role.HUMAN_GT))
    agg = aggregate([r1, r2])
    assert agg["f1_dri"] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        aggregate([])


def test_shape_mismatch():
    with pytest.raises(ValueError):
        evaluate(lm(np.zeros((2, 2))), lm(np.zeros((3, 3)), Role.HUMAN_GT))
