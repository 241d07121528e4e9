"""Evaluation measures over prediction / ground-truth label pairs.

Per class (drivable, obstacle): Q1 precision, Q2 recall, F1; plus Q3, the
fraction of the vehicle path extracted as drivable. Grey and unknown
ground-truth pixels are excluded from the reference sets (grey quality is
deliberately not evaluated) but predictions over them still count against
precision.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .grids import Label, LabelMap


def _ratio(num: int, den: int) -> float:
    # Vacuous-truth convention: an empty denominator scores 1 when the
    # numerator is empty too, else 0.
    if den == 0:
        return 1.0 if num == 0 else 0.0
    return num / den


def _f1(q1: float, q2: float) -> float:
    if q1 + q2 == 0.0:
        return 0.0
    return 2.0 * q1 * q2 / (q1 + q2)


@dataclass(frozen=True)
class MetricsReport:
    q1_dri: float
    q2_dri: float
    f1_dri: float
    q3: float
    q1_obs: float
    q2_obs: float
    f1_obs: float
    tp_dri: int
    pred_dri: int
    gt_dri: int
    tp_obs: int
    pred_obs: int
    gt_obs: int
    vp_total: int
    vp_hit: int

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(
    pred: LabelMap,
    gt: LabelMap,
    vp: np.ndarray | None = None,
    exclude_grey_from_pred_sets: bool = False,
) -> MetricsReport:
    """Count the per-class confusion and derive Q1/Q2/Q3/F1.

    ``exclude_grey_from_pred_sets`` drops pixels whose ground truth is grey
    from the predicted sets as well (sensitivity toggle; the default keeps
    the literal definition where the denominator of Q1 is the whole
    predicted set).
    """
    if pred.shape != gt.shape:
        raise ValueError(f"pred {pred.shape} / gt {gt.shape} shape mismatch")
    p = pred.labels
    g = gt.labels
    if vp is None:
        vp = np.zeros(p.shape, dtype=bool)
    vp = np.asarray(vp, dtype=bool)
    if vp.shape != p.shape:
        raise ValueError("vehicle-path mask shape mismatch")

    pred_scope = np.ones(p.shape, dtype=bool)
    if exclude_grey_from_pred_sets:
        pred_scope = g != Label.GRE

    counts = {}
    for name, label in (("dri", Label.DRI), ("obs", Label.OBS)):
        gt_set = g == label
        pred_set = (p == label) & pred_scope
        counts[name] = (
            int((gt_set & pred_set).sum()),
            int(pred_set.sum()),
            int(gt_set.sum()),
        )
    tp_d, pred_d, gt_d = counts["dri"]
    tp_o, pred_o, gt_o = counts["obs"]
    vp_total = int(vp.sum())
    vp_hit = int((vp & (p == Label.DRI)).sum())

    q1_d, q2_d = _ratio(tp_d, pred_d), _ratio(tp_d, gt_d)
    q1_o, q2_o = _ratio(tp_o, pred_o), _ratio(tp_o, gt_o)
    return MetricsReport(
        q1_dri=q1_d,
        q2_dri=q2_d,
        f1_dri=_f1(q1_d, q2_d),
        q3=_ratio(vp_hit, vp_total),
        q1_obs=q1_o,
        q2_obs=q2_o,
        f1_obs=_f1(q1_o, q2_o),
        tp_dri=tp_d,
        pred_dri=pred_d,
        gt_dri=gt_d,
        tp_obs=tp_o,
        pred_obs=pred_o,
        gt_obs=gt_o,
        vp_total=vp_total,
        vp_hit=vp_hit,
    )


def aggregate(reports) -> dict:
    """Macro average of the ratio measures over a scene set."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    keys = ("q1_dri", "q2_dri", "f1_dri", "q3", "q1_obs", "q2_obs", "f1_obs")
    return {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
