"""Metrics and aggregation for the joint-angle benchmark.

The headline metric is mean absolute error over joint angles in degrees.
Aggregation order is part of the protocol: per-user MAE is computed first
and then averaged unweighted across users (population std backs the +-
columns), while the cross-split average weights each split by its sample
count. Per-finger and per-phalanx groupings follow the 22-DoF layout; the
phalanx membership (thumb CMC counted as proximal, thumb MCP as
mid-phalanx, thumb IP as distal) is a declared convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .hand_model import N_DOF

FINGER_GROUPS = {
    "thumb": (0, 1, 2, 3),
    "index": (4, 5, 6, 7),
    "middle": (8, 9, 10, 11),
    "ring": (12, 13, 14, 15),
    "pinky": (16, 17, 18, 19),
    "wrist_fe": (20,),
    "wrist_ru": (21,),
}
PHALANX_GROUPS = {
    "proximal": (0, 1, 4, 5, 8, 9, 12, 13, 16, 17),
    "mid_phalanx": (2, 6, 10, 14, 18),
    "distal": (3, 7, 11, 15, 19),
}


@dataclass(frozen=True)
class EvalRecord:
    """Per-sample absolute joint-angle errors (degrees) with grouping keys."""

    errors: np.ndarray        # (J,) absolute errors
    user_id: int
    gesture_label: str
    split_tag: str = "train"
    hand: str = "right"

    def __post_init__(self):
        errors = np.asarray(self.errors, dtype=float)
        if errors.ndim != 1:
            raise InvalidInputError("errors must be a 1-D vector")
        if not np.all(np.isfinite(errors)) or errors.min() < 0:
            raise InvalidInputError("errors must be finite and non-negative")
        object.__setattr__(self, "errors", errors)


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """(1/JT) sum |pred - gt| in degrees."""
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(np.abs(pred - gt).mean())


def records_from_predictions(pred, gt, user_id, gesture_label,
                             split_tag="train", hand="right"):
    """One EvalRecord per time sample from (T, J) prediction/target pairs."""
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise InvalidInputError("pred and gt must be matching (T, J) arrays")
    return [EvalRecord(errors=row, user_id=user_id, gesture_label=gesture_label,
                       split_tag=split_tag, hand=hand)
            for row in np.abs(pred - gt)]


def group_mae(records, grouping=None) -> dict:
    """Mean error restricted to each named index set; empty groups absent."""
    if not records:
        raise InvalidInputError("no records to aggregate")
    if grouping is None:
        grouping = FINGER_GROUPS
    stacked = np.stack([r.errors for r in records])
    n_joints = stacked.shape[1]
    out = {}
    for name, idx in grouping.items():
        idx = [i for i in idx if i < n_joints]
        if idx:
            out[name] = float(stacked[:, idx].mean())
    return out


def per_user_aggregate(records):
    """Per-user MAE first, then unweighted mean and population std across users.

    Returns (mean, std, {user_id: mae}).
    """
    if not records:
        raise InvalidInputError("no records to aggregate")
    by_user = {}
    for r in records:
        by_user.setdefault(r.user_id, []).append(r.errors)
    user_mae = {u: float(np.stack(rows).mean()) for u, rows in sorted(by_user.items())}
    values = np.array(list(user_mae.values()))
    return float(values.mean()), float(values.std()), user_mae


def weighted_avg(split_results) -> float:
    """Sample-count-weighted mean MAE across splits.

    `split_results` maps split name -> (mae_degrees, n_samples).
    """
    total = sum(n for _, n in split_results.values())
    if total <= 0:
        raise InvalidInputError("zero total samples across splits")
    return float(sum(m * n for m, n in split_results.values()) / total)


def pooled_mae(records) -> float:
    """All samples pooled into one MAE (differs from per-user on imbalance)."""
    if not records:
        raise InvalidInputError("no records to aggregate")
    return float(np.stack([r.errors for r in records]).mean())
