import numpy as np
import pytest

from handemg import evalkit as ek
from handemg.errors import InvalidInputError


def _records(rng, n, user_id=0, n_joints=22):
    return [ek.EvalRecord(errors=rng.uniform(0, 10, n_joints), user_id=user_id,
                          gesture_label="Rest") for _ in range(n)]


def test_groupings_partition_the_layout():
    finger = [i for idx in ek.FINGER_GROUPS.values() for i in idx]
    assert sorted(finger) == list(range(22))
    phalanx = [i for idx in ek.PHALANX_GROUPS.values() for i in idx]
    assert sorted(phalanx) == list(range(20))  # wrist DoFs have no phalanx


def test_mae_matches_double_loop():
    rng = np.random.default_rng(0)
    pred = rng.normal(size=(50, 22))
    gt = rng.normal(size=(50, 22))
    acc = 0.0
    for t in range(50):
        for j in range(22):
            acc += abs(pred[t, j] - gt[t, j])
    assert abs(ek.mae(pred, gt) - acc / (50 * 22)) < 1e-12


def test_records_recombine_to_mae():
    rng = np.random.default_rng(1)
    pred = rng.normal(size=(30, 22))
    gt = rng.normal(size=(30, 22))
    records = ek.records_from_predictions(pred, gt, user_id=3,
                                          gesture_label="Rest")
    assert len(records) == 30
    assert abs(ek.pooled_mae(records) - ek.mae(pred, gt)) < 1e-12


def test_group_mae_identity():
    rng = np.random.default_rng(2)
    records = _records(rng, 40)
    stacked = np.stack([r.errors for r in records])
    groups = ek.group_mae(records)
    for name, idx in ek.FINGER_GROUPS.items():
        assert abs(groups[name] - stacked[:, list(idx)].mean()) < 1e-12
    # weighted recombination over fingers recovers the pooled value
    weights = {n: len(ek.FINGER_GROUPS[n]) for n in groups}
    total = sum(groups[n] * weights[n] for n in groups) / sum(weights.values())
    assert abs(total - stacked.mean()) < 1e-12


def test_per_user_aggregate():
    records = [ek.EvalRecord(errors=np.full(22, 10.0), user_id=1,
                             gesture_label="Rest"),
               ek.EvalRecord(errors=np.full(22, 20.0), user_id=2,
                             gesture_label="Rest")]
    mean, std, by_user = ek.per_user_aggregate(records)
    assert mean == 15.0 and std == 5.0
    assert by_user == {1: 10.0, 2: 20.0}


def test_per_user_duplication_invariance():
    """Repeating one user's records must not move the per-user mean."""
    rng = np.random.default_rng(3)
    base = _records(rng, 10, user_id=1) + _records(rng, 10, user_id=2)
    dup = base + [r for r in base if r.user_id == 1] * 5
    mean_a, _, _ = ek.per_user_aggregate(base)
    mean_b, _, _ = ek.per_user_aggregate(dup)
    assert abs(mean_a - mean_b) < 1e-12
    # while the pooled mean does move (sanity of the distinction)
    assert abs(ek.pooled_mae(base) - ek.pooled_mae(dup)) > 1e-6


def test_weighted_avg():
    assert ek.weighted_avg({"val": (10.0, 100), "test": (20.0, 300)}) == 17.5
    assert ek.weighted_avg({"only": (3.0, 7)}) == 3.0
    with pytest.raises(InvalidInputError):
        ek.weighted_avg({"empty": (1.0, 0)})


def test_record_validation():
    with pytest.raises(InvalidInputError):
        ek.EvalRecord(errors=np.array([1.0, -2.0]), user_id=0,
                      gesture_label="Rest")
    with pytest.raises(InvalidInputError):
        ek.EvalRecord(errors=np.array([np.nan]), user_id=0,
                      gesture_label="Rest")
    with pytest.raises(InvalidInputError):
        ek.group_mae([])
    with pytest.raises(InvalidInputError):
        ek.mae(np.zeros((3, 22)), np.zeros((4, 22)))
