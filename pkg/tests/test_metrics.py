import numpy as np
import pytest
import torch

from glot.errors import DegenerateCloud, SequenceTooShort, ShapeMismatch
from glot.metrics import (MetricReport, accel_error, accel_per_frame, mpjpe, mpvpe, pa_mpjpe,
                          procrustes_align, velocity_loss)

from conftest import random_rotations


def brute_accel(pred, gt):
    T, J = pred.shape[:2]
    out = []
    for t in range(1, T - 1):
        tot = 0.0
        for j in range(J):
            ap = pred[t + 1, j] - 2 * pred[t, j] + pred[t - 1, j]
            ag = gt[t + 1, j] - 2 * gt[t, j] + gt[t - 1, j]
            tot += np.sqrt(((ap - ag) ** 2).sum())
        out.append(1000 * tot / J)
    return np.array(out)


def brute_velocity(jt, gt, mask):
    total = 0.0
    for t in range(len(mask)):
        if mask[t]:
            for j in range(jt.shape[1]):
                total += np.sqrt(((jt[t + 1, j] - jt[t, j] - gt[t + 1, j] + gt[t, j]) ** 2).sum())
    return total


def test_procrustes_recovers_similarity():
    rng = np.random.default_rng(0)
    R = random_rotations(rng, 50)
    for k in range(50):
        X = rng.normal(size=(24, 3))
        s, t = rng.uniform(0.2, 5), rng.normal(size=3)
        Y = s * X @ R[k].T + t
        tf = procrustes_align(X, Y)
        assert abs(tf.scale - s) < 1e-9
        np.testing.assert_allclose(tf.rotation, R[k], atol=1e-9)
        np.testing.assert_allclose(tf.translation, t, atol=1e-9)
        np.testing.assert_allclose(tf.apply(X), Y, atol=1e-9)


def test_procrustes_never_reflects():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(10, 3))
    Y = X * np.array([1, 1, -1])
    assert np.linalg.det(procrustes_align(X, Y).rotation) == pytest.approx(1.0)


def test_procrustes_errors():
    with pytest.raises(DegenerateCloud):
        procrustes_align(np.ones((5, 3)), np.zeros((5, 3)))
    with pytest.raises(DegenerateCloud):
        procrustes_align(np.eye(3)[:2], np.eye(3)[:2])
    with pytest.raises(ShapeMismatch):
        procrustes_align(np.zeros((4, 3)), np.zeros((5, 3)))


def test_mpjpe_hand_case():
    gt = np.zeros((2, 3))
    gt[1] = [1, 0, 0]
    pred = gt + np.array([5.0, 5.0, 5.0])      # pure translation vanishes after root alignment
    assert mpjpe(pred, gt) == 0.0
    pred[1] = [6, 5.003, 5.004]
    assert mpjpe(pred, gt) == pytest.approx(2.5)


def test_pa_mpjpe_invariant_to_similarity():
    rng = np.random.default_rng(2)
    gt = rng.normal(size=(24, 3))
    pred = gt + rng.normal(scale=0.01, size=gt.shape)
    R = random_rotations(rng, 1)[0]
    moved = 3.0 * pred @ R.T + 1.0
    assert pa_mpjpe(moved, gt) == pytest.approx(pa_mpjpe(pred, gt), rel=1e-9)


def test_pa_batched_matches_loop():
    rng = np.random.default_rng(3)
    P, G = rng.normal(size=(6, 24, 3)), rng.normal(size=(6, 24, 3))
    batched = pa_mpjpe(P, G)
    np.testing.assert_allclose(batched, [pa_mpjpe(P[i], G[i]) for i in range(6)], rtol=1e-12)


def test_pa_never_exceeds_root_aligned():
    rng = np.random.default_rng(4)
    for _ in range(200):
        gt = rng.normal(size=(24, 3))
        pred = rng.normal(size=(24, 3))
        tf = procrustes_align(pred, gt)
        pa = ((tf.apply(pred) - gt) ** 2).sum()
        ra = (((pred - pred[0]) - (gt - gt[0])) ** 2).sum()
        assert pa <= ra + 1e-9


def test_mpvpe_root_shift():
    rng = np.random.default_rng(5)
    v = rng.normal(size=(30, 3))
    assert mpvpe(v + 2.0, v, np.full(3, 2.0), np.zeros(3)) == pytest.approx(0.0, abs=1e-9)
    assert mpvpe(v + [0.001, 0, 0], v) == pytest.approx(1.0)


def test_accel_matches_brute_force():
    rng = np.random.default_rng(6)
    pred, gt = rng.normal(size=(9, 5, 3)), rng.normal(size=(9, 5, 3))
    np.testing.assert_allclose(accel_per_frame(pred, gt), brute_accel(pred, gt), atol=1e-9)
    assert accel_error(pred, gt, fps=30) == pytest.approx(brute_accel(pred, gt).mean() * 900, rel=1e-12)


def test_accel_linear_motion_is_zero():
    t = np.arange(6)[:, None, None]
    gt = np.zeros((6, 2, 3))
    pred = gt + t * np.array([0.1, -0.2, 0.3])
    assert np.all(accel_per_frame(pred, gt) < 1e-12)
    with pytest.raises(SequenceTooShort):
        accel_per_frame(gt[:2], gt[:2])


def test_velocity_loss_matches_brute_force():
    rng = np.random.default_rng(7)
    jt, gt = rng.normal(size=(3, 8, 4, 3)), rng.normal(size=(3, 8, 4, 3))
    mask = rng.random((3, 7)) < 0.5
    out = velocity_loss(torch.tensor(jt), torch.tensor(gt), torch.tensor(mask))
    ref = [brute_velocity(jt[b], gt[b], mask[b]) for b in range(3)]
    np.testing.assert_allclose(out.numpy(), ref, atol=1e-9)


def test_velocity_loss_ignores_gated_ground_truth():
    rng = np.random.default_rng(8)
    jt, gt = torch.tensor(rng.normal(size=(6, 2, 2))), torch.tensor(rng.normal(size=(6, 2, 2)))
    mask = torch.tensor([1, 1, 0, 0, 0], dtype=torch.bool)
    base = velocity_loss(jt, gt, mask)
    gt2 = gt.clone()
    gt2[3:] = float("nan")
    assert torch.equal(velocity_loss(jt, gt2, mask), base)
    with pytest.raises(ShapeMismatch):
        velocity_loss(jt, gt, mask[:3])


def test_report_roundtrip():
    r = MetricReport.from_frames([{"mpjpe": 1.0, "pa_mpjpe": 0.5, "mpvpe": 2.0, "accel": None},
                                  {"mpjpe": 3.0, "pa_mpjpe": 1.5, "mpvpe": 4.0, "accel": 7.0}])
    assert (r.mpjpe, r.pa_mpjpe, r.mpvpe, r.accel, r.n_frames) == (2.0, 1.0, 3.0, 7.0, 2)
    assert MetricReport.from_dict(r.to_dict()) == r
    assert "mpjpe" in r.to_text()
