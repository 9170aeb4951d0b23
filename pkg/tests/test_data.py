import json

import numpy as np
import pytest
import torch

from glot.data import (STATE_DIM, feature_map, gen_sequence, generate_dataset, mid_index, read_dataset,
                       read_sequence, sample_trajectory, window, window_indices, write_dataset,
                       write_sequence)
from glot.errors import CorruptFile, VersionMismatch
from glot.geometry import params_to_joints, project_weak_perspective, rot6d_to_matrix


def test_mid_index():
    assert mid_index(16) == 7 and mid_index(8) == 3 and mid_index(2) == 0


def test_sequence_deterministic(small_body):
    a = gen_sequence(11, 30, small_body, feature_dim=16)
    b = gen_sequence(11, 30, small_body, feature_dim=16)
    c = gen_sequence(12, 30, small_body, feature_dim=16)
    assert a.equals(b) and not a.equals(c)


def test_sequence_consistency(small_body):
    s = gen_sequence(3, 25, small_body, feature_dim=16)
    theta, beta = torch.tensor(s.gt_theta), torch.tensor(s.gt_beta).expand(25, 10)
    js = params_to_joints(small_body, theta, beta)
    assert np.array_equal(js.positions.numpy(), s.gt_joints3d)
    j2d = project_weak_perspective(js.positions, torch.tensor(s.gt_phi)).numpy()
    assert np.array_equal(j2d, s.gt_joints2d)
    R = rot6d_to_matrix(theta).numpy()
    np.testing.assert_allclose(R @ np.swapaxes(R, -1, -2), np.broadcast_to(np.eye(3), R.shape), atol=1e-12)
    assert s.features.shape == (25, 16) and s.gt_vertices.shape == (25, 12, 3)
    assert np.all(np.abs(s.gt_beta) <= 2.0)


def test_gt_acceleration_bounded():
    """Per-component second differences of the axis-angle curves stay under the analytic bound."""
    rng = np.random.default_rng(0)
    for _ in range(5):
        traj = sample_trajectory(rng)
        aa = traj.axis_angle(200)
        acc = np.abs(aa[2:] - 2 * aa[1:-1] + aa[:-2])
        assert np.all(acc <= traj.second_difference_bound() + 1e-12)


def test_noise_level_zero_gives_affine_features(small_body):
    s = gen_sequence(5, 20, small_body, noise_level=0.0, feature_dim=16)
    W, b = feature_map(16)
    assert W.shape == (STATE_DIM, 16)
    # features minus bias lie in the row space of W: solve and reproduce exactly
    coef, *_ = np.linalg.lstsq(W.T, (s.features - b).T, rcond=None)
    np.testing.assert_allclose(W.T @ coef, (s.features - b).T, atol=1e-9)


def test_window_nearest_padding():
    idx, left, right = window_indices(0, 16, 120)
    assert idx.tolist() == [0] * 8 + list(range(1, 9)) and (left, right) == (7, 0)
    idx, left, right = window_indices(119, 16, 120)
    assert idx.tolist()[7:] == [119] * 9 and (left, right) == (0, 8)
    idx, left, right = window_indices(50, 16, 120)
    assert idx.tolist() == list(range(43, 59)) and (left, right) == (0, 0)
    assert window_indices(0, 16, 3)[0].tolist() == [0] * 8 + [1, 2] + [2] * 6


def test_window_sample(small_dataset):
    seq = small_dataset.sequences[0]
    w = window(seq, 0, 16)
    assert w.pad_left == 7 and np.array_equal(w.features[:8], np.repeat(seq.features[:1], 8, 0))
    assert w.gt_beta.shape == (16, 10)
    with pytest.raises(IndexError):
        window(seq, seq.length, 16)


def test_dataset_roundtrip(tmp_path, small_dataset):
    write_dataset(tmp_path / "d", small_dataset)
    back = read_dataset(tmp_path / "d")
    assert back.body.equals(small_dataset.body)
    assert all(a.equals(b) for a, b in zip(back.sequences, small_dataset.sequences))
    assert back.meta["feature_dim"] == 32 and back.meta["V"] == 24


def test_float32_dataset_roundtrip(tmp_path):
    ds = generate_dataset(1, 2, L=20, feature_dim=8, n_vertices=10, dtype=np.float32)
    write_dataset(tmp_path / "d", ds)
    back = read_dataset(tmp_path / "d")
    assert back.sequences[0].features.dtype == np.float32
    assert all(a.equals(b) for a, b in zip(back.sequences, ds.sequences))


def test_sequence_file_errors(tmp_path, small_dataset):
    seq = small_dataset.sequences[1]
    write_sequence(tmp_path / "s.bin", seq)
    assert read_sequence(tmp_path / "s.bin").equals(seq)
    raw = (tmp_path / "s.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(CorruptFile):
        read_sequence(tmp_path / "t.bin")


def test_manifest_version(tmp_path, small_dataset):
    write_dataset(tmp_path / "d", small_dataset)
    man = json.loads((tmp_path / "d" / "manifest.json").read_text())
    man["version"] = 99
    (tmp_path / "d" / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(VersionMismatch):
        read_dataset(tmp_path / "d")
    (tmp_path / "d" / "manifest.json").write_text("{broken")
    with pytest.raises(CorruptFile):
        read_dataset(tmp_path / "d")
