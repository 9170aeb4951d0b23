import numpy as np
import pytest
import torch

from glot.checks import tiny_problem
from glot.config import LossWeights
from glot.geometry import BodyModel, KinematicTree
from glot.gmm import GMMOutput, GlobalMemory, MaskSpec, ParamTriple, stack_masks
from glot.lpc import CorrectionOutput, LPCOutput
from glot.losses import GMM_TERMS, LPC_TERMS, WindowBatch, total_loss, weight_for
from glot.model import Prediction


@pytest.fixture(scope="module")
def prob():
    return tiny_problem(0)


def test_total_is_weighted_sum(prob):
    with torch.no_grad():
        pred = prob.model(prob.batch.features, prob.masked, prob.kept)
    lb = total_loss(pred, prob.batch, prob.masked, prob.cfg.weights, prob.body)
    w = LossWeights()
    lb2 = total_loss(pred, prob.batch, prob.masked, w, prob.body)
    for weights, out in ((prob.cfg.weights, lb), (w, lb2)):
        manual = sum(weight_for(k, weights) * v.item() for k, v in out.components().items())
        assert abs(float(out.total) - manual) <= 1e-9 * max(1.0, abs(manual))
    assert set(lb.components()) == set(GMM_TERMS + LPC_TERMS)


def gt_prediction(batch: WindowBatch, mid: int, with_lpc=True) -> Prediction:
    params = ParamTriple(batch.theta, batch.beta, batch.phi)
    gmm = GMMOutput(params, GlobalMemory(batch.features, torch.zeros(1), []), batch.features, [])
    lpc = None
    if with_lpc:
        fin = params.select((slice(None), mid))
        z = lambda t: torch.zeros_like(t)
        corr = CorrectionOutput(fin.theta, fin.beta, fin.phi, z(fin.theta), z(fin.beta), z(fin.phi))
        lpc = LPCOutput(corr, None, None, None, [], [])
    return Prediction(gmm, lpc, mid)


def test_ground_truth_prediction_gives_zero(prob):
    pred = gt_prediction(prob.batch, prob.model.mid)
    lb = total_loss(pred, prob.batch, prob.masked, prob.cfg.weights, prob.body)
    assert all(float(v) == 0.0 for v in lb.components().values())


def test_empty_mask_zeroes_global_terms(prob):
    B, T = prob.masked.shape
    none = torch.zeros(B, T, dtype=torch.bool)
    kept = torch.arange(T).expand(B, T)
    with torch.no_grad():
        pred = prob.model(prob.batch.features, none, kept)
    lb = total_loss(pred, prob.batch, none, prob.cfg.weights, prob.body)
    assert all(float(getattr(lb, t)) == 0.0 for t in GMM_TERMS)
    assert float(lb.lpc_j3d) > 0


def one_joint_body():
    z = np.zeros
    return BodyModel(np.array([[0.0, 0.0, 0.0]]), z((10, 1, 3)), np.array([[0.0, 0.0, 0.0]]),
                     z((10, 1, 3)), np.ones((1, 1)), KinematicTree((-1,)))


def test_micro_case_matches_hand_computation():
    """Two frames, one joint at the origin: only shape, camera and pose terms are nonzero."""
    body = one_joint_body()
    eye6 = torch.tensor([1.0, 0, 0, 0, 1.0, 0], dtype=torch.float64)
    gt_theta = eye6.expand(1, 2, 1, 6).clone()
    pred_theta = gt_theta.clone()
    pred_theta[0, 0, 0, 1] = 0.5          # rotation drift on frame 0 (not the mid frame)
    gt_beta = torch.zeros(1, 2, 10, dtype=torch.float64)
    pred_beta = gt_beta.clone()
    pred_beta[0, :, 0] = torch.tensor([0.2, 0.4], dtype=torch.float64)
    gt_phi = torch.tensor([[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]], dtype=torch.float64)
    pred_phi = gt_phi.clone()
    pred_phi[0, 1, 1] = 0.3                # x-offset on frame 1
    j3 = torch.zeros(1, 2, 1, 3, dtype=torch.float64)
    batch = WindowBatch(torch.zeros(1, 2, 4, dtype=torch.float64), gt_theta, gt_beta, gt_phi, j3,
                        torch.zeros(1, 2, 1, 2, dtype=torch.float64))
    params = ParamTriple(pred_theta, pred_beta, pred_phi)
    gmm = GMMOutput(params, GlobalMemory(batch.features, torch.zeros(1), []), batch.features, [])
    pred = Prediction(gmm, None, 0)
    masked = torch.tensor([[True, True]])
    w = LossWeights(1.0, 2.0, 3.0, 4.0, 5.0)
    lb = total_loss(pred, batch, masked, w, body)

    pose = 0.5 ** 2 / (2 * 6)                     # one entry wrong out of 12
    shape = (0.2 ** 2 + 0.4 ** 2) / 20
    j2d = 0.3 ** 2 / 4                            # frame 1 x off by 0.3; 2 frames x 2 coords
    vel2d = 0.3 / 1                               # one pair, one joint, |0.3 - 0|
    expect = {"gmm_j3d": 0.0, "gmm_pose": pose, "gmm_shape": shape, "gmm_j2d": j2d,
              "gmm_vel2d": vel2d, "gmm_vel3d": 0.0}
    for k, v in expect.items():
        assert abs(float(getattr(lb, k)) - v) <= 1e-9, k
    total = 1 * 0 + 2 * j2d + 3 * pose + 4 * shape + 5 * vel2d
    assert abs(float(lb.total) - total) <= 1e-9


def test_velocity_pairs_need_both_frames_masked(prob):
    """Only pairs of consecutive masked frames enter the velocity terms."""
    b = prob.batch
    T = b.theta.shape[1]
    masked, _ = stack_masks([MaskSpec((0, 2, 4, 6), 0.5, T), MaskSpec((1, 3, 5, 7), 0.5, T)])
    params = ParamTriple(b.theta + 0.1, b.beta, b.phi)
    gmm = GMMOutput(params, GlobalMemory(b.features, torch.zeros(1), []), b.features, [])
    lb = total_loss(Prediction(gmm, None, 3), b, masked, LossWeights(), prob.body)
    assert float(lb.gmm_vel3d) == 0.0 and float(lb.gmm_vel2d) == 0.0
    assert float(lb.gmm_j3d) > 0
