import numpy as np
import pytest
import torch

from glot.data import generate_dataset
from glot.geometry import build_body_model


@pytest.fixture(scope="session")
def body():
    return build_body_model(0)


@pytest.fixture(scope="session")
def small_body():
    return build_body_model(3, n_vertices=12)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(7, 3, L=40, feature_dim=32, n_vertices=24)


def random_rotations(rng, n):
    """Uniform random rotation matrices via QR, determinant fixed to +1."""
    A = rng.normal(size=(n, 3, 3))
    Q, R = np.linalg.qr(A)
    Q = Q * np.sign(np.diagonal(R, axis1=-2, axis2=-1))[:, None, :]
    Q[np.linalg.det(Q) < 0, :, 0] *= -1
    return Q


def random_pose6d(rng, shape, scale=1.0):
    """6D pose near identity plus noise, as a float64 tensor."""
    base = np.tile([1.0, 0, 0, 0, 1.0, 0], shape + (1,))
    return torch.tensor(base + scale * rng.normal(size=shape + (6,)) * 0.5)


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion, printed after the test run

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
