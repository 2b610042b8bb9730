import json

import numpy as np
import pytest

from khangcl import ckfi
from khangcl.bspline import coeff_variance
from khangcl.ckfi import CkfiScores
from khangcl.errors import ShapeError


def lstsq_residuals(C):
    """Distance from each output slice to the span of the others."""
    res = []
    for j in range(C.shape[1]):
        others = [C[:, l, :].ravel() for l in range(C.shape[1]) if l != j]
        A = np.stack(others, axis=1)
        b = C[:, j, :].ravel()
        x = np.linalg.lstsq(A, b, rcond=None)[0]
        res.append(np.linalg.norm(b - A @ x))
    return np.array(res)


@pytest.fixture
def rng():
    return np.random.default_rng(31)


def test_copied_slice_scores_zero(rng):
    C = rng.standard_normal((4, 5, 8))
    C[:, 3] = C[:, 1]
    d = ckfi.independent_scores(C)
    assert d[1] <= 1e-8 and d[3] <= 1e-8


def test_matches_lstsq_oracle(rng):
    for _ in range(10):
        C = rng.standard_normal((4, 6, 8))
        np.testing.assert_allclose(ckfi.independent_scores(C), lstsq_residuals(C), rtol=0, atol=1e-8)


def test_orthogonal_slices(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((4 * 8, 3)))
    C = np.stack([Q[:, j].reshape(4, 8) * (j + 1) for j in range(3)], axis=1)
    np.testing.assert_allclose(ckfi.independent_scores(C), [1, 2, 3], atol=1e-8)


def test_planted_combination(rng):
    C = rng.standard_normal((3, 6, 8))
    C[:, 0] = 5.0 * C[:, 2] - 0.01 * C[:, 4] + 2.0 * C[:, 5]
    assert ckfi.independent_scores(C)[0] <= 1e-8


def test_single_output_rejected(rng):
    with pytest.raises(ShapeError):
        ckfi.independent_scores(rng.standard_normal((2, 1, 8)))


def test_leave_one_out_keeps_other_slices(rng):
    C = rng.standard_normal((3, 4, 8))
    R = ckfi.leave_one_out_reconstruction(C, 2)
    np.testing.assert_allclose(np.delete(R, 2, axis=1), np.delete(C, 2, axis=1), atol=1e-10)


def test_discriminative_constant_is_zero():
    assert not ckfi.discriminative_scores(np.full((2, 3, 8), 4.2)).any()


def test_discriminative_single_input(rng):
    C = rng.standard_normal((1, 3, 8))
    for j in range(3):
        assert ckfi.discriminative_scores(C)[j] == coeff_variance(C[0, j])


def test_discriminative_hand_value():
    C = np.zeros((2, 1, 4))
    C[0, 0] = [1, 2, 3, 4]
    assert ckfi.discriminative_scores(C)[0] == pytest.approx(0.625, abs=1e-15)


def test_scaling_laws(rng):
    C = rng.standard_normal((3, 4, 8))
    shifted = C.copy()
    shifted[0, 1] += 9.0
    np.testing.assert_allclose(ckfi.discriminative_scores(shifted), ckfi.discriminative_scores(C), atol=1e-12)
    np.testing.assert_allclose(ckfi.discriminative_scores(-3 * C), 9 * ckfi.discriminative_scores(C), rtol=1e-12)
    np.testing.assert_allclose(ckfi.independent_scores(-3 * C), 3 * ckfi.independent_scores(C), rtol=1e-9)


def test_normalize():
    s = ckfi.normalize_scores(CkfiScores(np.array([1.0, 2.0, 4.0]), np.zeros(3)))
    np.testing.assert_array_equal(s.delta, [0.25, 0.5, 1.0])
    np.testing.assert_array_equal(s.rho, np.zeros(3))
    assert s.normalized


def test_normalize_idempotent_and_order_preserving(rng):
    s = CkfiScores(rng.uniform(0, 3, 6), rng.uniform(0, 3, 6))
    once = ckfi.normalize_scores(s)
    twice = ckfi.normalize_scores(once)
    np.testing.assert_array_equal(once.delta, twice.delta)
    np.testing.assert_array_equal(once.rho, twice.rho)
    np.testing.assert_array_equal(np.argsort(s.delta), np.argsort(once.delta))


def test_ckfi_scores_json(rng):
    C = rng.standard_normal((2, 3, 8))
    out = ckfi.ckfi_scores(C).to_json(C.shape)
    assert set(out) == {"delta", "rho", "normalized", "layer_dims"}
    assert max(out["delta"]) == 1.0 and out["layer_dims"] == [2, 3, 8]
    json.dumps(out)


def test_raw_scores_unnormalized(rng):
    C = rng.standard_normal((2, 3, 8))
    raw = ckfi.ckfi_scores(C, normalize=False)
    assert not raw.normalized
    np.testing.assert_allclose(raw.delta, lstsq_residuals(C), atol=1e-8)
