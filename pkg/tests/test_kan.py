import numpy as np
import pytest

from khangcl import kan
from khangcl.bspline import SplineGrid, basis_eval, spline_eval
from khangcl.errors import ConfigError, DataError, ShapeError
from khangcl.gradcheck import max_rel_error, numeric_grad
from khangcl.kan import KanLayer, kan_backward, kan_forward, kan_init

GRID = SplineGrid()


@pytest.fixture
def rng():
    return np.random.default_rng(21)


def random_layer(rng, d_in, d_out):
    return KanLayer(GRID, rng.standard_normal((d_in, d_out, GRID.n_basis)))


def test_zero_coefficients_give_zero_output(rng):
    layer = KanLayer(GRID, np.zeros((3, 2, 8)))
    assert not kan_forward(layer, rng.standard_normal((5, 3)))[0].any()


def test_single_spline_reduction(rng):
    layer = random_layer(rng, 1, 1)
    x = rng.standard_normal(20)
    Y, _ = kan_forward(layer, x[:, None])
    np.testing.assert_array_equal(Y[:, 0], spline_eval(GRID, layer.C[0, 0], np.tanh(x)))


def test_linear_combination_of_slices(rng):
    layer = random_layer(rng, 4, 3)
    layer.C[:, 2, :] = 2 * layer.C[:, 0, :] - 0.5 * layer.C[:, 1, :]
    Y, _ = kan_forward(layer, rng.standard_normal((100, 4)))
    assert np.abs(Y[:, 2] - (2 * Y[:, 0] - 0.5 * Y[:, 1])).max() <= 1e-9


def test_linearity_in_coefficients(rng):
    l1, l2 = random_layer(rng, 3, 4), random_layer(rng, 3, 4)
    X = rng.standard_normal((10, 3))
    Y = kan_forward(KanLayer(GRID, 0.7 * l1.C - 1.3 * l2.C), X)[0]
    ref = 0.7 * kan_forward(l1, X)[0] - 1.3 * kan_forward(l2, X)[0]
    assert np.abs(Y - ref).max() <= 1e-12


def test_output_permutation(rng):
    layer = random_layer(rng, 3, 5)
    perm = rng.permutation(5)
    X = rng.standard_normal((7, 3))
    np.testing.assert_array_equal(kan_forward(KanLayer(GRID, layer.C[:, perm]), X)[0],
                                  kan_forward(layer, X)[0][:, perm])


def test_forward_shape_check(rng):
    with pytest.raises(ShapeError):
        kan_forward(random_layer(rng, 3, 2), np.zeros((4, 2)))


def test_layer_validates_basis_count():
    with pytest.raises(ShapeError):
        KanLayer(GRID, np.zeros((2, 2, 7)))


def test_backward_zero_upstream(rng):
    layer = random_layer(rng, 3, 2)
    _, cache = kan_forward(layer, rng.standard_normal((4, 3)))
    dX, dC = kan_backward(layer, cache, np.zeros((4, 2)))
    assert not dX.any() and not dC.any()


def test_backward_single_term(rng):
    layer = random_layer(rng, 1, 1)
    x, dy = 0.37, -1.9
    _, cache = kan_forward(layer, [[x]])
    _, dC = kan_backward(layer, cache, [[dy]])
    np.testing.assert_allclose(dC[0, 0], dy * basis_eval(GRID, np.tanh(x)), rtol=0, atol=1e-15)


def test_backward_finite_differences(rng):
    for _ in range(20):
        layer = random_layer(rng, 3, 2)
        X = rng.standard_normal((4, 3))
        dY = rng.standard_normal((4, 2))
        _, cache = kan_forward(layer, X)
        dX, dC = kan_backward(layer, cache, dY)
        f = lambda: float(np.sum(kan_forward(layer, X)[0] * dY))
        assert max_rel_error(dC, numeric_grad(f, layer.C)) <= 1e-4
        assert max_rel_error(dX, numeric_grad(f, X)) <= 1e-4


def test_backward_without_squash(rng):
    layer = KanLayer(GRID, rng.standard_normal((2, 2, 8)), squash_input=False)
    X = rng.uniform(-0.9, 0.9, (3, 2))
    dY = rng.standard_normal((3, 2))
    _, cache = kan_forward(layer, X)
    dX, _ = kan_backward(layer, cache, dY)
    f = lambda: float(np.sum(kan_forward(layer, X)[0] * dY))
    assert max_rel_error(dX, numeric_grad(f, X)) <= 1e-4


def test_init_deterministic():
    a = kan_init(4, 3, GRID, 0.1, np.random.default_rng(5))
    b = kan_init(4, 3, GRID, 0.1, np.random.default_rng(5))
    np.testing.assert_array_equal(a.C, b.C)


def test_init_variance():
    layer = kan_init(64, 64, GRID, 0.1, np.random.default_rng(6))
    target = (0.1 / np.sqrt(64)) ** 2
    assert abs(layer.C.var() / target - 1) <= 0.2


def test_init_rejects_zero_sigma():
    with pytest.raises(ConfigError):
        kan_init(2, 2, GRID, 0.0, np.random.default_rng(0))


def test_container_roundtrip(tmp_path, rng):
    layer = KanLayer(SplineGrid(-2.0, 3.0, 4, 3), rng.standard_normal((3, 5, 7)), squash_input=False)
    kan.save_layer(layer, tmp_path / "l.kan")
    back = kan.load_layer(tmp_path / "l.kan")
    np.testing.assert_array_equal(back.C, layer.C)
    assert back.grid == layer.grid and back.squash_input is False
    assert (tmp_path / "l.kan.json").exists()


def test_container_header_layout(rng):
    layer = random_layer(rng, 2, 3)
    buf = kan.layer_to_bytes(layer)
    assert buf[:8] == kan.MAGIC
    assert len(buf) == kan._HEADER.size + kan._DIMS.size + 8 * 2 * 3 * 8


@pytest.mark.parametrize("mutate", [
    lambda b: b[:10],
    lambda b: b"NOTAKAN\x00" + b[8:],
    lambda b: b[:-8],
])
def test_container_corruption(rng, mutate):
    buf = kan.layer_to_bytes(random_layer(rng, 2, 2))
    with pytest.raises(DataError):
        kan.layer_from_bytes(mutate(buf))


def test_load_missing(tmp_path):
    with pytest.raises(DataError, match="not found"):
        kan.load_layer(tmp_path / "nope.kan")
