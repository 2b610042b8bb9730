import numpy as np
import pytest

from khangcl.bspline import SplineGrid, basis_eval
from khangcl.encoder import (
    GinKanEncoder,
    build_model,
    encoder_backward,
    encoder_forward,
    gin_layer_forward,
    load_checkpoint,
    project,
    project_backward,
    save_checkpoint,
)
from khangcl.errors import DataError, ShapeError
from khangcl.gradcheck import max_rel_error, numeric_grad
from khangcl.graphs import Graph, init_node_features, make_batch, synth_two_class
from khangcl.kan import KanLayer, kan_forward

GRID = SplineGrid()


@pytest.fixture
def rng():
    return np.random.default_rng(41)


def small_graphs(n=4, seed=3):
    return [init_node_features(g) for g in synth_two_class(n, seed)]


def relabel(g, perm):
    X = np.empty_like(g.X)
    X[perm] = g.X
    return Graph(g.n, perm[g.edges], X, g.label)


def test_gin_no_edges_is_plain_kan(rng):
    layer = KanLayer(GRID, rng.standard_normal((2, 3, 8)))
    H = rng.standard_normal((4, 2))
    out, _ = gin_layer_forward(layer, H, np.zeros((0, 2), dtype=int))
    np.testing.assert_array_equal(out, kan_forward(layer, H)[0])


def test_gin_single_edge_symmetric(rng):
    layer = KanLayer(GRID, rng.standard_normal((2, 3, 8)))
    out, _ = gin_layer_forward(layer, rng.standard_normal((2, 2)), [[0, 1]])
    np.testing.assert_array_equal(out[0], out[1])


def test_gin_node_permutation(rng):
    layer = KanLayer(GRID, rng.standard_normal((11, 3, 8)))
    g = small_graphs(2)[0]
    perm = rng.permutation(g.n)
    gp = relabel(g, perm)
    out, _ = gin_layer_forward(layer, g.X, g.edges)
    outp, _ = gin_layer_forward(layer, gp.X, gp.edges)
    np.testing.assert_allclose(outp[perm], out, atol=1e-12)


def test_identical_graphs_identical_rows(rng):
    enc, _ = build_model(11, (6, 5), (4,), GRID, 0.5, rng)
    g = small_graphs(2)[1]
    Z, _ = encoder_forward(enc, make_batch([g, g]))
    np.testing.assert_array_equal(Z[0], Z[1])


@pytest.mark.parametrize("pool", ["add", "mean"])
def test_isomorphic_copy_same_embedding(rng, pool):
    enc, _ = build_model(11, (6, 6, 6), (4,), GRID, 0.5, rng, pool=pool)
    for g in small_graphs(6):
        gp = relabel(g, rng.permutation(g.n))
        Z, _ = encoder_forward(enc, make_batch([g, gp]))
        assert np.abs(Z[0] - Z[1]).max() <= 1e-10


def test_zero_features_and_coefficients():
    layers = [KanLayer(GRID, np.zeros((3, 4, 8))), KanLayer(GRID, np.zeros((4, 2, 8)))]
    enc = GinKanEncoder(layers, [0.0, 0.0])
    Z, _ = encoder_forward(enc, make_batch([Graph(3, [[0, 1]], np.zeros((3, 3)))]))
    assert not Z.any()


def test_batch_independence(rng):
    enc, _ = build_model(11, (6, 6, 6), (4,), GRID, 0.5, rng)
    graphs = small_graphs(6)
    Zb, _ = encoder_forward(enc, make_batch(graphs))
    for i, g in enumerate(graphs):
        assert np.abs(encoder_forward(enc, make_batch([g]))[0][0] - Zb[i]).max() <= 1e-12


def test_backward_zero_upstream(rng):
    enc, _ = build_model(11, (6, 5), (4,), GRID, 0.5, rng)
    _, cache = encoder_forward(enc, make_batch(small_graphs()))
    for g in encoder_backward(enc, cache, np.zeros((4, 5))):
        assert not g.any()


@pytest.mark.parametrize("pool,factor", [("add", 2.0), ("mean", 1.0)])
def test_two_node_chain_rule(rng, pool, factor):
    # one layer, d_in = d_out = 1, eps = 0, edge (0, 1):
    # both nodes aggregate s = x0 + x1, so Z = factor * phi(tanh s) and
    # dZ/dC_k = factor * B_k(tanh s)
    C = rng.standard_normal((1, 1, 8))
    enc = GinKanEncoder([KanLayer(GRID, C)], [0.0], pool)
    x = np.array([[0.3], [-0.8]])
    Z, cache = encoder_forward(enc, make_batch([Graph(2, [[0, 1]], x)]))
    s = np.tanh(x.sum())
    np.testing.assert_allclose(Z[0, 0], factor * basis_eval(GRID, s) @ C[0, 0], atol=1e-15)
    (dC,) = encoder_backward(enc, cache, np.ones((1, 1)))
    np.testing.assert_allclose(dC[0, 0], factor * basis_eval(GRID, s), atol=1e-15)


def test_encoder_gradcheck(rng):
    enc, _ = build_model(11, (5, 4, 3), (4,), GRID, 0.3, rng)
    batch = make_batch(small_graphs(4))
    dZ = rng.standard_normal((4, 3))
    _, cache = encoder_forward(enc, batch)
    grads = encoder_backward(enc, cache, dZ)
    f = lambda: float(np.sum(encoder_forward(enc, batch)[0] * dZ))
    for g, p in zip(grads, enc.params()):
        assert max_rel_error(g, numeric_grad(f, p)) <= 1e-4


def test_encoder_gradcheck_mean_pool_nonzero_eps(rng):
    enc, _ = build_model(11, (4, 3), (4,), GRID, 0.3, rng, pool="mean", eps=0.25)
    batch = make_batch(small_graphs(4, seed=8))
    dZ = rng.standard_normal((4, 3))
    _, cache = encoder_forward(enc, batch)
    grads = encoder_backward(enc, cache, dZ)
    f = lambda: float(np.sum(encoder_forward(enc, batch)[0] * dZ))
    for g, p in zip(grads, enc.params()):
        assert max_rel_error(g, numeric_grad(f, p)) <= 1e-4


def test_zero_head_gives_zero_projection(rng):
    _, head = build_model(3, (3,), (4, 2), GRID, 0.1, rng)
    for p in head.params():
        p[...] = 0.0
    assert not project(head, rng.standard_normal((5, 3)))[0].any()


@pytest.mark.parametrize("kind", ["kan", "linear"])
def test_head_gradcheck(rng, kind):
    _, head = build_model(3, (3,), (4, 3), GRID, 0.5, rng, head_kind=kind)
    Z = rng.standard_normal((5, 3))
    dV = rng.standard_normal((5, 3))
    V, cache = project(head, Z)
    np.testing.assert_array_equal(V, project(head, Z.copy())[0])
    dZ, grads = project_backward(head, cache, dV)
    f = lambda: float(np.sum(project(head, Z)[0] * dV))
    assert max_rel_error(dZ, numeric_grad(f, Z)) <= 1e-4
    for g, p in zip(grads, head.params()):
        assert max_rel_error(g, numeric_grad(f, p)) <= 1e-4


def test_encoder_shape_checks(rng):
    enc, head = build_model(11, (4,), (3,), GRID, 0.1, rng)
    with pytest.raises(ShapeError):
        encoder_forward(enc, make_batch([Graph(2, [], np.zeros((2, 5)))]))
    with pytest.raises(ShapeError):
        project(head, np.zeros((2, 7)))
    with pytest.raises(ShapeError):
        GinKanEncoder([KanLayer(GRID, np.zeros((2, 3, 8))), KanLayer(GRID, np.zeros((4, 1, 8)))], [0, 0])


@pytest.mark.parametrize("kind", ["kan", "linear"])
def test_checkpoint_roundtrip(tmp_path, rng, kind):
    enc, head = build_model(11, (5, 4), (3, 2), GRID, 0.1, rng, head_kind=kind)
    save_checkpoint(tmp_path / "ck", enc, head, {"features": "degree_onehot"})
    enc2, head2, manifest = load_checkpoint(tmp_path / "ck")
    assert manifest["features"] == "degree_onehot" and head2.kind == kind
    for a, b in zip(enc.params() + head.params(), enc2.params() + head2.params()):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_missing(tmp_path):
    with pytest.raises(DataError, match="manifest not found"):
        load_checkpoint(tmp_path / "absent")


def test_checkpoint_bad_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(DataError, match="invalid manifest"):
        load_checkpoint(tmp_path)
