"""GIN encoder whose node-update MLPs are KAN layers, plus a projection head.

Every layer computes ``m_v = (1 + eps) h_v + sum_{u in N(v)} h_u`` and then
``h'_v = KAN(m_v)``. Graph representations pool the final node states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .bspline import SplineGrid
from .errors import ConfigError, DataError, ShapeError
from .graphs import GraphBatch
from .kan import KanLayer, LayerCache, kan_backward, kan_forward, kan_init, load_layer, save_layer

MANIFEST = "manifest.json"


def adjacency(edges, n: int) -> sp.csr_matrix:
    """Symmetric adjacency of an undirected edge list."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise ShapeError(f"edge index out of range for {n} nodes")
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    data = np.ones(len(rows))
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


@dataclass
class GinLayerCache:
    adj: sp.csr_matrix
    kan: LayerCache


def gin_layer_forward(layer: KanLayer, H, edges, eps: float = 0.0, adj=None):
    H = np.asarray(H, dtype=np.float64)
    if adj is None:
        adj = adjacency(edges, len(H))
    M = (1.0 + eps) * H + adj @ H
    out, kc = kan_forward(layer, M)
    return out, GinLayerCache(adj, kc)


def gin_layer_backward(layer: KanLayer, cache: GinLayerCache, dH_out, eps: float = 0.0):
    dM, dC = kan_backward(layer, cache.kan, dH_out)
    # adjacency is symmetric, so its transpose is itself
    dH = (1.0 + eps) * dM + cache.adj @ dM
    return dH, dC


@dataclass
class GinKanEncoder:
    layers: List[KanLayer]
    eps: List[float]
    pool: str = "add"

    def __post_init__(self):
        if self.pool not in ("add", "mean"):
            raise ConfigError(f"unknown pooling {self.pool!r}")
        if len(self.eps) != len(self.layers):
            raise ShapeError("need one eps per layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.d_out != nxt.d_in:
                raise ShapeError(f"layer dims {prev.d_out} -> {nxt.d_in} are incompatible")

    @property
    def in_dim(self) -> int:
        return self.layers[0].d_in

    @property
    def out_dim(self) -> int:
        return self.layers[-1].d_out

    def params(self) -> List[np.ndarray]:
        return [layer.C for layer in self.layers]


@dataclass
class EncoderCache:
    layers: List[GinLayerCache]
    indicator: np.ndarray
    counts: np.ndarray
    num_nodes: int


def encoder_forward(enc: GinKanEncoder, batch: GraphBatch):
    if batch.X.shape[1] != enc.in_dim:
        raise ShapeError(
            f"batch feature width {batch.X.shape[1]} does not match encoder input {enc.in_dim}"
        )
    adj = adjacency(batch.edges, batch.num_nodes)
    H = batch.X
    caches = []
    for layer, eps in zip(enc.layers, enc.eps):
        H, c = gin_layer_forward(layer, H, batch.edges, eps, adj=adj)
        caches.append(c)
    G = batch.num_graphs
    counts = np.bincount(batch.indicator, minlength=G).astype(np.float64)
    Z = np.zeros((G, H.shape[1]))
    np.add.at(Z, batch.indicator, H)
    if enc.pool == "mean":
        Z /= np.maximum(counts, 1.0)[:, None]
    return Z, EncoderCache(caches, batch.indicator, counts, batch.num_nodes)


def encoder_backward(enc: GinKanEncoder, cache: EncoderCache, dZ):
    """Coefficient gradients of every encoder layer, in layer order."""
    dZ = np.asarray(dZ, dtype=np.float64)
    if dZ.shape != (len(cache.counts), enc.out_dim) or len(cache.layers) != len(enc.layers):
        raise ShapeError(f"gradient of shape {dZ.shape} does not match the cached forward pass")
    if enc.pool == "mean":
        dZ = dZ / np.maximum(cache.counts, 1.0)[:, None]
    dH = dZ[cache.indicator]
    grads = [None] * len(enc.layers)
    for idx in range(len(enc.layers) - 1, -1, -1):
        dH, grads[idx] = gin_layer_backward(enc.layers[idx], cache.layers[idx], dH, enc.eps[idx])
    return grads


@dataclass
class LinearMap:
    W: np.ndarray
    b: np.ndarray


@dataclass
class ProjectionHead:
    """Two stacked KAN layers, or a single linear map for ablations."""

    layers: List[KanLayer] = field(default_factory=list)
    linear: Optional[LinearMap] = None

    @property
    def kind(self) -> str:
        return "linear" if self.linear is not None else "kan"

    @property
    def in_dim(self) -> int:
        return self.linear.W.shape[0] if self.linear is not None else self.layers[0].d_in

    def params(self) -> List[np.ndarray]:
        if self.linear is not None:
            return [self.linear.W, self.linear.b]
        return [layer.C for layer in self.layers]


def project(head: ProjectionHead, Z):
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != head.in_dim:
        raise ShapeError(f"representations {Z.shape} do not match head input {head.in_dim}")
    if head.linear is not None:
        return Z @ head.linear.W + head.linear.b, Z
    caches = []
    V = Z
    for layer in head.layers:
        V, c = kan_forward(layer, V)
        caches.append(c)
    return V, caches


def project_backward(head: ProjectionHead, cache, dV):
    """Returns ``(dZ, grads)`` with grads ordered like ``head.params()``."""
    dV = np.asarray(dV, dtype=np.float64)
    if head.linear is not None:
        Z = cache
        return dV @ head.linear.W.T, [Z.T @ dV, dV.sum(axis=0)]
    grads = [None] * len(head.layers)
    d = dV
    for idx in range(len(head.layers) - 1, -1, -1):
        d, grads[idx] = kan_backward(head.layers[idx], cache[idx], d)
    return d, grads


def build_model(in_dim: int, hidden: Sequence[int] = (32, 32, 32), head_dims: Sequence[int] = (32, 32),
                grid: SplineGrid = SplineGrid(), sigma_init: float = 0.1, rng=None,
                pool: str = "add", head_kind: str = "kan", eps: float = 0.0):
    """Fresh encoder and projection head with the given widths."""
    rng = np.random.default_rng(rng)
    dims = [in_dim, *hidden]
    layers = [kan_init(a, b, grid, sigma_init, rng) for a, b in zip(dims, dims[1:])]
    enc = GinKanEncoder(layers, [eps] * len(layers), pool)
    if head_kind == "kan":
        hd = [enc.out_dim, *head_dims]
        head = ProjectionHead([kan_init(a, b, grid, sigma_init, rng) for a, b in zip(hd, hd[1:])])
    elif head_kind == "linear":
        out = head_dims[-1]
        W = rng.normal(0.0, 1.0 / np.sqrt(enc.out_dim), size=(enc.out_dim, out))
        head = ProjectionHead(linear=LinearMap(W, np.zeros(out)))
    else:
        raise ConfigError(f"unknown head kind {head_kind!r}")
    return enc, head


def save_checkpoint(directory, enc: GinKanEncoder, head: Optional[ProjectionHead] = None,
                    extra: Optional[dict] = None) -> None:
    """Write one layer container per KAN layer plus a manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "khangcl-encoder",
        "version": 1,
        "pool": enc.pool,
        "eps": [float(e) for e in enc.eps],
        "layers": [],
    }
    for i, layer in enumerate(enc.layers):
        name = f"encoder_{i}.kan"
        save_layer(layer, d / name)
        manifest["layers"].append({"file": name, "dims": [layer.d_in, layer.d_out, layer.d_c]})
    if head is not None:
        if head.linear is not None:
            W, b = head.linear.W, head.linear.b
            (d / "head_linear.bin").write_bytes(
                W.astype("<f8").tobytes() + b.astype("<f8").tobytes()
            )
            manifest["head"] = {"kind": "linear", "file": "head_linear.bin", "dims": list(W.shape)}
        else:
            files = []
            for i, layer in enumerate(head.layers):
                name = f"head_{i}.kan"
                save_layer(layer, d / name)
                files.append({"file": name, "dims": [layer.d_in, layer.d_out, layer.d_c]})
            manifest["head"] = {"kind": "kan", "layers": files}
    if extra:
        manifest.update(extra)
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory):
    """Returns ``(encoder, head_or_None, manifest)``."""
    d = Path(directory)
    mpath = d / MANIFEST
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise DataError("checkpoint manifest not found", mpath) from None
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid manifest JSON: {exc}", mpath) from None
    if manifest.get("format") != "khangcl-encoder":
        raise DataError("not an encoder checkpoint", mpath)
    layers = [load_layer(d / entry["file"]) for entry in manifest["layers"]]
    enc = GinKanEncoder(layers, list(manifest["eps"]), manifest["pool"])
    head = None
    hm = manifest.get("head")
    if hm and hm["kind"] == "kan":
        head = ProjectionHead([load_layer(d / e["file"]) for e in hm["layers"]])
    elif hm and hm["kind"] == "linear":
        rows, cols = hm["dims"]
        raw = np.frombuffer((d / hm["file"]).read_bytes(), dtype="<f8").astype(np.float64)
        if raw.size != rows * cols + cols:
            raise DataError("linear head file size mismatch", d / hm["file"])
        head = ProjectionHead(linear=LinearMap(raw[: rows * cols].reshape(rows, cols), raw[rows * cols :].copy()))
    return enc, head, manifest
