"""Graph containers, TU-format I/O, synthetic data, augmentations, batching."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, ShapeError

AUGMENTATIONS = ("node_drop", "edge_perturb", "attr_mask", "identity")
DEFAULT_DEGREE_CAP = 10


def _canonical_edges(edges, n: int) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise ShapeError(f"edge index out of range for a graph with {n} nodes")
    e = e[e[:, 0] != e[:, 1]]
    e = np.sort(e, axis=1)
    if len(e):
        e = np.unique(e, axis=0)
    return e.reshape(-1, 2)


@dataclass
class Graph:
    """Undirected simple graph; edges stored once as ``(u, v)`` with ``u < v``."""

    n: int
    edges: np.ndarray
    X: np.ndarray
    label: Optional[int] = None
    node_labels: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.edges = _canonical_edges(self.edges, self.n)
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(self.n, 0)
        if X.ndim != 2 or X.shape[0] != self.n:
            raise ShapeError(f"feature matrix {X.shape} does not have {self.n} rows")
        self.X = X

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)


@dataclass
class GraphBatch:
    X: np.ndarray
    edges: np.ndarray
    indicator: np.ndarray
    labels: np.ndarray
    offsets: np.ndarray

    @property
    def num_graphs(self) -> int:
        return len(self.offsets) - 1

    @property
    def num_nodes(self) -> int:
        return len(self.indicator)


@dataclass(frozen=True)
class AugmentConfig:
    kind: str = "identity"
    ratio: float = 0.0

    def __post_init__(self):
        if self.kind not in AUGMENTATIONS:
            raise ConfigError(f"unknown augmentation {self.kind!r}")
        if not 0.0 <= self.ratio < 1.0:
            raise ConfigError(f"augmentation ratio must be in [0, 1), got {self.ratio}")


# --------------------------------------------------------------------------
# TU dataset text format

_SPLIT = re.compile(r"\s*,\s*|\s+")


def _read_lines(path: Path) -> List[str]:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise DataError("required file not found", path) from None
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    return lines


def _ints(path: Path, width: int) -> np.ndarray:
    rows = []
    for no, raw in enumerate(_read_lines(path), start=1):
        parts = [p for p in _SPLIT.split(raw.strip()) if p]
        if len(parts) != width:
            raise DataError(f"expected {width} value(s), got {raw.strip()!r}", path, no)
        try:
            rows.append([int(p) for p in parts])
        except ValueError:
            raise DataError(f"non-integer value in {raw.strip()!r}", path, no) from None
    return np.array(rows, dtype=np.int64).reshape(-1, width)


def parse_tu_dataset(directory, name: str) -> List[Graph]:
    """Read ``{name}_A.txt``, ``_graph_indicator.txt``, ``_graph_labels.txt``
    and, when present, ``_node_labels.txt`` (one-hot encoded into ``X``)."""
    d = Path(directory)
    A = _ints(d / f"{name}_A.txt", 2)
    ind_path = d / f"{name}_graph_indicator.txt"
    indicator = _ints(ind_path, 1)[:, 0]
    labels = _ints(d / f"{name}_graph_labels.txt", 1)[:, 0]
    nl_path = d / f"{name}_node_labels.txt"
    node_labels = _ints(nl_path, 1)[:, 0] if nl_path.exists() else None

    n_total = len(indicator)
    if n_total == 0:
        raise DataError("graph indicator is empty", ind_path)
    graph_ids = np.unique(indicator)
    if len(labels) != len(graph_ids):
        raise DataError(
            f"{len(labels)} graph labels for {len(graph_ids)} graphs",
            d / f"{name}_graph_labels.txt",
        )
    if node_labels is not None and len(node_labels) != n_total:
        raise DataError(f"{len(node_labels)} node labels for {n_total} nodes", nl_path)
    gidx = np.searchsorted(graph_ids, indicator)
    order = np.argsort(gidx, kind="stable")
    # local index of each global node within its graph
    local = np.empty(n_total, dtype=np.int64)
    counts = np.bincount(gidx, minlength=len(graph_ids))
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local[order] = np.arange(n_total) - np.repeat(starts, counts)

    a_path = d / f"{name}_A.txt"
    per_graph = [[] for _ in graph_ids]
    for no, (u, v) in enumerate(A, start=1):
        if not (1 <= u <= n_total and 1 <= v <= n_total):
            raise DataError(f"node id out of range in edge ({u}, {v})", a_path, no)
        gu, gv = gidx[u - 1], gidx[v - 1]
        if gu != gv:
            raise DataError(f"edge ({u}, {v}) crosses graphs", a_path, no)
        per_graph[gu].append((local[u - 1], local[v - 1]))

    label_values = np.unique(node_labels) if node_labels is not None else None
    graphs = []
    for g in range(len(graph_ids)):
        n = int(counts[g])
        nodes = order[starts[g] : starts[g] + n]
        X = np.zeros((n, 0))
        nl = None
        if node_labels is not None:
            nl = node_labels[nodes]
            X = np.zeros((n, len(label_values)))
            X[np.arange(n), np.searchsorted(label_values, nl)] = 1.0
        graphs.append(Graph(n, per_graph[g], X, int(labels[g]), nl))
    return graphs


def write_tu_dataset(graphs: Sequence[Graph], directory, name: str) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    a_lines, ind_lines, lab_lines, nl_lines = [], [], [], []
    offset = 0
    have_nl = all(g.node_labels is not None for g in graphs)
    for gi, g in enumerate(graphs, start=1):
        for u, v in g.edges:
            a_lines.append(f"{u + offset + 1}, {v + offset + 1}")
            a_lines.append(f"{v + offset + 1}, {u + offset + 1}")
        ind_lines.extend([str(gi)] * g.n)
        lab_lines.append(str(0 if g.label is None else g.label))
        if have_nl:
            nl_lines.extend(str(int(x)) for x in g.node_labels)
        offset += g.n

    def dump(suffix, lines):
        (d / f"{name}_{suffix}.txt").write_text("".join(line + "\n" for line in lines))

    dump("A", a_lines)
    dump("graph_indicator", ind_lines)
    dump("graph_labels", lab_lines)
    if have_nl and graphs:
        dump("node_labels", nl_lines)


def find_dataset_name(directory) -> str:
    """Infer the dataset name from the single ``*_A.txt`` file in a directory."""
    d = Path(directory)
    if not d.is_dir():
        raise DataError("dataset directory not found", d)
    names = sorted(p.name[: -len("_A.txt")] for p in d.glob("*_A.txt"))
    if len(names) != 1:
        raise DataError(f"expected exactly one *_A.txt file, found {len(names)}", d)
    return names[0]


# --------------------------------------------------------------------------
# Synthetic data and features


@dataclass(frozen=True)
class SynthParams:
    min_nodes: int = 10
    max_nodes: int = 20
    max_chords: int = 2


def synth_two_class(n_graphs: int, seed: int, params: SynthParams = SynthParams()) -> List[Graph]:
    """Balanced two-class set: class 0 are cycles with a few random chords,
    class 1 are wheels (a ring plus a hub joined to every ring node)."""
    if n_graphs % 2:
        raise ConfigError(f"n_graphs must be even, got {n_graphs}")
    if not 4 <= params.min_nodes <= params.max_nodes:
        raise ConfigError(
            f"invalid node range [{params.min_nodes}, {params.max_nodes}] (need 4 <= min <= max)"
        )
    rng = np.random.default_rng(seed)
    graphs = []
    for idx in range(n_graphs):
        label = idx % 2
        n = int(rng.integers(params.min_nodes, params.max_nodes + 1))
        if label == 0:
            ring = [(i, (i + 1) % n) for i in range(n)]
            chords = []
            for _ in range(int(rng.integers(0, params.max_chords + 1))):
                u, v = rng.choice(n, size=2, replace=False)
                if (v - u) % n not in (1, n - 1):
                    chords.append((int(u), int(v)))
            edges = ring + chords
        else:
            m = n - 1
            edges = [(i, (i + 1) % m) for i in range(m)] + [(m, i) for i in range(m)]
        graphs.append(Graph(n, edges, np.zeros((n, 0)), label))
    return graphs


def init_node_features(g: Graph, scheme: str = "degree_onehot", cap: int = DEFAULT_DEGREE_CAP) -> Graph:
    if scheme == "degree_onehot":
        deg = np.minimum(g.degrees(), cap)
        X = np.zeros((g.n, cap + 1))
        X[np.arange(g.n), deg] = 1.0
    elif scheme == "constant":
        X = np.ones((g.n, 1))
    elif scheme == "node_label":
        if g.node_labels is None or g.X.shape[1] == 0:
            raise ConfigError("node_label features requested but the graph has no node labels")
        X = g.X.copy()
    else:
        raise ConfigError(f"unknown feature scheme {scheme!r}")
    return Graph(g.n, g.edges, X, g.label, g.node_labels)


# --------------------------------------------------------------------------
# Augmentations


def _drop_nodes(g: Graph, count: int, rng) -> Graph:
    count = min(count, g.n - 1)
    if count <= 0:
        return g
    drop = rng.choice(g.n, size=count, replace=False)
    keep = np.setdiff1d(np.arange(g.n), drop)
    remap = -np.ones(g.n, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    e = remap[g.edges]
    e = e[(e >= 0).all(axis=1)]
    nl = g.node_labels[keep] if g.node_labels is not None else None
    return Graph(len(keep), e, g.X[keep], g.label, nl)


def _perturb_edges(g: Graph, count: int, rng) -> Graph:
    n_edges = len(g.edges)
    max_edges = g.n * (g.n - 1) // 2
    # adding needs as many free slots as we remove
    count = min(count, n_edges, max_edges - n_edges)
    if count <= 0:
        return g
    removed = rng.choice(n_edges, size=count, replace=False)
    kept = np.delete(g.edges, removed, axis=0)
    existing = set(map(tuple, g.edges.tolist()))
    added = []
    while len(added) < count:
        u, v = rng.choice(g.n, size=2, replace=False)
        e = (int(min(u, v)), int(max(u, v)))
        if e not in existing:
            existing.add(e)
            added.append(e)
    edges = np.concatenate([kept, np.array(added, dtype=np.int64)])
    return Graph(g.n, edges, g.X, g.label, g.node_labels)


def _mask_attrs(g: Graph, count: int, rng) -> Graph:
    if count <= 0:
        return g
    rows = rng.choice(g.n, size=min(count, g.n), replace=False)
    X = g.X.copy()
    X[rows] = 0.0
    return Graph(g.n, g.edges, X, g.label, g.node_labels)


def augment(g: Graph, cfg: AugmentConfig, rng) -> Graph:
    if cfg.kind == "identity" or cfg.ratio == 0.0:
        return g
    if cfg.kind == "node_drop":
        return _drop_nodes(g, int(np.floor(cfg.ratio * g.n)), rng)
    if cfg.kind == "edge_perturb":
        return _perturb_edges(g, int(np.floor(cfg.ratio * len(g.edges))), rng)
    return _mask_attrs(g, int(np.floor(cfg.ratio * g.n)), rng)


# --------------------------------------------------------------------------
# Batching


def make_batch(graphs: Sequence[Graph]) -> GraphBatch:
    if not graphs:
        raise ShapeError("cannot batch an empty list of graphs")
    width = graphs[0].X.shape[1]
    for i, g in enumerate(graphs):
        if g.X.shape[1] != width:
            raise ShapeError(f"graph {i} has feature width {g.X.shape[1]}, expected {width}")
    sizes = np.array([g.n for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    X = np.concatenate([g.X for g in graphs], axis=0)
    edges = np.concatenate([g.edges + off for g, off in zip(graphs, offsets[:-1])], axis=0)
    indicator = np.repeat(np.arange(len(graphs)), sizes)
    labels = np.array([-1 if g.label is None else g.label for g in graphs], dtype=np.int64)
    return GraphBatch(X, edges.reshape(-1, 2), indicator, labels, offsets)


def split_batch(batch: GraphBatch) -> List[Graph]:
    """Recover the member graphs from a batch using its indicator."""
    out = []
    for gi in range(batch.num_graphs):
        lo, hi = batch.offsets[gi], batch.offsets[gi + 1]
        mask = (batch.indicator[batch.edges[:, 0]] == gi)
        e = batch.edges[mask] - lo
        label = int(batch.labels[gi])
        out.append(Graph(int(hi - lo), e, batch.X[lo:hi], None if label < 0 else label))
    return out
