"""Contrastive pretraining with CKFI hard negatives, and linear-probe evaluation."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .bspline import SplineGrid
from .ckfi import CkfiScores, ckfi_scores
from .encoder import (
    GinKanEncoder,
    ProjectionHead,
    build_model,
    encoder_backward,
    encoder_forward,
    project,
    project_backward,
)
from .errors import ConfigError, ShapeError
from .graphs import AugmentConfig, Graph, GraphBatch, augment, init_node_features, make_batch
from .losses import (
    PerturbationPair,
    hard_negative_loss,
    make_hard_negative,
    ntxent_loss,
    sample_perturbations,
    total_loss,
)
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

# named sub-streams of the run seed
STREAMS = {"init": 0, "augment": 1, "perturbation": 2, "shuffle": 3, "probe_split": 4}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[name], *extra])


@dataclass
class TrainConfig:
    tau: float = 0.2
    eps_delta: float = 0.075
    eps_rho: float = 0.075
    sigma_delta: float = 0.05
    sigma_rho: float = 0.05
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 60
    ckfi_refresh_every: int = 10
    normalize_scores: bool = True
    shared_sign: bool = False
    seed: int = 0
    aug1: Tuple[str, float] = ("node_drop", 0.2)
    aug2: Tuple[str, float] = ("edge_perturb", 0.2)
    hidden: Tuple[int, ...] = (32, 32, 32)
    head_dims: Tuple[int, ...] = (32, 32)
    head_kind: str = "kan"
    grid_size: int = 5
    sigma_init: float = 0.1
    pool: str = "add"
    features: str = "degree_onehot"
    degree_cap: int = 10
    record_timing: bool = True

    def __post_init__(self):
        self.aug1 = tuple(self.aug1)
        self.aug2 = tuple(self.aug2)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.head_dims = tuple(int(h) for h in self.head_dims)
        self.validate()

    def validate(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        for name in ("eps_delta", "eps_rho", "sigma_delta", "sigma_rho"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1 or self.ckfi_refresh_every < 1:
            raise ConfigError("epochs and ckfi_refresh_every must be >= 1")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        AugmentConfig(*self.aug1)
        AugmentConfig(*self.aug2)

    @property
    def hard_negatives_active(self) -> bool:
        return self.eps_delta > 0 or self.eps_rho > 0

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def featurize(graphs: Sequence[Graph], cfg: TrainConfig) -> List[Graph]:
    return [init_node_features(g, cfg.features, cfg.degree_cap) for g in graphs]


@dataclass
class StepResult:
    l_cl: float
    l_hn: float
    l_khan: float


def khan_objective(enc: GinKanEncoder, head: ProjectionHead, batch: GraphBatch,
                   pair: PerturbationPair, tau: float, V_hard=None):
    """``L_CL + L_HN`` on one batch and its gradients for ``enc.params() +
    head.params()``.

    The hard-negative projections are constants: pass ``V_hard`` to pin them
    (e.g. for finite-difference checks), otherwise they are computed from the
    current parameters. Returns ``(StepResult, grads, V_hard)``.
    """
    Z, ecache = encoder_forward(enc, batch)
    if V_hard is None:
        V_hard, _ = project(head, make_hard_negative(Z, pair))
    V, hcache = project(head, Z)
    l_cl, dV_cl = ntxent_loss(V, tau)
    l_hn, dV_hn = hard_negative_loss(V, V_hard)
    l_khan, dV = total_loss(l_cl, l_hn, dV_cl, dV_hn)
    dZ, head_grads = project_backward(head, hcache, dV)
    enc_grads = encoder_backward(enc, ecache, dZ)
    return StepResult(l_cl, l_hn, l_khan), enc_grads + head_grads, V_hard


@dataclass
class Trainer:
    """Mutable training state: model, optimiser and cached CKFI scores."""

    cfg: TrainConfig
    enc: GinKanEncoder
    head: ProjectionHead
    adam: AdamState = field(default_factory=AdamState)
    scores: Optional[CkfiScores] = None
    batches_seen: int = 0

    def params(self):
        return self.enc.params() + self.head.params()

    def refresh_scores(self):
        C = self.enc.layers[-1].C
        if self.cfg.hard_negatives_active:
            self.scores = ckfi_scores(C, "full", self.cfg.normalize_scores)
        else:
            # means are zero regardless of the scores
            zeros = np.zeros(C.shape[1])
            self.scores = CkfiScores(zeros, zeros.copy(), self.cfg.normalize_scores)

    def loss_and_grads(self, views: Sequence[Graph], rng):
        """Forward and backward on ``2N`` interleaved views ``(A1(g), A2(g), ...)``."""
        cfg = self.cfg
        pair = sample_perturbations(
            self.scores.delta, self.scores.rho, cfg.eps_delta, cfg.eps_rho,
            cfg.sigma_delta, cfg.sigma_rho, rng, rows=len(views), shared_sign=cfg.shared_sign,
        )
        res, grads, _ = khan_objective(self.enc, self.head, make_batch(views), pair, cfg.tau)
        return res, grads

    def step(self, views: Sequence[Graph], rng) -> StepResult:
        if self.scores is None or self.batches_seen % self.cfg.ckfi_refresh_every == 0:
            self.refresh_scores()
        res, grads = self.loss_and_grads(views, rng)
        cfg = self.cfg
        adam_step(self.params(), grads, self.adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.batches_seen += 1
        return res


def new_trainer(in_dim: int, cfg: TrainConfig) -> Trainer:
    enc, head = build_model(
        in_dim, cfg.hidden, cfg.head_dims, SplineGrid(g=cfg.grid_size), cfg.sigma_init,
        stream(cfg.seed, "init"), cfg.pool, cfg.head_kind,
    )
    return Trainer(cfg, enc, head)


def make_views(graphs: Sequence[Graph], indices, cfg: TrainConfig, epoch: int) -> List[Graph]:
    a1, a2 = AugmentConfig(*cfg.aug1), AugmentConfig(*cfg.aug2)
    views = []
    for gi in indices:
        rng = stream(cfg.seed, "augment", epoch, int(gi))
        views.append(augment(graphs[gi], a1, rng))
        views.append(augment(graphs[gi], a2, rng))
    return views


def epoch_batches(n: int, cfg: TrainConfig, epoch: int) -> List[np.ndarray]:
    order = stream(cfg.seed, "shuffle", epoch).permutation(n)
    batches = [order[i : i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
    # a single leftover graph has no in-batch negatives
    return [b for b in batches if len(b) >= 2]


def pretrain(graphs: Sequence[Graph], cfg: TrainConfig,
             on_epoch: Optional[Callable[[dict], None]] = None):
    """Run contrastive pretraining; returns ``(trainer, metrics)``.

    ``graphs`` must already carry node features. ``on_epoch`` receives each
    epoch's metrics record as soon as the epoch finishes.
    """
    if not graphs:
        raise ShapeError("cannot pretrain on an empty dataset")
    if len(graphs) < 2:
        raise ShapeError("need at least two graphs to form contrastive batches")
    trainer = new_trainer(graphs[0].X.shape[1], cfg)
    pert_rng = stream(cfg.seed, "perturbation")
    metrics = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        sums = np.zeros(3)
        batches = epoch_batches(len(graphs), cfg, epoch)
        for idx in batches:
            res = trainer.step(make_views(graphs, idx, cfg, epoch), pert_rng)
            sums += (res.l_cl, res.l_hn, res.l_khan)
        means = sums / len(batches)
        wall_ms = int(round((time.perf_counter() - t0) * 1000)) if cfg.record_timing else 0
        rec = {
            "epoch": epoch,
            "l_cl": float(means[0]),
            "l_hn": float(means[1]),
            "l_khan": float(means[2]),
            "wall_ms": wall_ms,
        }
        log.info("epoch %d  L_CL %.5f  L_HN %.5f", epoch, rec["l_cl"], rec["l_hn"])
        metrics.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return trainer, metrics


def embed(enc: GinKanEncoder, graphs: Sequence[Graph], chunk: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(graphs), chunk):
        Z, _ = encoder_forward(enc, make_batch(graphs[i : i + chunk]))
        out.append(Z)
    return np.concatenate(out, axis=0)


def stratified_split(labels, rng, test_fraction: float = 0.2):
    labels = np.asarray(labels)
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_test = int(round(test_fraction * len(idx)))
        n_test = min(max(n_test, 1), len(idx) - 1) if len(idx) > 1 else 0
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))


def linear_probe(Z, labels, split_seed: int, iterations: int = 500, lr: float = 0.1) -> float:
    """Test accuracy of a softmax-regression probe trained by full-batch
    gradient descent on standardized features."""
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    classes, y = np.unique(labels, return_inverse=True)
    if len(classes) < 2:
        raise ShapeError("linear probe needs at least two classes")
    train, test = stratified_split(y, stream(split_seed, "probe_split"))
    mu = Z[train].mean(axis=0)
    sd = Z[train].std(axis=0)
    sd[sd == 0] = 1.0
    Xtr = (Z[train] - mu) / sd
    Xte = (Z[test] - mu) / sd
    K = len(classes)
    W = np.zeros((Z.shape[1], K))
    b = np.zeros(K)
    Y = np.eye(K)[y[train]]
    for _ in range(iterations):
        logits = Xtr @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=1, keepdims=True)
        G = (P - Y) / len(train)
        W -= lr * (Xtr.T @ G)
        b -= lr * G.sum(axis=0)
    pred = np.argmax(Xte @ W + b, axis=1)
    return float(np.mean(pred == y[test]))


def linear_probe_eval(enc: GinKanEncoder, graphs: Sequence[Graph], split_seed: int) -> float:
    labels = [g.label for g in graphs]
    if any(l is None for l in labels):
        raise ShapeError("linear probe needs labelled graphs")
    return linear_probe(embed(enc, graphs), labels, split_seed)
