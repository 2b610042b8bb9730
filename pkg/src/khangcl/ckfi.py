"""Critical feature scores for the output dimensions of a KAN layer.

``delta[j]`` measures how badly output slice ``j`` of the coefficient tensor
is reconstructed from a Tucker decomposition of the remaining slices
(large = independent). ``rho[j]`` is the mean coefficient variance of the
splines feeding output ``j`` (large = discriminative).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError
from .tensor import Ranks, as_tensor3, frob_dist, hosvd, mode_product

LSTSQ_DAMPING = 1e-12


@dataclass(frozen=True)
class CkfiScores:
    delta: np.ndarray
    rho: np.ndarray
    normalized: bool = False

    def to_json(self, layer_dims=None) -> dict:
        out = {
            "delta": [float(v) for v in self.delta],
            "rho": [float(v) for v in self.rho],
            "normalized": self.normalized,
        }
        if layer_dims is not None:
            out["layer_dims"] = [int(d) for d in layer_dims]
        return out


def leave_one_out_reconstruction(C, j: int, ranks: Ranks = "full") -> np.ndarray:
    """Reconstruct ``C`` after decomposing it with output slice ``j`` removed."""
    C = as_tensor3(C)
    rest = np.delete(C, j, axis=1)
    tk = hosvd(rest, ranks)
    # partial reconstruction: mode 2 left in the core's coordinates
    P = mode_product(mode_product(tk.core, tk.U1, 1), tk.U3, 3)
    A = P.transpose(1, 0, 2).reshape(P.shape[1], -1).T
    target = C[:, j, :].ravel()
    gram = A.T @ A + LSTSQ_DAMPING * np.eye(A.shape[1])
    m = np.linalg.solve(gram, A.T @ target)
    U2 = np.insert(tk.U2, j, m, axis=0)
    out = mode_product(P, U2, 2)
    return out


def independent_scores(C, ranks: Ranks = "full") -> np.ndarray:
    C = as_tensor3(C)
    d_out = C.shape[1]
    if d_out < 2:
        raise ShapeError(f"independence scores need d_out >= 2, got {d_out}")
    return np.array(
        [frob_dist(leave_one_out_reconstruction(C, j, ranks), C) for j in range(d_out)]
    )


def discriminative_scores(C) -> np.ndarray:
    C = as_tensor3(C)
    if C.shape[2] < 1:
        raise ShapeError("need at least one coefficient per spline")
    return np.var(C, axis=2).mean(axis=0)


def _scale_by_max(v: np.ndarray) -> np.ndarray:
    top = v.max() if v.size else 0.0
    return v / top if top > 0 else v.copy()


def normalize_scores(s: CkfiScores) -> CkfiScores:
    return replace(s, delta=_scale_by_max(s.delta), rho=_scale_by_max(s.rho), normalized=True)


def ckfi_scores(C, ranks: Ranks = "full", normalize: bool = True) -> CkfiScores:
    s = CkfiScores(independent_scores(C, ranks), discriminative_scores(C))
    return normalize_scores(s) if normalize else s
