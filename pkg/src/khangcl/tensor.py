"""Dense matrix and 3-way tensor algebra.

Tensors are float64 numpy arrays of shape ``(d1, d2, d3)`` in C order, so the
flat index of ``(i, j, k)`` is ``i*d2*d3 + j*d3 + k``. Modes are numbered
1, 2, 3 as in the usual Tucker notation.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import ConfigError, ConvergenceError, ShapeError

Ranks = Union[str, Sequence[int]]

SVD_TOL = 1e-12
SVD_MAX_SWEEPS = 60
RANK_THRESHOLD = 1e-10


class SvdResult(NamedTuple):
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


class TuckerResult(NamedTuple):
    core: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    U3: np.ndarray

    @property
    def factors(self):
        return (self.U1, self.U2, self.U3)


def as_tensor3(t) -> np.ndarray:
    t = np.ascontiguousarray(t, dtype=np.float64)
    if t.ndim != 3:
        raise ShapeError(f"expected a 3-way tensor, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor has non-finite entries")
    return t


def _check_mode(mode: int) -> int:
    if mode not in (1, 2, 3):
        raise ShapeError(f"mode must be 1, 2 or 3, got {mode!r}")
    return mode - 1


def unfold(t, mode: int) -> np.ndarray:
    """Mode-n unfolding: rows follow ``mode``, columns the other modes in
    ascending order (earlier mode varies slowest)."""
    t = as_tensor3(t)
    ax = _check_mode(mode)
    return np.ascontiguousarray(np.moveaxis(t, ax, 0)).reshape(t.shape[ax], -1)


def fold(m, mode: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    m = np.asarray(m, dtype=np.float64)
    ax = _check_mode(mode)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ShapeError(f"dims must have three entries, got {dims}")
    rest = [d for i, d in enumerate(dims) if i != ax]
    expected = (dims[ax], rest[0] * rest[1])
    if m.ndim != 2 or m.shape != expected:
        raise ShapeError(
            f"cannot fold {m.shape} matrix into {dims} along mode {mode}; "
            f"expected {expected}"
        )
    moved = m.reshape(dims[ax], rest[0], rest[1])
    return np.ascontiguousarray(np.moveaxis(moved, 0, ax))


def mode_product(t, m, mode: int) -> np.ndarray:
    """``t ×_mode m``: multiply every mode-``mode`` fibre of ``t`` by ``m``."""
    t = as_tensor3(t)
    m = np.asarray(m, dtype=np.float64)
    ax = _check_mode(mode)
    if m.ndim != 2 or m.shape[1] != t.shape[ax]:
        raise ShapeError(
            f"matrix {m.shape} cannot multiply mode {mode} of tensor {t.shape}"
        )
    dims = list(t.shape)
    dims[ax] = m.shape[0]
    return fold(m @ unfold(t, mode), mode, dims)


def _complete_columns(Q: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Replace columns of ``Q`` not marked ``filled`` by unit vectors
    orthogonal to all other columns (deterministic Gram-Schmidt on the
    standard basis)."""
    n = Q.shape[0]
    basis = [Q[:, j] for j in range(Q.shape[1]) if filled[j]]
    candidates = iter(np.eye(n))
    for j in np.flatnonzero(~filled):
        for e in candidates:
            v = e.copy()
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                v /= nv
                Q[:, j] = v
                basis.append(v)
                break
        else:  # pragma: no cover - more columns than the ambient dimension
            raise ShapeError("cannot complete orthonormal basis")
    return Q


def _round_robin(n: int):
    """Tournament schedule: ``n - 1`` (or ``n``) rounds of disjoint pairs that
    together cover every pair ``p < q`` exactly once."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [
            (min(a, b), max(a, b))
            for a, b in zip(players[: m // 2], reversed(players[m // 2 :]))
            if a >= 0 and b >= 0
        ]
        pairs.sort()
        rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi_columns(A: np.ndarray, tol: float, max_sweeps: int):
    """One-sided Jacobi: rotate the columns of ``A`` until mutually orthogonal.

    Each sweep visits every column pair once in round-robin order, rotating
    the disjoint pairs of a round together. Returns ``(W, V)`` with
    ``W = A @ V`` having orthogonal columns and ``V`` orthogonal.
    """
    n = A.shape[1]
    # rows of Wt / Vt are the columns being rotated
    Wt = np.array(A.T, order="C", copy=True)
    Vt = np.eye(n)
    if n < 2:
        return Wt.T, Vt.T
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        rotated = False
        for P, Q in rounds:
            wp, wq = Wt[P], Wt[Q]
            alpha = np.einsum("ij,ij->i", wp, wp)
            beta = np.einsum("ij,ij->i", wq, wq)
            gamma = np.einsum("ij,ij->i", wp, wq)
            active = (np.abs(gamma) > tol * np.sqrt(alpha * beta)) & (gamma != 0.0)
            if not active.any():
                continue
            rotated = True
            P, Q = P[active], Q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            wp, wq = wp[active], wq[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            Wt[P] = c * wp - s * wq
            Wt[Q] = s * wp + c * wq
            vp, vq = Vt[P], Vt[Q]
            Vt[P] = c * vp - s * vq
            Vt[Q] = s * vp + c * vq
        if not rotated:
            return Wt.T, Vt.T
    raise ConvergenceError(
        f"one-sided Jacobi SVD did not converge in {max_sweeps} sweeps"
    )


def svd(m, tol: float = SVD_TOL, max_sweeps: int = SVD_MAX_SWEEPS) -> SvdResult:
    """Thin SVD ``m = U diag(S) V^T`` by cyclic one-sided Jacobi.

    ``U`` is ``rows x r`` and ``V`` is ``cols x r`` with ``r = min(rows, cols)``.
    Singular values are descending. Each column of ``U`` is signed so that its
    largest-magnitude entry (lowest index on ties) is non-negative.
    """
    A = np.asarray(m, dtype=np.float64)
    if A.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    rows, cols = A.shape
    transposed = rows < cols
    if transposed:
        A = A.T
    # A is now tall (or square): orthogonalise its columns.
    W, R = _jacobi_columns(A, tol, max_sweeps)
    S = np.sqrt(np.einsum("ij,ij->j", W, W))
    order = np.argsort(-S, kind="stable")
    S = S[order]
    W = W[:, order]
    R = R[:, order]
    smax = S[0] if S.size else 0.0
    # columns at rounding-noise level carry no direction; rebuild them instead
    filled = S > smax * 1e-14 if smax > 0 else np.zeros(S.shape, dtype=bool)
    L = np.zeros_like(W)
    L[:, filled] = W[:, filled] / S[filled]
    if not np.all(filled):
        L = _complete_columns(L, filled)
        S = np.where(filled, S, 0.0)
    if transposed:
        U, V = R, L
    else:
        U, V = L, R
    U = U.copy()
    V = V.copy()
    for j in range(U.shape[1]):
        col = U[:, j]
        idx = int(np.argmax(np.abs(col)))
        if col[idx] < 0:
            U[:, j] = -col
            V[:, j] = -V[:, j]
    return SvdResult(U, S, V)


def numerical_rank(S: np.ndarray, threshold: float = RANK_THRESHOLD) -> int:
    if S.size == 0 or S[0] == 0.0:
        return 0
    return int(np.count_nonzero(S >= threshold * S[0]))


def hosvd(t, ranks: Ranks = "full") -> TuckerResult:
    """Truncated higher-order SVD (Tucker decomposition).

    ``ranks="full"`` keeps, per mode, every singular direction whose singular
    value is at least ``1e-10`` times the largest one (at least one column).
    """
    t = as_tensor3(t)
    factors = []
    for mode in (1, 2, 3):
        res = svd(unfold(t, mode))
        if isinstance(ranks, str):
            if ranks != "full":
                raise ConfigError(f"unknown ranks spec {ranks!r}")
            r = max(1, numerical_rank(res.S))
        else:
            r = int(ranks[mode - 1])
            if not 0 < r <= t.shape[mode - 1]:
                raise ShapeError(
                    f"rank {r} invalid for mode {mode} of extent {t.shape[mode - 1]}"
                )
        # the thin SVD has min(rows, cols) columns; pad if a larger rank is asked
        U = res.U
        if r > U.shape[1]:
            pad = np.zeros((U.shape[0], r))
            pad[:, : U.shape[1]] = U
            filled = np.zeros(r, dtype=bool)
            filled[: U.shape[1]] = True
            U = _complete_columns(pad, filled)
        factors.append(np.ascontiguousarray(U[:, :r]))
    core = t
    for mode, U in zip((1, 2, 3), factors):
        core = mode_product(core, U.T, mode)
    return TuckerResult(core, *factors)


def reconstruct(tk: TuckerResult) -> np.ndarray:
    """``G ×1 U1 ×2 U2 ×3 U3``."""
    core = np.asarray(tk.core, dtype=np.float64)
    for mode, U in zip((1, 2, 3), tk.factors):
        U = np.asarray(U, dtype=np.float64)
        if U.ndim != 2 or U.shape[1] != core.shape[mode - 1]:
            raise ShapeError(
                f"factor {mode} of shape {U.shape} does not match core {core.shape}"
            )
        core = mode_product(core, U, mode)
    return core


def frob_dist(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))
