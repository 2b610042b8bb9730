"""Contrastive and hard-negative objectives with analytic gradients, and the
perturbations used to build hard negatives."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError

NORM_FLOOR = 1e-12


def cosine_sim(u, v) -> float:
    """Cosine similarity; defined as 0 when either vector is zero."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _normalize_rows(V):
    norms = np.maximum(np.linalg.norm(V, axis=1), NORM_FLOOR)
    return V / norms[:, None], norms


def _normalize_backward(n, norms, dn):
    """Pull a gradient w.r.t. unit rows back to the raw rows."""
    return (dn - n * np.einsum("ij,ij->i", n, dn)[:, None]) / norms[:, None]


def ntxent_loss(V, tau: float):
    """NT-Xent over ``2N`` rows where rows ``2i`` and ``2i+1`` are positives.

    Each anchor's denominator runs over every other row, the positive
    included. Returns ``(loss, dV)``.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or len(V) < 2 or len(V) % 2:
        raise ShapeError(f"need an even number (>= 2) of rows, got shape {V.shape}")
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    rows = len(V)
    n, norms = _normalize_rows(V)
    S = (n @ n.T) / tau
    np.fill_diagonal(S, -np.inf)
    pos = np.arange(rows) ^ 1
    top = S.max(axis=1, keepdims=True)
    E = np.exp(S - top)
    Z = E.sum(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(Z[:, 0])
    loss = float(np.mean(lse - S[np.arange(rows), pos]))
    dS = E / Z
    dS[np.arange(rows), pos] -= 1.0
    dS /= rows
    dn = (dS + dS.T) @ n / tau
    return loss, _normalize_backward(n, norms, dn)


def hard_negative_loss(V, V_hard):
    """Mean cosine similarity between each row and its (constant) hard negative.

    ``log(exp(s)) = s``, so the similarity is used directly. No gradient is
    returned for ``V_hard``.
    """
    V = np.asarray(V, dtype=np.float64)
    V_hard = np.asarray(V_hard, dtype=np.float64)
    if V.shape != V_hard.shape or V.ndim != 2:
        raise ShapeError(f"row mismatch: {V.shape} vs {V_hard.shape}")
    n, norms = _normalize_rows(V)
    h, _ = _normalize_rows(V_hard)
    sims = np.einsum("ij,ij->i", n, h)
    loss = float(sims.mean())
    dV = _normalize_backward(n, norms, h / len(V))
    return loss, dV


def total_loss(l_cl: float, l_hn: float, dV_cl=None, dV_hn=None):
    """``L_CL + L_HN``; sums the gradients too when both are given."""
    if dV_cl is None or dV_hn is None:
        return l_cl + l_hn
    return l_cl + l_hn, dV_cl + dV_hn


class PerturbationPair(NamedTuple):
    p_delta: np.ndarray
    p_rho: np.ndarray


def sample_perturbations(delta, rho, eps_delta: float, eps_rho: float, sigma_delta: float,
                         sigma_rho: float, rng, rows=None, shared_sign: bool = False) -> PerturbationPair:
    """Signed Gaussian perturbations whose means scale with the scores.

    Each coordinate draws ``u ~ N(eps * score, sigma^2)`` and an independent
    Rademacher sign, separately for the delta and rho parts. With
    ``shared_sign`` one sign per coordinate multiplies both parts.
    ``rows`` draws that many independent vectors at once.
    """
    delta = np.asarray(delta, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    if delta.shape != rho.shape or delta.ndim != 1:
        raise ShapeError(f"score vectors must match: {delta.shape} vs {rho.shape}")
    shape = delta.shape if rows is None else (rows, len(delta))
    u_delta = rng.normal(eps_delta * delta, sigma_delta, size=shape)
    a_delta = 2.0 * rng.integers(0, 2, size=shape) - 1.0
    u_rho = rng.normal(eps_rho * rho, sigma_rho, size=shape)
    a_rho = a_delta if shared_sign else 2.0 * rng.integers(0, 2, size=shape) - 1.0
    return PerturbationPair(a_delta * u_delta, a_rho * u_rho)


def make_hard_negative(z, pair: PerturbationPair):
    z = np.asarray(z, dtype=np.float64)
    if pair.p_delta.shape != z.shape or pair.p_rho.shape != z.shape:
        raise ShapeError(f"perturbation shape {pair.p_delta.shape} does not match {z.shape}")
    return z + pair.p_rho + pair.p_delta
