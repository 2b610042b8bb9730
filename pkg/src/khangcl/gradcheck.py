"""Central finite differences for checking hand-written gradients."""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-5
REL_FLOOR = 1e-6


def numeric_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. array ``x``,
    perturbing ``x`` in place (restored afterwards)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    """``max |a - n| / max(|a|, |n|, floor)`` over all coordinates."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {n.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
