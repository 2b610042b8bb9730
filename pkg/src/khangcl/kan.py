"""Spline-only KAN layer: ``y_j = sum_i sum_k C[i, j, k] B_k(tanh(x_i))``."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bspline import SplineGrid, basis_eval_deriv
from .errors import ConfigError, DataError, ShapeError

MAGIC = b"KHANKAN\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sII")
_DIMS = struct.Struct("<5I2d")


@dataclass
class KanLayer:
    grid: SplineGrid
    C: np.ndarray
    squash_input: bool = True

    def __post_init__(self):
        self.C = np.ascontiguousarray(self.C, dtype=np.float64)
        if self.C.ndim != 3 or self.C.shape[2] != self.grid.n_basis:
            raise ShapeError(
                f"coefficient tensor {self.C.shape} does not match grid with "
                f"{self.grid.n_basis} basis functions"
            )
        if not np.all(np.isfinite(self.C)):
            raise ValueError("coefficient tensor has non-finite entries")

    @property
    def d_in(self) -> int:
        return self.C.shape[0]

    @property
    def d_out(self) -> int:
        return self.C.shape[1]

    @property
    def d_c(self) -> int:
        return self.C.shape[2]


@dataclass
class LayerCache:
    x: np.ndarray
    xt: np.ndarray
    B: np.ndarray = field(repr=False)
    dB: np.ndarray = field(repr=False)


def kan_init(d_in: int, d_out: int, grid: SplineGrid, sigma_init: float = 0.1,
             rng=None, squash_input: bool = True) -> KanLayer:
    """Coefficients i.i.d. ``N(0, (sigma_init / sqrt(d_in))^2)``."""
    if not sigma_init > 0:
        raise ConfigError(f"sigma_init must be positive, got {sigma_init}")
    if d_in < 1 or d_out < 1:
        raise ConfigError(f"layer dims must be positive, got ({d_in}, {d_out})")
    rng = np.random.default_rng(rng)
    C = rng.normal(0.0, sigma_init / np.sqrt(d_in), size=(d_in, d_out, grid.n_basis))
    return KanLayer(grid, C, squash_input)


def _coeff_matrix(C: np.ndarray) -> np.ndarray:
    # (i, j, k) -> rows (i, k), cols j
    d_in, d_out, d_c = C.shape
    return C.transpose(0, 2, 1).reshape(d_in * d_c, d_out)


def kan_forward(layer: KanLayer, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != layer.d_in:
        raise ShapeError(f"input of shape {X.shape} does not match d_in={layer.d_in}")
    xt = np.tanh(X) if layer.squash_input else X
    B, dB = basis_eval_deriv(layer.grid, xt)
    Y = B.reshape(len(X), -1) @ _coeff_matrix(layer.C)
    return Y, LayerCache(X, xt, B, dB)


def kan_backward(layer: KanLayer, cache: LayerCache, dY):
    """Gradients of a scalar loss w.r.t. the layer input and coefficients."""
    dY = np.asarray(dY, dtype=np.float64)
    n = cache.B.shape[0]
    if cache.B.shape[1:] != (layer.d_in, layer.d_c) or dY.shape != (n, layer.d_out):
        raise ShapeError(
            f"cache/gradient shapes {cache.B.shape}, {dY.shape} do not match "
            f"layer ({layer.d_in}, {layer.d_out}, {layer.d_c})"
        )
    Bflat = cache.B.reshape(n, -1)
    dC = (Bflat.T @ dY).reshape(layer.d_in, layer.d_c, layer.d_out).transpose(0, 2, 1)
    T = (dY @ _coeff_matrix(layer.C).T).reshape(n, layer.d_in, layer.d_c)
    dxt = np.einsum("nik,nik->ni", T, cache.dB)
    if layer.squash_input:
        dX = dxt * (1.0 - cache.xt**2)
    else:
        dX = dxt
    return dX, np.ascontiguousarray(dC)


def layer_to_bytes(layer: KanLayer) -> bytes:
    g = layer.grid
    flags = 1 if layer.squash_input else 0
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, flags)
    dims = _DIMS.pack(layer.d_in, layer.d_out, layer.d_c, g.g, g.k, g.a, g.b)
    return head + dims + layer.C.astype("<f8").tobytes(order="C")


def layer_from_bytes(buf: bytes, source=None) -> KanLayer:
    if len(buf) < _HEADER.size + _DIMS.size:
        raise DataError("truncated KAN layer container", source)
    magic, version, flags = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DataError("not a KAN layer container (bad magic)", source)
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported container version {version}", source)
    d_in, d_out, d_c, g, k, a, b = _DIMS.unpack_from(buf, _HEADER.size)
    offset = _HEADER.size + _DIMS.size
    count = d_in * d_out * d_c
    if len(buf) != offset + 8 * count:
        raise DataError("KAN layer container size does not match its dims", source)
    C = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64)
    grid = SplineGrid(a, b, g, k)
    if grid.n_basis != d_c:
        raise DataError("basis count inconsistent with grid parameters", source)
    return KanLayer(grid, C.reshape(d_in, d_out, d_c), bool(flags & 1))


def layer_sidecar(layer: KanLayer) -> dict:
    g = layer.grid
    return {
        "format_version": FORMAT_VERSION,
        "d_in": layer.d_in,
        "d_out": layer.d_out,
        "d_c": layer.d_c,
        "grid": {"a": g.a, "b": g.b, "g": g.g, "k": g.k},
        "squash_input": layer.squash_input,
        "layout": "row-major (i, j, k), float64 little-endian",
    }


def save_layer(layer: KanLayer, path) -> None:
    """Write the binary container to ``path`` and a JSON sidecar next to it."""
    path = Path(path)
    path.write_bytes(layer_to_bytes(layer))
    Path(str(path) + ".json").write_text(json.dumps(layer_sidecar(layer), indent=2) + "\n")


def load_layer(path) -> KanLayer:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise DataError("layer file not found", path) from None
    return layer_from_bytes(buf, path)
