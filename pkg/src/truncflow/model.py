"""Network data model: per-layer parameters, truncation maps, sectors, costs.

A layer is the pair (R, beta) with R in O(Q) and beta in R^Q.  Its
truncation map acts on input-space points as

    tau(x) = R^T relu(R (x + beta)) - beta,

i.e. the coordinatewise ReLU pulled back through the affine map
a(x) = R (x + beta).  A coordinate with a(x)_r <= 0 counts as truncated
(the activation derivative convention h(0) = 0); all sector logic below
uses strict `> 0` so the measure-zero boundary is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyCluster, IndexRange
from .manifold import OrthogonalMatrix


@dataclass(frozen=True)
class SectorMask:
    """Sign pattern of a point in a layer's rotated frame, one bit per coordinate."""

    bits: tuple[bool, ...]

    def __post_init__(self):
        if len(self.bits) < 1:
            raise ValueError("SectorMask needs at least one coordinate")

    @classmethod
    def from_vector(cls, x) -> "SectorMask":
        x = np.asarray(x, dtype=float)
        return cls(tuple(bool(b) for b in x > 0.0))

    @property
    def dim(self) -> int:
        return len(self.bits)

    def all_true(self) -> bool:
        return all(self.bits)

    def all_false(self) -> bool:
        return not any(self.bits)

    def is_off_diagonal(self) -> bool:
        """Neither fully positive nor fully truncated."""
        return not (self.all_true() or self.all_false())

    def as_float(self) -> np.ndarray:
        return np.array(self.bits, dtype=float)


def heaviside_mask(x) -> SectorMask:
    """Mask with bit r set iff x_r > 0 strictly; x_r = 0 counts as truncated."""
    return SectorMask.from_vector(x)


@dataclass(frozen=True)
class LayerParams:
    """One layer's cumulative parameters: rotation R and bias beta."""

    rotation: OrthogonalMatrix
    beta: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=float)
        if b.shape != (self.rotation.dim,):
            raise ValueError(f"beta has shape {b.shape}, expected ({self.rotation.dim},)")
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)

    @property
    def dim(self) -> int:
        return self.rotation.dim

    def with_updates(self, rotation=None, beta=None) -> "LayerParams":
        return LayerParams(
            rotation=self.rotation if rotation is None else rotation,
            beta=self.beta if beta is None else beta,
        )


class ModelState:
    """All flow variables plus the fixed output map and labels.

    `output_map` is the full-rank linear map from input space to output
    space; `labels[l]` is the l-th reference output and `pulled_labels[l]`
    its preimage under the output map, cached at construction by a linear
    solve.
    """

    def __init__(self, layers, output_map, labels):
        layers = list(layers)
        if not layers:
            raise ValueError("need at least one layer")
        q = layers[0].dim
        if any(lp.dim != q for lp in layers):
            raise ValueError("all layers must share the same dimension")
        w = np.asarray(output_map, dtype=float)
        if w.shape != (q, q):
            raise ValueError(f"output_map has shape {w.shape}, expected ({q}, {q})")
        y = np.asarray(labels, dtype=float)
        if y.shape != (q, q):
            raise ValueError(f"labels have shape {y.shape}, expected ({q}, {q}) (one row per cluster)")
        sv = np.linalg.svd(w, compute_uv=False)
        if sv[-1] <= 1e-12 * sv[0]:
            raise ValueError("output_map is numerically singular")
        ytil = np.linalg.solve(w, y.T).T
        resid = np.linalg.norm(w @ ytil.T - y.T, axis=0)
        scale = np.maximum(np.linalg.norm(y, axis=1), 1e-300)
        if np.any(resid > 1e-10 * np.maximum(scale, 1.0)):
            raise ValueError("pulled labels failed the reconstruction check")
        w.setflags(write=False)
        y.setflags(write=False)
        ytil.setflags(write=False)
        self.layers = layers
        self.output_map = w
        self.labels = y
        self.pulled_labels = ytil

    @property
    def dim(self) -> int:
        return self.layers[0].dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    def copy(self) -> "ModelState":
        return ModelState(list(self.layers), self.output_map, self.labels)

    def with_layer(self, index: int, layer: LayerParams) -> "ModelState":
        layers = list(self.layers)
        layers[index] = layer
        return ModelState(layers, self.output_map, self.labels)


def truncation_map(layer: LayerParams, x) -> np.ndarray:
    """Apply one layer's ReLU pullback: R^T relu(R(x + beta)) - beta."""
    x = np.asarray(x, dtype=float)
    r = layer.rotation.mat
    z = r @ (x + layer.beta)
    return r.T @ np.maximum(z, 0.0) - layer.beta


def truncation_map_batch(layer: LayerParams, pts: np.ndarray) -> np.ndarray:
    """Vectorized :func:`truncation_map` over rows of `pts`."""
    r = layer.rotation.mat
    z = (pts + layer.beta) @ r.T
    return np.maximum(z, 0.0) @ r - layer.beta


def classify_sector(layer: LayerParams, x) -> SectorMask:
    """Sign pattern of R(x + beta); all-true means the point is fixed by the layer."""
    x = np.asarray(x, dtype=float)
    return heaviside_mask(layer.rotation.mat @ (x + layer.beta))


def _check_range(lo: int, hi: int, depth: int) -> None:
    """Validate a half-open layer range [lo, hi); empty ranges are allowed."""
    if not (0 <= lo <= hi <= depth):
        raise IndexRange(f"invalid layer range [{lo}, {hi}) for {depth} layers")


def chained_truncation(layers, x, lo: int = 0, hi: int | None = None) -> np.ndarray:
    """Compose truncation maps of layers lo..hi-1 in ascending order.

    The range is half-open and 0-based; an empty range returns x unchanged.
    """
    layers = list(layers)
    if hi is None:
        hi = len(layers)
    _check_range(lo, hi, len(layers))
    out = np.asarray(x, dtype=float)
    for k in range(lo, hi):
        out = truncation_map(layers[k], out)
    return out


def chained_truncation_batch(layers, pts: np.ndarray, lo: int = 0, hi: int | None = None) -> np.ndarray:
    layers = list(layers)
    if hi is None:
        hi = len(layers)
    _check_range(lo, hi, len(layers))
    out = np.asarray(pts, dtype=float)
    for k in range(lo, hi):
        out = truncation_map_batch(layers[k], out)
    return out


def _residuals(state: ModelState, data) -> list[np.ndarray]:
    """Per-cluster residual matrices tau^(L..1)(x) - ytilde, rows are points."""
    if any(len(c) == 0 for c in data.clusters):
        raise EmptyCluster("every cluster must contain at least one point")
    out = []
    for l, pts in enumerate(data.clusters):
        final = chained_truncation_batch(state.layers, pts)
        out.append(final - state.pulled_labels[l])
    return out


def euclidean_cost(state: ModelState, data) -> float:
    """Mean squared input-space mismatch of fully truncated data to pulled labels.

    (1/2) sum_l (1/N_l) sum_i |tau^(chain)(x_{l,i}) - ytilde_l|^2
    """
    total = 0.0
    for resid in _residuals(state, data):
        total += 0.5 * float(np.sum(resid * resid)) / resid.shape[0]
    return total


def standard_cost(state: ModelState, data) -> float:
    """Same mismatch measured after mapping residuals through the output map."""
    w = state.output_map
    total = 0.0
    for resid in _residuals(state, data):
        mapped = resid @ w.T
        total += 0.5 * float(np.sum(mapped * mapped)) / mapped.shape[0]
    return total
