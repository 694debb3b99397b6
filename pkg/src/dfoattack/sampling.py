"""Domain sub-sampling: pick which coordinates a batch optimizes over.

Instead of searching all ``n`` coordinates at once, attacks sweep over batches
of ``b`` coordinates.  A sweep of ``ceil(n_l / b)`` batches covers the domain
once; the ordering of coordinates within a sweep is either fresh-random, a
fixed random permutation, or driven by local intensity variance (high-contrast
regions first).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .core import ContractError, InputTensor

__all__ = [
    "STRATEGIES",
    "SamplingPlan",
    "SelectionSet",
    "neighborhood_variance",
    "grid_neighbor_variance",
    "descending_order",
    "generate_sampling_matrix",
    "num_batches",
]

STRATEGIES = ("random", "ordered", "variance")

# Lexicographic sweep over the 8 within-channel neighbors.  The order is part
# of the contract: float summation order decides last-ulp rounding, and the
# variance values feed a reproducible lowest-index tie-break.
_NEIGHBOR_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass(frozen=True)
class SamplingPlan:
    """How one sweep selects coordinates: strategy, batch size, domain size."""

    strategy: str
    batch_size: int
    domain_size: int

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ContractError(f"unknown strategy {self.strategy!r}, pick from {STRATEGIES}")
        if self.batch_size < 1:
            raise ContractError("batch size must be >= 1")
        if self.batch_size > self.domain_size:
            raise ContractError(
                f"invalid plan: batch size {self.batch_size} exceeds domain {self.domain_size}"
            )

    @property
    def batches_per_sweep(self) -> int:
        return num_batches(self.domain_size, self.batch_size)


@dataclass(frozen=True)
class SelectionSet:
    """Batch ``batch_index`` of a sweep: the active coordinate indices.

    Equivalent to the 0/1 selection matrix whose column q has its one in row
    ``indices[q]``.
    """

    indices: np.ndarray
    batch_index: int

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=int).ravel()
        object.__setattr__(self, "indices", indices)
        if indices.size == 0:
            raise ContractError("a selection must contain at least one coordinate")
        if np.unique(indices).size != indices.size:
            raise ContractError("selection indices must be distinct")
        if indices.min() < 0:
            raise ContractError("selection indices must be nonnegative")

    @property
    def size(self) -> int:
        return self.indices.size


def num_batches(domain_size: int, batch_size: int) -> int:
    return ceil(domain_size / batch_size)


def neighborhood_variance(X: InputTensor) -> np.ndarray:
    """Per-pixel population variance of the up-to-8 same-channel neighbors.

    Boundary pixels use the neighbors that exist.  Returned flat, length ``n``,
    in the image's row-major (h, w, c) order.
    """
    return grid_neighbor_variance(X.as_array())


def grid_neighbor_variance(arr: np.ndarray) -> np.ndarray:
    """Neighbor variance on any (rows, cols, channels) grid of intensities.

    Used both on raw pixels and on grids of block means at coarse levels.
    Neighbor values are shifted by the center value before the one-pass
    variance formula; the shift leaves the variance unchanged but makes
    constant regions exactly zero and keeps symmetric configurations bitwise
    tied, so the lowest-index tie-break is reproducible.  Cells with no
    neighbors (1x1 grids) get variance zero.
    """
    arr = np.asarray(arr, dtype=float)
    h, w, _ = arr.shape
    counts = np.zeros(arr.shape)
    sum_d = np.zeros(arr.shape)
    sum_d2 = np.zeros(arr.shape)
    for dr, dc in _NEIGHBOR_OFFSETS:
        src, dst = _shifted_views(h, w, dr, dc)
        d = arr[src] - arr[dst]
        sum_d[dst] += d
        sum_d2[dst] += d * d
        counts[dst] += 1.0
    counts = np.maximum(counts, 1.0)  # isolated cells: sums are zero anyway
    var = sum_d2 / counts - (sum_d / counts) ** 2
    return np.maximum(var, 0.0).ravel()


def _shifted_views(h: int, w: int, dr: int, dc: int):
    """Slices so that src indexes the neighbor at offset (dr, dc) of dst."""
    rows_dst = slice(max(0, -dr), h - max(0, dr))
    rows_src = slice(max(0, dr), h + min(0, dr))
    cols_dst = slice(max(0, -dc), w - max(0, dc))
    cols_src = slice(max(0, dc), w + min(0, dc))
    return (rows_src, cols_src, slice(None)), (rows_dst, cols_dst, slice(None))


def descending_order(values) -> np.ndarray:
    """Indices sorted by value, highest first; ties go to the lower index."""
    values = np.asarray(values, dtype=float).ravel()
    return np.argsort(-values, kind="stable")


def generate_sampling_matrix(
    X_hat: InputTensor | None,
    n_l: int,
    b: int,
    j: int,
    strategy: str,
    rng: np.random.Generator | None = None,
    order: np.ndarray | None = None,
) -> SelectionSet:
    """Coordinates active in batch ``j`` of a sweep over an ``n_l``-dim domain.

    variance  take positions [j*b, (j+1)*b) of the coordinates ranked by
              neighborhood variance, highest first.  Pass ``order`` to rank by a
              precomputed variance map (coarse levels rank block means); without
              it the map is computed from ``X_hat``, which then must have n_l
              pixels.
    ordered   slice ``j`` of a random permutation.  Pass the sweep's permutation
              as ``order`` so all batches of the sweep share it; otherwise a
              fresh permutation is drawn from ``rng``.
    random    ``b`` indices drawn without replacement, fresh on every call.

    For ordered and variance sweeps the final batch is shorter when ``b`` does
    not divide ``n_l``, so one sweep is an exact partition of the domain.
    """
    plan = SamplingPlan(strategy=strategy, batch_size=b, domain_size=n_l)
    if j < 0:
        raise ContractError("batch index must be nonnegative")

    if strategy == "random":
        if rng is None:
            raise ContractError("random strategy needs a random generator")
        picks = rng.choice(n_l, size=b, replace=False)
        return SelectionSet(indices=np.sort(picks), batch_index=j)

    if order is None:
        if strategy == "variance":
            if X_hat is None:
                raise ContractError("variance strategy needs the current image")
            if X_hat.n != n_l:
                raise ContractError(
                    "variance strategy on a coarse domain needs a precomputed order "
                    f"(image has {X_hat.n} pixels, domain is {n_l})"
                )
            order = descending_order(neighborhood_variance(X_hat))
        else:
            if rng is None:
                raise ContractError("ordered strategy needs a random generator or an order")
            order = rng.permutation(n_l)
    else:
        order = np.asarray(order, dtype=int).ravel()
        if order.size != n_l:
            raise ContractError(f"order has {order.size} entries, domain is {n_l}")

    start = j * b
    if start >= n_l:
        raise ContractError(
            f"batch {j} starts at {start}, beyond the domain of size {n_l}"
        )
    return SelectionSet(indices=order[start : min(start + b, n_l)], batch_index=j)
