"""Hierarchical lifting: coarse-to-fine perturbation grids.

A lifting maps a coarse ``n_l``-dimensional perturbation to full image space
by assigning every pixel to exactly one coarse variable.  Block liftings tile
each channel with a near-equal square grid (piecewise-constant interpolation);
random liftings group pixels arbitrarily.  The level schedule quadruples the
coarse dimension until it reaches the pixel count.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import isqrt

import numpy as np

from .core import ContractError, InputTensor
from .sampling import grid_neighbor_variance

__all__ = [
    "BlockLifting",
    "HierarchySchedule",
    "generate_lifting",
    "identity_lifting",
    "apply_lifting",
    "block_variance_order",
    "random_lifting",
]


@dataclass(frozen=True)
class BlockLifting:
    """Assignment of each of ``n`` pixels to one of ``coarse_dim`` variables.

    ``grid`` is (grid_h, grid_w, channels) for grid-structured liftings and
    None for random ones.  Every coarse variable owns at least one pixel and
    the blocks partition the pixel set.
    """

    n: int
    coarse_dim: int
    assignment: np.ndarray
    grid: tuple[int, int, int] | None = None

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=int).ravel()
        object.__setattr__(self, "assignment", assignment)
        if assignment.size != self.n:
            raise ContractError(f"assignment length {assignment.size} != n={self.n}")
        counts = np.bincount(assignment, minlength=self.coarse_dim)
        if assignment.min(initial=0) < 0 or assignment.max(initial=0) >= self.coarse_dim:
            raise ContractError("assignment targets outside [0, coarse_dim)")
        if counts.size != self.coarse_dim or counts.min() < 1:
            raise ContractError("every coarse variable must own at least one pixel")
        if self.grid is not None:
            gh, gw, c = self.grid
            if gh * gw * c != self.coarse_dim:
                raise ContractError("grid does not match the coarse dimension")

    @property
    def is_identity(self) -> bool:
        return self.coarse_dim == self.n

    @cached_property
    def members(self) -> list[np.ndarray]:
        """Pixel indices owned by each coarse variable."""
        order = np.argsort(self.assignment, kind="stable")
        counts = np.bincount(self.assignment, minlength=self.coarse_dim)
        return np.split(order, np.cumsum(counts)[:-1])


@dataclass(frozen=True)
class HierarchySchedule:
    """Coarse dimensions per level: start small, grow 4x, cap at ``n``."""

    levels: tuple[int, ...]

    def __post_init__(self):
        if not self.levels:
            raise ContractError("schedule needs at least one level")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ContractError("levels must be strictly increasing")

    @classmethod
    def from_rule(cls, n: int, initial: int = 12, growth: int = 4) -> "HierarchySchedule":
        if n < 1 or initial < 1 or growth < 2:
            raise ContractError("need n >= 1, initial >= 1, growth >= 2")
        levels = []
        v = min(initial, n)
        while True:
            levels.append(v)
            if v >= n:
                break
            v = min(v * growth, n)
        return cls(levels=tuple(levels))


def generate_lifting(n_l: int, shape: tuple[int, int, int]) -> BlockLifting:
    """Block lifting with a near-equal g x g grid per channel.

    ``n_l`` is rounded down to the nearest ``g*g*channels``; values of ``n_l``
    at or above the pixel count collapse to the identity lifting.  Block edge
    lengths differ by at most one.
    """
    h, w, c = shape
    n = h * w * c
    if n_l < c:
        raise ContractError(f"level size {n_l} cannot cover {c} channels")
    if n_l >= n:
        return identity_lifting(shape)
    g = isqrt(n_l // c)
    gh, gw = min(g, h), min(g, w)
    row_block = np.repeat(np.arange(gh), _split_sizes(h, gh))
    col_block = np.repeat(np.arange(gw), _split_sizes(w, gw))
    plane = row_block[:, None] * gw + col_block[None, :]
    assignment = plane[:, :, None] * c + np.arange(c)[None, None, :]
    return BlockLifting(
        n=n, coarse_dim=gh * gw * c, assignment=assignment.ravel(), grid=(gh, gw, c)
    )


def identity_lifting(shape: tuple[int, int, int]) -> BlockLifting:
    h, w, c = shape
    n = h * w * c
    return BlockLifting(n=n, coarse_dim=n, assignment=np.arange(n), grid=(h, w, c))


def _split_sizes(length: int, parts: int) -> np.ndarray:
    """Sizes of a near-equal split of ``length`` items into ``parts`` chunks."""
    base, extra = divmod(length, parts)
    return np.array([base + 1] * extra + [base] * (parts - extra))


def apply_lifting(L: BlockLifting, eta_hat: np.ndarray) -> np.ndarray:
    """Piecewise-constant interpolation: pixel i takes the value of its owner."""
    eta_hat = np.asarray(eta_hat, dtype=float).ravel()
    if eta_hat.size != L.coarse_dim:
        raise ContractError(
            f"coarse vector has {eta_hat.size} entries, lifting expects {L.coarse_dim}"
        )
    return eta_hat[L.assignment]


def block_means(X: InputTensor, L: BlockLifting) -> np.ndarray:
    """Mean intensity of each block, length ``coarse_dim``."""
    if X.n != L.n:
        raise ContractError(f"image size {X.n} != lifting size {L.n}")
    totals = np.bincount(L.assignment, weights=X.data, minlength=L.coarse_dim)
    counts = np.bincount(L.assignment, minlength=L.coarse_dim)
    return totals / counts


def block_variance_order(X_hat: InputTensor, L: BlockLifting) -> np.ndarray:
    """Per-block variance of the neighboring blocks' mean intensities.

    The variance map that ranks coarse variables at a level: block means are
    laid out on the lifting's grid and each block looks at its up-to-8
    same-channel neighbor blocks, mirroring the pixel-level rule.  At the
    identity lifting this reduces exactly to ``neighborhood_variance``.
    """
    if L.grid is None:
        raise ContractError("block variance needs a grid-structured lifting")
    means = block_means(X_hat, L)
    return grid_neighbor_variance(means.reshape(L.grid))


def random_lifting(n_l: int, n: int, seed) -> BlockLifting:
    """Uniformly random partition of pixels into ``n_l`` near-equal groups."""
    if not 1 <= n_l <= n:
        raise ContractError(f"need 1 <= n_l <= n, got n_l={n_l}, n={n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=int)
    for i, chunk in enumerate(np.array_split(perm, n_l)):
        assignment[chunk] = i
    return BlockLifting(n=n, coarse_dim=n_l, assignment=assignment, grid=None)
