"""Array geometry: steering vectors, search grids, and the block dictionary.

The model is a uniform linear array with half-wavelength element spacing.
Angles are degrees at every API boundary and radians internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridSpec",
    "BlockPermutation",
    "BlockDictionary",
    "steering_vector",
    "build_dictionary",
    "block_permutation",
    "build_block_dictionary",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform angular search grid in degrees, endpoints inclusive.

    Point n is ``theta_min + n * step``; the grid must contain at least two
    points and stay strictly inside (-90, 90) degrees.
    """

    theta_min: float
    theta_max: float
    step: float

    def __post_init__(self) -> None:
        if self.step <= 0:
            raise ValueError(f"grid step must be positive, got {self.step}")
        if self.theta_min <= -90.0 or self.theta_max >= 90.0:
            raise ValueError("grid must lie strictly inside (-90, 90) degrees")
        if self.size < 2:
            raise ValueError("grid needs at least two points")

    @property
    def size(self) -> int:
        # Guard the ratio so ranges that are an exact multiple of the step do
        # not lose their endpoint to floating-point rounding (80 / 0.1 case).
        ratio = (self.theta_max - self.theta_min) / self.step
        return int(math.floor(ratio + 1e-9)) + 1

    @property
    def angles(self) -> np.ndarray:
        return self.theta_min + self.step * np.arange(self.size)

    def index_of(self, theta_deg: float, tol: float = 1e-9) -> int:
        """Index of the grid point equal to ``theta_deg``; raises if off-grid."""
        idx = int(round((theta_deg - self.theta_min) / self.step))
        if not 0 <= idx < self.size or abs(self.theta_min + idx * self.step - theta_deg) > tol:
            raise ValueError(f"{theta_deg} deg is not a grid point")
        return idx

    def contains(self, theta_deg: float, tol: float = 1e-9) -> bool:
        try:
            self.index_of(theta_deg, tol)
        except ValueError:
            return False
        return True


def steering_vector(theta_deg: float, n_elements: int) -> np.ndarray:
    """Half-wavelength ULA response to a plane wave from ``theta_deg``.

    Entry k equals exp(-j*k*pi*sin(theta)) for k = 0..n_elements-1, so every
    entry has unit modulus.
    """
    if n_elements < 1:
        raise ValueError("array needs at least one element")
    if not -90.0 < theta_deg < 90.0:
        raise ValueError("DOA must lie strictly inside (-90, 90) degrees")
    phase = -np.pi * math.sin(math.radians(theta_deg))
    return np.exp(1j * phase * np.arange(n_elements))


def build_dictionary(grid: GridSpec, n_elements: int) -> np.ndarray:
    """Steering matrix with one column per grid angle, shape (n_elements, grid.size)."""
    if n_elements < 1:
        raise ValueError("array needs at least one element")
    phases = -np.pi * np.sin(np.deg2rad(grid.angles))
    return np.exp(1j * np.outer(np.arange(n_elements), phases))


@dataclass(frozen=True)
class BlockPermutation:
    """Index map that interleaves the two halves of the stacked dictionary.

    The dense form has a single 1 in row i at column ``col_of_row[i]``.
    Right-multiplying the stacked dictionary by it pairs the conjugate and
    direct steering columns of each grid angle into one two-column block;
    the matching row shuffle pairs the two signal copies per angle.
    """

    n_blocks: int
    col_of_row: np.ndarray = field(init=False, repr=False, compare=False)
    row_of_col: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n_blocks < 1:
            raise ValueError("need at least one block")
        n = self.n_blocks
        cols = np.empty(2 * n, dtype=np.int64)
        cols[:n] = 2 * np.arange(n)
        cols[n:] = 2 * np.arange(n) + 1
        object.__setattr__(self, "col_of_row", cols)
        object.__setattr__(self, "row_of_col", np.argsort(cols))

    @property
    def size(self) -> int:
        return 2 * self.n_blocks

    def dense(self) -> np.ndarray:
        """Dense 0/1 matrix; test oracle only, never used in hot paths."""
        out = np.zeros((self.size, self.size))
        out[np.arange(self.size), self.col_of_row] = 1.0
        return out

    def permute_columns(self, mat: np.ndarray) -> np.ndarray:
        """Columns of ``mat`` rearranged as by right-multiplication with dense()."""
        return mat[:, self.row_of_col]

    def interleave_rows(self, stacked: np.ndarray) -> np.ndarray:
        """Rows of the stacked (conjugate-half over direct-half) signal,
        reordered so rows (2i, 2i+1) belong to grid angle i."""
        return stacked[self.row_of_col]


def block_permutation(n_blocks: int) -> BlockPermutation:
    """Interleaving permutation for ``n_blocks`` grid angles."""
    return BlockPermutation(n_blocks)


@dataclass(frozen=True)
class BlockDictionary:
    """Augmented steering dictionary with two columns per grid angle.

    Block i occupies columns (2i, 2i+1): the first is the conjugate steering
    vector stacked over zeros, the second zeros stacked over the direct
    steering vector. Shape is (2 * n_elements, 2 * grid.size).
    """

    matrix: np.ndarray
    grid: GridSpec
    n_elements: int

    @property
    def n_blocks(self) -> int:
        return self.grid.size

    def block(self, i: int) -> np.ndarray:
        return self.matrix[:, 2 * i : 2 * i + 2]


def build_block_dictionary(grid: GridSpec, n_elements: int) -> BlockDictionary:
    """Assemble the block dictionary directly by column placement.

    Equals blkdiag(conj(dict), dict) right-multiplied by the interleaving
    permutation; the dense product is kept as a test oracle only.
    """
    base = build_dictionary(grid, n_elements)
    n = grid.size
    mat = np.zeros((2 * n_elements, 2 * n), dtype=np.complex128)
    mat[:n_elements, 0::2] = base.conj()
    mat[n_elements:, 1::2] = base
    return BlockDictionary(mat, grid, n_elements)
