"""Sparse-matrix and network data model shared by every other module.

Matrices are compressed sparse row with a canonical ordering: within each
row the column indices are strictly increasing and no explicit zeros are
stored.  Internal indices are 0-based; triples (and every file format built
on them) are 1-based.  The conversion happens exactly once, here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import BoundsError, DuplicateError, ShapeError

__all__ = [
    "Triple",
    "SparseMatrix",
    "LayerWeights",
    "NetworkModel",
    "FeatureBatch",
    "CategorySet",
    "build_from_arrays",
    "build_from_triples",
    "to_triples",
    "validate",
]

INDEX_DTYPE = np.int64
VALUE_DTYPE = np.float64


@dataclass(frozen=True)
class Triple:
    """One nonzero as (row, col, value), 1-based."""

    row: int
    col: int
    value: float


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


class SparseMatrix:
    """Immutable CSR matrix of 64-bit reals.

    ``row_offsets`` has length ``n_rows + 1``; row ``i`` owns the slice
    ``[row_offsets[i], row_offsets[i+1])`` of ``col_indices`` / ``values``.
    """

    __slots__ = ("n_rows", "n_cols", "row_offsets", "col_indices", "values")

    def __init__(self, n_rows, n_cols, row_offsets, col_indices, values, check=True):
        row_offsets = np.asarray(row_offsets, dtype=INDEX_DTYPE)
        col_indices = np.asarray(col_indices, dtype=INDEX_DTYPE)
        values = np.asarray(values, dtype=VALUE_DTYPE)
        object.__setattr__(self, "n_rows", int(n_rows))
        object.__setattr__(self, "n_cols", int(n_cols))
        object.__setattr__(self, "row_offsets", _frozen(row_offsets))
        object.__setattr__(self, "col_indices", _frozen(col_indices))
        object.__setattr__(self, "values", _frozen(values))
        if check:
            problem = validate(self)
            if problem is not None:
                raise ValueError(f"invalid SparseMatrix: {problem}")

    def __setattr__(self, name, value):
        raise AttributeError("SparseMatrix is immutable")

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices and values of row ``i`` (0-based), as views."""
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    def row_counts(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_rows, self.n_cols), dtype=VALUE_DTYPE)
        rows = np.repeat(np.arange(self.n_rows), self.row_counts())
        dense[rows, self.col_indices] = self.values
        return dense

    @classmethod
    def empty(cls, n_rows: int, n_cols: int) -> "SparseMatrix":
        return cls(
            n_rows,
            n_cols,
            np.zeros(n_rows + 1, INDEX_DTYPE),
            np.empty(0, INDEX_DTYPE),
            np.empty(0, VALUE_DTYPE),
            check=False,
        )

    def __eq__(self, other) -> bool:
        # bit-exact: value comparison goes through the raw bytes
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
            and self.values.tobytes() == other.values.tobytes()
        )

    def __hash__(self):
        return hash((self.shape, self.nnz))

    def __repr__(self):
        return f"SparseMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz})"


@dataclass(frozen=True)
class LayerWeights:
    """One N x N weight matrix plus its scalar bias."""

    weights: SparseMatrix
    bias: float

    def __post_init__(self):
        if self.weights.n_rows != self.weights.n_cols:
            raise ShapeError(
                f"layer weights must be square, got {self.weights.shape}"
            )


@dataclass(frozen=True)
class NetworkModel:
    """Ordered stack of square weight layers over a fixed neuron count."""

    neurons_per_layer: int
    layers: tuple[LayerWeights, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) < 1:
            raise ShapeError("a model needs at least one layer")
        n = self.neurons_per_layer
        for idx, layer in enumerate(self.layers):
            if layer.weights.shape != (n, n):
                raise ShapeError(
                    f"layer {idx + 1} is {layer.weights.shape}, expected {(n, n)}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class FeatureBatch:
    """Sparse (images x neurons) activation matrix."""

    data: SparseMatrix

    @property
    def n_images(self) -> int:
        return self.data.n_rows

    @property
    def n_neurons(self) -> int:
        return self.data.n_cols


class CategorySet:
    """Sorted set of 1-based image row indices."""

    __slots__ = ("image_rows",)

    def __init__(self, image_rows: Iterable[int]):
        arr = np.asarray(sorted(set(int(i) for i in image_rows)), dtype=INDEX_DTYPE)
        if arr.size and arr[0] < 1:
            raise BoundsError(f"image index {arr[0]} is below 1")
        object.__setattr__(self, "image_rows", _frozen(arr))

    def __setattr__(self, name, value):
        raise AttributeError("CategorySet is immutable")

    def __len__(self) -> int:
        return int(self.image_rows.size)

    def __iter__(self) -> Iterator[int]:
        return iter(int(i) for i in self.image_rows)

    def __contains__(self, idx) -> bool:
        pos = np.searchsorted(self.image_rows, idx)
        return bool(pos < self.image_rows.size and self.image_rows[pos] == idx)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CategorySet):
            return NotImplemented
        return np.array_equal(self.image_rows, other.image_rows)

    def __hash__(self):
        return hash(self.image_rows.tobytes())

    def difference(self, other: "CategorySet") -> "CategorySet":
        return CategorySet(np.setdiff1d(self.image_rows, other.image_rows))

    def __repr__(self):
        inner = ", ".join(str(i) for i in self.image_rows[:8])
        if len(self) > 8:
            inner += ", ..."
        return f"CategorySet({{{inner}}}, n={len(self)})"


def build_from_arrays(rows, cols, vals, n_rows: int, n_cols: int) -> SparseMatrix:
    """Array form of :func:`build_from_triples`; rows/cols are 1-based."""
    rows = np.asarray(rows, dtype=INDEX_DTYPE)
    cols = np.asarray(cols, dtype=INDEX_DTYPE)
    vals = np.asarray(vals, dtype=VALUE_DTYPE)
    if rows.size == 0:
        return SparseMatrix.empty(n_rows, n_cols)

    bad = np.nonzero(
        (rows < 1) | (rows > n_rows) | (cols < 1) | (cols > n_cols)
    )[0]
    if bad.size:
        i = int(bad[0])
        raise BoundsError(
            f"triple ({rows[i]}, {cols[i]}, {vals[i]}) outside {n_rows}x{n_cols}"
        )
    odd = np.nonzero(~np.isfinite(vals) | (vals == 0.0))[0]
    if odd.size:
        i = int(odd[0])
        if not math.isfinite(vals[i]):
            raise ValueError(
                f"non-finite value in triple ({rows[i]}, {cols[i]}, {vals[i]})"
            )
        raise ValueError(f"explicit zero in triple ({rows[i]}, {cols[i]}, 0)")

    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    dup = np.nonzero((np.diff(rows) == 0) & (np.diff(cols) == 0))[0]
    if dup.size:
        i = int(dup[0])
        raise DuplicateError(f"duplicate coordinate ({rows[i]}, {cols[i]})")

    offsets = np.zeros(n_rows + 1, INDEX_DTYPE)
    np.add.at(offsets, rows, 1)  # rows are 1-based, which lands counts at [1..n_rows]
    np.cumsum(offsets, out=offsets)
    return SparseMatrix(n_rows, n_cols, offsets, cols - 1, vals, check=False)


def build_from_triples(triples, n_rows: int, n_cols: int) -> SparseMatrix:
    """Assemble a canonical SparseMatrix from 1-based triples.

    Out-of-bounds indices, non-finite or zero values, and duplicate
    coordinates are all rejected; input order does not matter.
    """
    triples = list(triples)
    rows = np.empty(len(triples), INDEX_DTYPE)
    cols = np.empty(len(triples), INDEX_DTYPE)
    vals = np.empty(len(triples), VALUE_DTYPE)
    for i, t in enumerate(triples):
        rows[i], cols[i], vals[i] = t.row, t.col, t.value
    return build_from_arrays(rows, cols, vals, n_rows, n_cols)


def to_triples(m: SparseMatrix) -> list[Triple]:
    """Emit 1-based triples in row-major, column-ascending order."""
    rows = np.repeat(np.arange(1, m.n_rows + 1), m.row_counts())
    return [
        Triple(int(r), int(c) + 1, float(v))
        for r, c, v in zip(rows, m.col_indices, m.values)
    ]


def validate(m: SparseMatrix) -> str | None:
    """Check every SparseMatrix invariant; return the first violation or None."""
    offs = m.row_offsets
    if offs.shape != (m.n_rows + 1,):
        return f"row_offsets length {offs.shape[0]}, expected {m.n_rows + 1}"
    if m.n_rows < 0 or m.n_cols < 0:
        return "negative extent"
    if offs.size and offs[0] != 0:
        return f"row_offsets[0] = {offs[0]}, expected 0"
    drop = np.nonzero(np.diff(offs) < 0)[0]
    if drop.size:
        return f"row_offsets non-monotone at row {int(drop[0])}"
    nnz = int(offs[-1]) if offs.size else 0
    if m.col_indices.shape != (nnz,):
        return f"col_indices length {m.col_indices.shape[0]}, expected nnz {nnz}"
    if m.values.shape != (nnz,):
        return f"values length {m.values.shape[0]}, expected nnz {nnz}"
    if nnz:
        if int(m.col_indices.min()) < 0 or int(m.col_indices.max()) >= m.n_cols:
            j = int(np.nonzero((m.col_indices < 0) | (m.col_indices >= m.n_cols))[0][0])
            return f"column index {int(m.col_indices[j])} out of range at position {j}"
        # strictly increasing inside each row: diff must be positive except
        # where a new row starts
        diffs = np.diff(m.col_indices)
        row_starts = np.zeros(nnz, dtype=bool)
        starts = offs[1:-1]
        row_starts[starts[starts < nnz]] = True
        bad = np.nonzero((diffs <= 0) & ~row_starts[1:])[0]
        if bad.size:
            p = int(bad[0]) + 1
            r = int(np.searchsorted(offs, p, side="right")) - 1
            return f"columns not strictly increasing in row {r} at position {p}"
        notfin = np.nonzero(~np.isfinite(m.values))[0]
        if notfin.size:
            p = int(notfin[0])
            r = int(np.searchsorted(offs, p, side="right")) - 1
            return f"non-finite value at ({r}, {int(m.col_indices[p])})"
        zero = np.nonzero(m.values == 0.0)[0]
        if zero.size:
            p = int(zero[0])
            r = int(np.searchsorted(offs, p, side="right")) - 1
            return f"explicit zero at ({r}, {int(m.col_indices[p])})"
    return None
