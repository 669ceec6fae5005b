"""Shared test utilities: random instances, synthetic image corpora, oracles."""

from __future__ import annotations

import struct

import numpy as np

from sdnnbench.model import (
    FeatureBatch,
    LayerWeights,
    NetworkModel,
    SparseMatrix,
)


def csr_from_mask(mask: np.ndarray, values: np.ndarray | None = None) -> SparseMatrix:
    """Build a canonical SparseMatrix from a boolean mask (+ optional values)."""
    n_rows, n_cols = mask.shape
    counts = mask.sum(axis=1)
    offsets = np.zeros(n_rows + 1, np.int64)
    np.cumsum(counts, out=offsets[1:])
    cols = np.nonzero(mask)[1].astype(np.int64)
    if values is None:
        vals = np.ones(cols.size)
    else:
        vals = np.asarray(values, dtype=np.float64)[mask]
    return SparseMatrix(n_rows, n_cols, offsets, cols, vals, check=True)


def random_sparse(rng, n_rows, n_cols, density, lo=-1.0, hi=1.0) -> SparseMatrix:
    """Random sparse matrix with values in [lo, hi] away from zero."""
    mask = rng.random((n_rows, n_cols)) < density
    vals = rng.uniform(lo, hi, size=(n_rows, n_cols))
    vals[vals == 0.0] = 0.5
    return csr_from_mask(mask, vals)


def random_model(rng, neurons, layers, density=0.3) -> NetworkModel:
    """Heterogeneous random weights and biases: nothing repetitive to exploit."""
    stack = []
    for _ in range(layers):
        w = random_sparse(rng, neurons, neurons, density)
        stack.append(LayerWeights(w, float(rng.uniform(-0.5, 0.2))))
    return NetworkModel(neurons_per_layer=neurons, layers=tuple(stack))


def random_batch(rng, n_rows, n_cols, density=0.3) -> FeatureBatch:
    """Binary feature batch like the challenge inputs (all stored values 1)."""
    return FeatureBatch(csr_from_mask(rng.random((n_rows, n_cols)) < density))


def idx_bytes(pixels: np.ndarray) -> bytes:
    """Serialize (count, side, side) uint8 images as an IDX3 stream."""
    count, rows, cols = pixels.shape
    return struct.pack(">IIII", 0x00000803, count, rows, cols) + pixels.tobytes()


def synthetic_digits(count: int, seed: int = 0, side: int = 28) -> np.ndarray:
    """Deterministic digit-like grayscale blobs, shaped like the MNIST corpus.

    A coarse random field is bilinearly upsampled and contrast-stretched so
    the 32x32 thresholded versions carry roughly the foreground density of
    handwritten digits.
    """
    key = np.array([seed, 0x6D6E6973], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    coarse = gen.random((count, 7, 7))
    # separable bilinear 7 -> side with edge clamping
    x = (np.arange(side) + 0.5) * (7 / side) - 0.5
    x0 = np.floor(x).astype(int)
    frac = x - x0
    lo = np.clip(x0, 0, 6)
    hi = np.clip(x0 + 1, 0, 6)
    h = np.zeros((side, 7))
    np.add.at(h, (np.arange(side), lo), 1.0 - frac)
    np.add.at(h, (np.arange(side), hi), frac)
    smooth = h @ coarse @ h.T
    # keep only a central blob, zero the frame like centered digits
    yy, xx = np.mgrid[0:side, 0:side]
    c = (side - 1) / 2.0
    dome = np.clip(1.2 - (((yy - c) ** 2 + (xx - c) ** 2) / (c * c)), 0.0, 1.0)
    field = np.clip((smooth - 0.45) * 4.0, 0.0, 1.0) * dome
    return np.clip(field * 255.0, 0, 255).astype(np.uint8)


def dense_bilinear_resize(image: np.ndarray, target: int) -> np.ndarray:
    """Scalar-loop bilinear resize (half-pixel centers, edge clamp).

    Independent reference for the vectorized implementation under test.
    """
    src = image.shape[0]
    out = np.zeros((target, target))
    for u in range(target):
        for v in range(target):
            y = (u + 0.5) * (src / target) - 0.5
            x = (v + 0.5) * (src / target) - 0.5
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            fy, fx = y - y0, x - x0
            y0c, y1c = min(max(y0, 0), src - 1), min(max(y0 + 1, 0), src - 1)
            x0c, x1c = min(max(x0, 0), src - 1), min(max(x0 + 1, 0), src - 1)
            out[u, v] = (
                image[y0c, x0c] * (1 - fy) * (1 - fx)
                + image[y0c, x1c] * (1 - fy) * fx
                + image[y1c, x0c] * fy * (1 - fx)
                + image[y1c, x1c] * fy * fx
            )
    return out


def matrices_identical(a: SparseMatrix, b: SparseMatrix) -> bool:
    """Bit-exact CSR equality, including value bytes."""
    return (
        a.shape == b.shape
        and np.array_equal(a.row_offsets, b.row_offsets)
        and np.array_equal(a.col_indices, b.col_indices)
        and a.values.tobytes() == b.values.tobytes()
    )
