"""Synthetic sparse DNN topology generation.

Builds mixed-radix butterfly bases, expands them with uniform Kronecker
products, deepens them by permutation conjugation, then assigns a constant
weight value and a per-network bias to turn the topology into a model.

Every operation is seed-deterministic: the permutation for depth slot t is
drawn from its own counter-based stream keyed on (seed, t), so layers can
be produced independently and in any order with identical bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import CapacityError, ParameterError
from .model import INDEX_DTYPE, LayerWeights, NetworkModel, SparseMatrix

__all__ = [
    "RadixSpec",
    "KroneckerSpec",
    "GeneratorConfig",
    "BIAS_BY_NEURONS",
    "DEFAULT_WEIGHT_VALUE",
    "mixed_radix_butterfly",
    "kronecker_expand",
    "deepen",
    "assign_weights",
    "count_connections",
    "generate_layers",
    "generate_model",
]

# bias per neuron count for the published network sizes
BIAS_BY_NEURONS = {1024: -0.30, 4096: -0.35, 16384: -0.40, 65536: -0.45}

# nonzero weight value; a convention of this toolkit, tuned so that binary
# inputs with 32-connection fan-in keep pre-activations well inside the clamp
DEFAULT_WEIGHT_VALUE = 0.0625

# radix/kron presets keyed by neuron count: 2^s base stages, uniform factor 16
PRESETS = {
    1024: ([2] * 6, 16),
    4096: ([2] * 8, 16),
    16384: ([2] * 10, 16),
    65536: ([2] * 12, 16),
}

_MAX_NEURONS = 1 << 24  # adjacency indices must stay comfortably in int64 keys


@dataclass(frozen=True)
class RadixSpec:
    """Per-stage fan-out factors of the butterfly base."""

    radices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "radices", tuple(int(r) for r in self.radices))
        if len(self.radices) < 1:
            raise ParameterError("radix set must not be empty")
        for r in self.radices:
            if r < 2:
                raise ParameterError(f"radix {r} is below 2")

    @property
    def neurons(self) -> int:
        return math.prod(self.radices)

    @property
    def n_stages(self) -> int:
        return len(self.radices)


@dataclass(frozen=True)
class KroneckerSpec:
    """Uniform expansion factors, one per neuron layer (stages + 1)."""

    factors: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(int(f) for f in self.factors))
        if len(self.factors) < 2:
            raise ParameterError("kronecker set needs at least two factors")
        if any(f < 1 for f in self.factors):
            raise ParameterError("kronecker factors must be >= 1")
        if len(set(self.factors)) != 1:
            raise ParameterError("kronecker factors must be uniform")

    @property
    def factor(self) -> int:
        return self.factors[0]

    @classmethod
    def uniform(cls, factor: int, n_stages: int) -> "KroneckerSpec":
        return cls((factor,) * (n_stages + 1))


@dataclass(frozen=True)
class GeneratorConfig:
    """Everything needed to reproduce a generated network bit-for-bit."""

    radix: RadixSpec
    kron: KroneckerSpec
    target_layers: int
    weight_value: float = DEFAULT_WEIGHT_VALUE
    rng_seed: int = 0

    def __post_init__(self):
        if len(self.kron.factors) != self.radix.n_stages + 1:
            raise ParameterError(
                f"kronecker set length {len(self.kron.factors)} does not match "
                f"{self.radix.n_stages} base stages + 1"
            )
        if self.target_layers < 1 or self.target_layers % self.radix.n_stages:
            raise ParameterError(
                f"target layers {self.target_layers} is not a positive multiple "
                f"of the base depth {self.radix.n_stages}"
            )
        if not (self.weight_value > 0 and math.isfinite(self.weight_value)):
            raise ParameterError("weight value must be a positive finite real")

    @property
    def neurons(self) -> int:
        return self.radix.neurons * self.kron.factor

    @classmethod
    def preset(cls, neurons, target_layers, weight_value=DEFAULT_WEIGHT_VALUE, rng_seed=0):
        if neurons not in PRESETS:
            raise ParameterError(
                f"no preset for {neurons} neurons; supply radix and kron sets"
            )
        radices, k = PRESETS[neurons]
        radix = RadixSpec(tuple(radices))
        return cls(radix, KroneckerSpec.uniform(k, radix.n_stages),
                   target_layers, weight_value, rng_seed)


def mixed_radix_butterfly(spec: RadixSpec) -> list[SparseMatrix]:
    """Stage adjacency matrices of the mixed-radix butterfly base.

    Stage s (1-based) connects i to j iff the mixed-radix expansions of i
    and j, least-significant digit first with radix r_s at digit s, agree
    everywhere except possibly at digit s.  Every row and column of stage s
    then has exactly r_s ones, and the product over all stages is a constant
    matrix (equal path counts).
    """
    n = spec.neurons
    if n > _MAX_NEURONS:
        raise CapacityError(f"{n} neurons exceeds generator capacity {_MAX_NEURONS}")
    stages = []
    place = 1
    ids = np.arange(n, dtype=INDEX_DTYPE)
    for r in spec.radices:
        digit = (ids // place) % r
        base = ids - digit * place  # digit s zeroed, all others kept
        # row i connects to base + v*place for v = 0..r-1, ascending
        cols = (base[:, None] + np.arange(r, dtype=INDEX_DTYPE)[None, :] * place).ravel()
        offsets = np.arange(n + 1, dtype=INDEX_DTYPE) * r
        stages.append(
            SparseMatrix(n, n, offsets, cols, np.ones(n * r), check=False)
        )
        place *= r
    return stages


def kronecker_expand(base: list[SparseMatrix], k: int) -> list[SparseMatrix]:
    """Kronecker product of every stage with the k x k all-ones matrix."""
    if k < 1:
        raise ParameterError(f"kronecker factor {k} is below 1")
    if k == 1:
        return list(base)
    out = []
    for stage in base:
        if stage.n_rows != stage.n_cols:
            raise ParameterError("base stages must be square")
        n = stage.n_rows
        if n * k > _MAX_NEURONS:
            raise CapacityError(f"{n * k} neurons exceeds generator capacity")
        counts = stage.row_counts()
        # row i*k+a copies row i with every col j fanned out to j*k .. j*k+k-1
        cols_fanned = (stage.col_indices[:, None] * k
                       + np.arange(k, dtype=INDEX_DTYPE)[None, :]).ravel()
        row_nnz = np.repeat(counts * k, k)
        offsets = np.zeros(n * k + 1, INDEX_DTYPE)
        np.cumsum(row_nnz, out=offsets[1:])
        # expand per-row blocks: row i contributes its fanned cols k times
        starts = stage.row_offsets[:-1] * k
        ends = stage.row_offsets[1:] * k
        blocks = [cols_fanned[s:e] for s, e in zip(starts, ends)]
        cols = np.concatenate([b for blk in blocks for b in [blk] * k])
        out.append(
            SparseMatrix(n * k, n * k, offsets, cols, np.ones(cols.size), check=False)
        )
    return out


def _permutation(seed: int, slot: int, n: int) -> np.ndarray:
    """Uniform permutation of range(n) from a counter-based stream (seed, slot)."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, slot], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.permutation(n).astype(INDEX_DTYPE)


def _conjugate(stage: SparseMatrix, perm_in: np.ndarray | None,
               perm_out: np.ndarray | None) -> SparseMatrix:
    """Relabel rows by perm_in and columns by perm_out: edge (a, b) moves to
    (perm_in[a], perm_out[b])."""
    n = stage.n_rows
    counts = stage.row_counts()
    src_rows = np.repeat(np.arange(n, dtype=INDEX_DTYPE), counts)
    rows = src_rows if perm_in is None else perm_in[src_rows]
    cols = stage.col_indices if perm_out is None else perm_out[stage.col_indices]
    order = np.argsort(rows * np.int64(n) + cols, kind="stable")
    new_counts = np.zeros(n, INDEX_DTYPE)
    np.add.at(new_counts, rows, 1)
    offsets = np.zeros(n + 1, INDEX_DTYPE)
    np.cumsum(new_counts, out=offsets[1:])
    return SparseMatrix(n, n, offsets, cols[order], stage.values[order], check=False)


def _deepen_with_perms(base: list[SparseMatrix], perms: list[np.ndarray | None]) -> list[SparseMatrix]:
    """Conjugate base stages with an explicit permutation sequence.

    ``perms[t]`` permutes the neuron layer between output layers t and t+1;
    ``perms[0]`` is the input-side permutation (identity for the challenge
    construction, passed as None).
    """
    n_stages = len(base)
    out = []
    for t in range(1, len(perms)):
        stage = base[(t - 1) % n_stages]
        out.append(_conjugate(stage, perms[t - 1], perms[t]))
    return out


def deepen(base: list[SparseMatrix], target_layers: int, rng_seed: int) -> list[SparseMatrix]:
    """Grow the base to target depth by permuting and appending.

    Output layer t is the corresponding base stage conjugated by the random
    neuron relabelings on either side, so per-row/column degrees and the
    equal-path-count property survive, and the input-side ordering (layer 0)
    stays fixed.
    """
    n_stages = len(base)
    if target_layers < 1 or target_layers % n_stages:
        raise ParameterError(
            f"target layers {target_layers} is not a positive multiple of "
            f"the base depth {n_stages}"
        )
    n = base[0].n_rows
    perms: list[np.ndarray | None] = [None]
    perms += [_permutation(rng_seed, t, n) for t in range(1, target_layers + 1)]
    return _deepen_with_perms(base, perms)


def assign_weights(topology: list[SparseMatrix], weight_value: float,
                   neurons: int, bias: float | None = None) -> NetworkModel:
    """Turn a binary topology into a model: constant weights, table bias.

    The bias comes from the published table keyed on the neuron count;
    other sizes need an explicit bias.
    """
    if bias is None:
        if neurons not in BIAS_BY_NEURONS:
            raise ParameterError(
                f"no table bias for {neurons} neurons; pass bias explicitly"
            )
        bias = BIAS_BY_NEURONS[neurons]
    layers = []
    for stage in topology:
        weights = SparseMatrix(
            stage.n_rows,
            stage.n_cols,
            stage.row_offsets,
            stage.col_indices,
            np.full(stage.nnz, weight_value),
            check=False,
        )
        layers.append(LayerWeights(weights, float(bias)))
    return NetworkModel(neurons_per_layer=neurons, layers=tuple(layers))


def count_connections(model: NetworkModel) -> int:
    """Total nonzero weights over all layers."""
    return sum(layer.weights.nnz for layer in model.layers)


def generate_layers(config: GeneratorConfig) -> Iterator[SparseMatrix]:
    """Yield the weighted layer matrices one at a time, in depth order.

    Streaming keeps peak memory at O(nnz per layer) so deep networks can be
    written straight to disk.
    """
    expanded = kronecker_expand(mixed_radix_butterfly(config.radix), config.kron.factor)
    n = expanded[0].n_rows
    n_stages = len(expanded)
    prev: np.ndarray | None = None
    for t in range(1, config.target_layers + 1):
        cur = _permutation(config.rng_seed, t, n)
        stage = _conjugate(expanded[(t - 1) % n_stages], prev, cur)
        yield SparseMatrix(
            n, n, stage.row_offsets, stage.col_indices,
            np.full(stage.nnz, config.weight_value), check=False,
        )
        prev = cur


def generate_model(config: GeneratorConfig, bias: float | None = None) -> NetworkModel:
    """Materialize the full model in memory (desk-scale sizes)."""
    neurons = config.neurons
    est = 32 * config.target_layers * neurons  # challenge nets: degree 32
    if neurons > 16384 and est > 300_000_000:
        raise CapacityError(
            f"{neurons} neurons x {config.target_layers} layers will not fit in "
            "desk-scale memory; use generate_layers"
        )
    if bias is None and neurons in BIAS_BY_NEURONS:
        bias = BIAS_BY_NEURONS[neurons]
    if bias is None:
        raise ParameterError(f"no table bias for {neurons} neurons; pass bias explicitly")
    layers = tuple(
        LayerWeights(m, float(bias)) for m in generate_layers(config)
    )
    return NetworkModel(neurons_per_layer=neurons, layers=layers)
