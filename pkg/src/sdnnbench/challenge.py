"""Non-kernel challenge steps: categorization, truth verification, the
independent dense oracle, rate arithmetic, and report emission."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import CapacityError, ParameterError, ShapeError
from .model import CategorySet, FeatureBatch, NetworkModel

__all__ = [
    "VerifyReport",
    "BenchReport",
    "REPORT_COLUMNS",
    "categorize",
    "oracle_infer",
    "oracle_infer_batch",
    "verify",
    "rate",
    "emit_report",
]

ORACLE_MAX_NEURONS = 4096
ORACLE_MAX_CELLS = 1 << 28  # batch x neurons, keeps the dense array in memory

REPORT_COLUMNS = (
    "neurons", "layers", "connections", "inputs",
    "seconds", "rate", "mode", "workers", "machine",
)


@dataclass(frozen=True)
class VerifyReport:
    """Outcome of a category comparison, both difference directions."""

    match: bool
    false_positives: CategorySet  # computed minus truth
    false_negatives: CategorySet  # truth minus computed


@dataclass(frozen=True)
class BenchReport:
    """One benchmark record per (neurons, layers) run."""

    neurons: int
    layers: int
    connections: int
    inputs: int
    seconds: float
    rate: float
    mode: str
    workers: int
    machine: str = ""


def categorize(final: FeatureBatch) -> CategorySet:
    """Rows of the final activation matrix holding at least one entry.

    Canonical form stores only positive values, so presence of an entry is
    exactly the "entries > 0" predicate.
    """
    counts = final.data.row_counts()
    return CategorySet((np.nonzero(counts > 0)[0] + 1).tolist())


@njit(cache=True)
def _dense_product(y, w):
    """Naive dense Z = Y * W, shared index ascending per output entry."""
    n, inner = y.shape
    m = w.shape[1]
    z = np.zeros((n, m))
    for i in range(n):
        for k in range(inner):
            yv = y[i, k]
            for j in range(m):
                z[i, j] += yv * w[k, j]
    return z


def oracle_infer(model: NetworkModel, y0: np.ndarray,
                 ymax: float = 32.0) -> np.ndarray:
    """Straightforward dense evaluation of the whole network.

    Used to produce truth categories and to validate the sparse engine;
    accumulation order matches the engine's contract so results agree bit
    for bit.  Desk-scale only.
    """
    y0 = np.asarray(y0, dtype=np.float64)
    if y0.ndim != 2:
        raise ShapeError("oracle input must be a 2-d array")
    n = model.neurons_per_layer
    if y0.shape[1] != n:
        raise ShapeError(
            f"oracle input has {y0.shape[1]} columns, model expects {n}"
        )
    if n > ORACLE_MAX_NEURONS or y0.shape[0] * n > ORACLE_MAX_CELLS:
        raise CapacityError(
            f"oracle limited to {ORACLE_MAX_NEURONS} neurons and "
            f"{ORACLE_MAX_CELLS} dense cells"
        )
    y = y0.copy()
    for layer in model.layers:
        w = layer.weights.to_dense()
        z = _dense_product(y, w)
        y = np.where(z != 0.0, z + layer.bias, 0.0)
        y[y < 0.0] = 0.0
        y[y > ymax] = ymax
    return y


def oracle_infer_batch(model: NetworkModel, y0: FeatureBatch,
                       ymax: float = 32.0) -> tuple[np.ndarray, CategorySet]:
    """Oracle over a sparse batch; returns the dense result and its categories."""
    dense = oracle_infer(model, y0.data.to_dense(), ymax=ymax)
    rows = np.nonzero((dense > 0.0).any(axis=1))[0] + 1
    return dense, CategorySet(rows.tolist())


def verify(computed: CategorySet, truth: CategorySet) -> VerifyReport:
    """Exact set comparison with both difference directions reported."""
    fp = computed.difference(truth)
    fn = truth.difference(computed)
    return VerifyReport(match=(len(fp) == 0 and len(fn) == 0),
                        false_positives=fp, false_negatives=fn)


def rate(inputs: int, connections: int, seconds: float) -> float:
    """Challenge throughput: inputs x connections / seconds."""
    if not seconds > 0:
        raise ParameterError(f"seconds must be positive, got {seconds}")
    return inputs * connections / seconds


def _row(report: BenchReport) -> list:
    return [getattr(report, c) for c in REPORT_COLUMNS]


def emit_report(reports: list[BenchReport], fmt: str, sink) -> None:
    """Write benchmark rows as TSV (header + rows) or JSON (list of objects)."""
    if fmt == "tsv":
        lines = ["\t".join(REPORT_COLUMNS)]
        for r in reports:
            lines.append("\t".join(str(v) for v in _row(r)))
        sink.write(("\n".join(lines) + "\n").encode("ascii"))
    elif fmt == "json":
        payload = [dict(zip(REPORT_COLUMNS, _row(r))) for r in reports]
        sink.write((json.dumps(payload, indent=2, sort_keys=False) + "\n").encode("ascii"))
    else:
        raise ParameterError(f"unknown report format {fmt!r}")
