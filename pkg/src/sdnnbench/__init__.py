"""Sparse DNN inference benchmark toolkit.

Generates synthetic sparse networks, preprocesses image corpora into sparse
feature batches, runs the timed inference kernel in serial and parallel
modes, and verifies and reports the results.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    CategorySet,
    FeatureBatch,
    LayerWeights,
    NetworkModel,
    SparseMatrix,
    Triple,
    build_from_triples,
    to_triples,
)
