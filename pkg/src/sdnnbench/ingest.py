"""Input ingestion and every on-disk format.

Covers the IDX image container, the resize/threshold/flatten preprocessing
that turns images into sparse feature rows, the 1-based triple TSV format,
a checksummed binary container for fast loading, the truth-category list,
and the layer-file naming convention for model directories.

All round trips are lossless: write -> read -> write is byte-identical.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import (
    BoundsError,
    CapacityError,
    ChecksumError,
    FormatError,
    ParameterError,
    ParseError,
    VersionError,
)
from .model import (
    INDEX_DTYPE,
    CategorySet,
    FeatureBatch,
    LayerWeights,
    NetworkModel,
    SparseMatrix,
    build_from_arrays,
)
from .radixnet import BIAS_BY_NEURONS

__all__ = [
    "ImageSet",
    "TARGET_SIDES",
    "read_idx",
    "load_idx",
    "resize_threshold_flatten",
    "write_tsv",
    "read_tsv",
    "write_binary",
    "read_binary",
    "write_truth",
    "read_truth",
    "layer_file_name",
    "write_model_dir",
    "load_model_dir",
    "read_matrix_auto",
    "write_feature_batch",
]

IDX3_MAGIC = 0x00000803
TARGET_SIDES = (32, 64, 128, 256)

BINARY_MAGIC = b"SDNNSPM\0"
BINARY_VERSION = 1


@dataclass(frozen=True)
class ImageSet:
    """Square grayscale images, intensities 0..255."""

    count: int
    side: int
    pixels: np.ndarray  # uint8, shape (count, side, side)


def read_idx(source: BinaryIO) -> ImageSet:
    """Parse an IDX3 unsigned-byte image file (the MNIST container)."""
    header = source.read(16)
    if len(header) < 16:
        raise FormatError("IDX header truncated")
    magic, count, rows, cols = struct.unpack(">IIII", header)
    if magic != IDX3_MAGIC:
        raise FormatError(f"bad IDX magic 0x{magic:08x}, expected 0x{IDX3_MAGIC:08x}")
    if rows != cols:
        raise FormatError(f"images are {rows}x{cols}, expected square")
    payload = source.read(count * rows * cols + 1)
    if len(payload) < count * rows * cols:
        raise FormatError(
            f"IDX payload truncated: {len(payload)} bytes for {count} "
            f"{rows}x{cols} images"
        )
    if len(payload) > count * rows * cols:
        raise FormatError("IDX payload has trailing bytes")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    pixels = pixels.copy()
    pixels.flags.writeable = False
    return ImageSet(count=count, side=rows, pixels=pixels)


def load_idx(path) -> ImageSet:
    """Open an IDX3 file, transparently handling gzip."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return read_idx(fh)


def _interp_matrix(src: int, dst: int) -> np.ndarray:
    """Bilinear interpolation weights from src samples to dst samples.

    Half-pixel-center convention with edge clamping, the standard image
    resize geometry.
    """
    h = np.zeros((dst, src))
    x = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    x0 = np.floor(x).astype(np.int64)
    frac = x - x0
    lo = np.clip(x0, 0, src - 1)
    hi = np.clip(x0 + 1, 0, src - 1)
    np.add.at(h, (np.arange(dst), lo), 1.0 - frac)
    np.add.at(h, (np.arange(dst), hi), frac)
    return h


def resize_threshold_flatten(images: ImageSet, target_side: int) -> FeatureBatch:
    """Resize, binarize at 0.5, and flatten images into sparse feature rows.

    Intensities are normalized to [0, 1], bilinearly resampled to
    target_side x target_side, thresholded (>= 0.5 becomes 1), and flattened
    row-major so pixel (r, c) lands in column r * side + c (0-based).
    """
    if target_side not in TARGET_SIDES:
        raise ParameterError(
            f"target side {target_side} is not one of {TARGET_SIDES}"
        )
    t = target_side
    h = _interp_matrix(images.side, t)
    chunk = max(1, (1 << 24) // (t * t))
    offsets = np.zeros(images.count + 1, INDEX_DTYPE)
    col_parts = []
    for start in range(0, images.count, chunk):
        block = images.pixels[start:start + chunk].astype(np.float64) / 255.0
        resized = h @ block @ h.T  # (t, side) @ (n, side, side) @ (side, t)
        mask = (resized >= 0.5).reshape(resized.shape[0], t * t)
        counts = mask.sum(axis=1)
        offsets[start + 1:start + 1 + counts.size] = counts
        col_parts.append(np.nonzero(mask)[1].astype(INDEX_DTYPE))
    np.cumsum(offsets, out=offsets)
    cols = np.concatenate(col_parts) if col_parts else np.empty(0, INDEX_DTYPE)
    data = SparseMatrix(
        images.count, t * t, offsets, cols, np.ones(cols.size), check=False
    )
    return FeatureBatch(data)


def _format_value(v: float) -> str:
    # integers print without a decimal point; everything else uses the
    # shortest decimal that round-trips
    if v.is_integer():
        return str(int(v))
    return repr(v)


def write_tsv(m: SparseMatrix, sink: BinaryIO) -> None:
    """One nonzero per line as 1-based "row<TAB>col<TAB>value"."""
    rows = np.repeat(np.arange(1, m.n_rows + 1, dtype=INDEX_DTYPE), m.row_counts())
    cols = m.col_indices
    vals = m.values
    cache: dict[float, str] = {}
    out = []
    for i in range(m.nnz):
        v = float(vals[i])
        s = cache.get(v)
        if s is None:
            s = _format_value(v)
            cache[v] = s
        out.append(f"{rows[i]}\t{cols[i] + 1}\t{s}\n")
        if len(out) >= 65536:
            sink.write("".join(out).encode("ascii"))
            out.clear()
    if out:
        sink.write("".join(out).encode("ascii"))


def read_tsv(source: BinaryIO, n_rows: int, n_cols: int) -> SparseMatrix:
    """Parse triple TSV into a canonical matrix; input line order is free."""
    raw = source.read()
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    n = len(lines)
    rows = np.empty(n, INDEX_DTYPE)
    cols = np.empty(n, INDEX_DTYPE)
    vals = np.empty(n, np.float64)
    for i, line in enumerate(lines):
        parts = line.split(b"\t")
        if len(parts) != 3:
            raise ParseError(
                f"expected 3 tab-separated fields, got {len(parts)}", line=i + 1
            )
        try:
            rows[i] = int(parts[0])
            cols[i] = int(parts[1])
            vals[i] = float(parts[2])
        except ValueError as exc:
            raise ParseError(str(exc), line=i + 1) from None
    try:
        return build_from_arrays(rows, cols, vals, n_rows, n_cols)
    except (BoundsError, ValueError) as exc:
        raise type(exc)(f"{exc} (while reading TSV)") from None


def _checksum(parts) -> int:
    digest = hashlib.blake2b(digest_size=8)
    for p in parts:
        digest.update(p)
    return int.from_bytes(digest.digest(), "little")


def write_binary(m: SparseMatrix, sink: BinaryIO) -> None:
    """Binary container: magic, version, counts, checksum, then raw arrays.

    Arrays are little-endian: u64 row offsets, u32 column indices, f64
    values.  The checksum is a 64-bit BLAKE2b over the payload.
    """
    if m.n_cols > 0xFFFFFFFF:
        raise CapacityError("column indices exceed the u32 binary format")
    payload = (
        m.row_offsets.astype("<u8").tobytes(),
        m.col_indices.astype("<u4").tobytes(),
        m.values.astype("<f8").tobytes(),
    )
    header = BINARY_MAGIC + struct.pack(
        "<IQQQQ", BINARY_VERSION, m.n_rows, m.n_cols, m.nnz, _checksum(payload)
    )
    sink.write(header)
    for p in payload:
        sink.write(p)


def read_binary(source: BinaryIO) -> SparseMatrix:
    """Read the binary container back; rejects corruption via checksum."""
    header = source.read(8 + 4 + 8 * 4)
    if len(header) < 44 or header[:8] != BINARY_MAGIC:
        raise FormatError("not a sparse-matrix binary container")
    version, n_rows, n_cols, nnz, stored = struct.unpack("<IQQQQ", header[8:])
    if version != BINARY_VERSION:
        raise VersionError(f"container version {version}, supported {BINARY_VERSION}")
    want = 8 * (n_rows + 1) + 4 * nnz + 8 * nnz
    payload = source.read(want + 1)
    if len(payload) != want:
        raise FormatError(
            f"binary payload is {len(payload)} bytes, expected {want}"
        )
    if _checksum((payload,)) != stored:
        raise ChecksumError("binary payload checksum mismatch")
    off_end = 8 * (n_rows + 1)
    col_end = off_end + 4 * nnz
    offsets = np.frombuffer(payload[:off_end], dtype="<u8").astype(INDEX_DTYPE)
    cols = np.frombuffer(payload[off_end:col_end], dtype="<u4").astype(INDEX_DTYPE)
    vals = np.frombuffer(payload[col_end:], dtype="<f8").astype(np.float64)
    return SparseMatrix(n_rows, n_cols, offsets, cols, vals, check=True)


def write_truth(categories: CategorySet, sink: BinaryIO) -> None:
    """One ascending 1-based image index per line."""
    sink.write("".join(f"{i}\n" for i in categories).encode("ascii"))


def read_truth(source: BinaryIO) -> CategorySet:
    raw = source.read()
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    indices = []
    prev = 0
    for i, line in enumerate(lines):
        try:
            idx = int(line)
        except ValueError:
            raise ParseError(f"not an integer: {line!r}", line=i + 1) from None
        if idx < 1:
            raise ParseError(f"index {idx} is below 1", line=i + 1)
        if idx == prev:
            raise ParseError(f"duplicate index {idx}", line=i + 1)
        if idx < prev:
            raise ParseError(f"index {idx} breaks ascending order", line=i + 1)
        indices.append(idx)
        prev = idx
    return CategorySet(indices)


# --- model directories -----------------------------------------------------
#
# One file per layer, n<N>-l<t>.tsv (or .bin) inside a neuron<N>/ directory,
# mirroring the public challenge layout so downloaded files drop in.

_LAYER_RE = re.compile(r"^n(\d+)-l(\d+)\.(tsv|bin)$")


def layer_file_name(neurons: int, layer: int, fmt: str = "tsv") -> str:
    return f"n{neurons}-l{layer}.{fmt}"


def write_model_dir(layers, neurons: int, out_dir, fmt: str = "tsv") -> Path:
    """Write layer matrices into out_dir/neuron<N>/; returns that directory.

    ``layers`` may be any iterable of SparseMatrix, so generation can stream.
    """
    if fmt not in ("tsv", "bin", "both"):
        raise ParameterError(f"unknown model format {fmt!r}")
    target = Path(out_dir) / f"neuron{neurons}"
    target.mkdir(parents=True, exist_ok=True)
    count = 0
    for t, matrix in enumerate(layers, start=1):
        if fmt in ("tsv", "both"):
            with open(target / layer_file_name(neurons, t, "tsv"), "wb") as fh:
                write_tsv(matrix, fh)
        if fmt in ("bin", "both"):
            with open(target / layer_file_name(neurons, t, "bin"), "wb") as fh:
                write_binary(matrix, fh)
        count += 1
    if count == 0:
        raise ParameterError("no layers to write")
    return target


def _discover_layers(model_dir: Path) -> tuple[int, list[tuple[int, Path]]]:
    candidates = {}
    neurons = None
    for path in sorted(model_dir.iterdir()):
        m = _LAYER_RE.match(path.name)
        if not m:
            continue
        n, t, ext = int(m.group(1)), int(m.group(2)), m.group(3)
        if neurons is None:
            neurons = n
        elif n != neurons:
            raise FormatError(
                f"mixed neuron counts in {model_dir}: {neurons} and {n}"
            )
        # prefer binary when both forms exist
        if t not in candidates or ext == "bin":
            candidates[t] = path
    if neurons is None:
        raise FormatError(f"no layer files (n<N>-l<t>.tsv/.bin) in {model_dir}")
    layers = sorted(candidates.items())
    expected = list(range(1, len(layers) + 1))
    if [t for t, _ in layers] != expected:
        raise FormatError(
            f"layer files in {model_dir} are not contiguous from 1"
        )
    return neurons, layers


def resolve_model_dir(path) -> Path:
    """Accept either the neuron<N> directory itself or its parent."""
    path = Path(path)
    if not path.is_dir():
        raise FormatError(f"model directory {path} does not exist")
    if any(_LAYER_RE.match(p.name) for p in path.iterdir()):
        return path
    nested = [p for p in sorted(path.iterdir())
              if p.is_dir() and p.name.startswith("neuron")]
    if len(nested) == 1:
        return nested[0]
    raise FormatError(f"{path} holds no layer files and no unique neuron<N>/ dir")


def load_model_dir(path, bias: float | None = None) -> NetworkModel:
    """Load a model directory; bias comes from the table unless overridden."""
    model_dir = resolve_model_dir(path)
    neurons, layer_paths = _discover_layers(model_dir)
    if bias is None:
        if neurons not in BIAS_BY_NEURONS:
            raise ParameterError(
                f"no table bias for {neurons} neurons; pass an explicit bias"
            )
        bias = BIAS_BY_NEURONS[neurons]
    layers = []
    for _, p in layer_paths:
        with open(p, "rb") as fh:
            if p.suffix == ".bin":
                m = read_binary(fh)
            else:
                m = read_tsv(fh, neurons, neurons)
        layers.append(LayerWeights(m, float(bias)))
    return NetworkModel(neurons_per_layer=neurons, layers=tuple(layers))


def read_matrix_auto(path, n_rows: int | None = None, n_cols: int | None = None) -> SparseMatrix:
    """Read a matrix file by extension: .bin is self-describing, .tsv needs
    extents (n_rows defaults to the largest row index seen)."""
    path = Path(path)
    with open(path, "rb") as fh:
        if path.suffix == ".bin":
            return read_binary(fh)
        if n_cols is None:
            raise ParameterError("reading TSV requires the column count")
        if n_rows is not None:
            return read_tsv(fh, n_rows, n_cols)
        raw = fh.read()
    # two-pass: size the matrix off the data, then parse strictly
    max_row = 0
    for i, line in enumerate(raw.split(b"\n")):
        if line:
            try:
                max_row = max(max_row, int(line.split(b"\t", 1)[0]))
            except ValueError as exc:
                raise ParseError(str(exc), line=i + 1) from None
    return read_tsv(io.BytesIO(raw), max_row, n_cols)


def write_feature_batch(batch: FeatureBatch, path, fmt: str = "tsv") -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        if fmt == "bin":
            write_binary(batch.data, fh)
        elif fmt == "tsv":
            write_tsv(batch.data, fh)
        else:
            raise ParameterError(f"unknown feature format {fmt!r}")
