"""Command-line orchestrator for the challenge workflow.

Subcommands: generate, preprocess, convert, infer, verify, bench.
Configuration precedence is flags over SDNN_* environment variables over
defaults.  Exit codes are a stable contract: 0 success/match, 1 verify
mismatch, 2 usage, 3 I/O or format trouble, 4 dimension mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .challenge import BenchReport, emit_report, rate, verify
from .engine import InferenceConfig, infer_timed, warmup
from .errors import (
    FormatError,
    ParameterError,
    SdnnError,
    ShapeError,
)
from .ingest import (
    TARGET_SIDES,
    load_idx,
    load_model_dir,
    read_binary,
    read_matrix_auto,
    read_truth,
    read_tsv,
    resize_threshold_flatten,
    write_binary,
    write_feature_batch,
    write_model_dir,
    write_truth,
    write_tsv,
)
from .model import FeatureBatch, SparseMatrix
from .radixnet import (
    BIAS_BY_NEURONS,
    DEFAULT_WEIGHT_VALUE,
    GeneratorConfig,
    KroneckerSpec,
    PRESETS,
    RadixSpec,
    generate_layers,
)

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIMENSION = 4

ENV_PREFIX = "SDNN_"


def _env(name: str, cast, fallback):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except ValueError:
        raise ParameterError(f"bad value for {ENV_PREFIX}{name}: {raw!r}") from None


@dataclass
class RunManifest:
    """Reproducibility record written alongside every run's outputs."""

    tool: str
    version: str
    command: str
    model_dir: str | None
    input_path: str | None
    truth_path: str | None
    neurons: int | None
    layers: int | None
    config: dict
    timestamp: str

    def write(self, path: Path) -> None:
        payload = json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"
        path.write_text(payload, encoding="ascii")


def _timestamp() -> str:
    # honors SOURCE_DATE_EPOCH so identical runs produce identical manifests
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = (
        datetime.fromtimestamp(int(epoch), tz=timezone.utc)
        if epoch is not None
        else datetime.now(tz=timezone.utc)
    )
    return moment.isoformat(timespec="seconds")


def _manifest(command, *, model_dir=None, input_path=None, truth_path=None,
              neurons=None, layers=None, **config) -> RunManifest:
    return RunManifest(
        tool="sdnnbench",
        version=__version__,
        command=command,
        model_dir=str(model_dir) if model_dir else None,
        input_path=str(input_path) if input_path else None,
        truth_path=str(truth_path) if truth_path else None,
        neurons=neurons,
        layers=layers,
        config=config,
        timestamp=_timestamp(),
    )


def _parse_radix(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p)
    except ValueError:
        raise ParameterError(f"bad radix list {text!r}") from None


def cmd_generate(args) -> int:
    if args.radix:
        radix = RadixSpec(_parse_radix(args.radix))
        kron = KroneckerSpec.uniform(args.kron or 1, radix.n_stages)
        config = GeneratorConfig(radix, kron, args.layers, args.weight, args.seed)
        bias = args.bias
        if bias is None and config.neurons not in BIAS_BY_NEURONS:
            raise ParameterError(
                f"{config.neurons} neurons has no table bias; pass --bias"
            )
    else:
        if args.neurons is None:
            raise ParameterError("pass --neurons or an explicit --radix list")
        config = GeneratorConfig.preset(args.neurons, args.layers,
                                        args.weight, args.seed)
        bias = args.bias
    neurons = config.neurons

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    connections = 0

    def counted():
        nonlocal connections
        for layer in generate_layers(config):
            connections += layer.nnz
            yield layer

    target = write_model_dir(counted(), neurons, out_dir, fmt=args.format)
    manifest = _manifest(
        "generate", model_dir=target, neurons=neurons, layers=config.target_layers,
        seed=config.rng_seed, weight=config.weight_value,
        bias=bias if bias is not None else BIAS_BY_NEURONS.get(neurons),
        radix=list(config.radix.radices), kron=config.kron.factor,
        format=args.format,
    )
    manifest.write(out_dir / "manifest.json")
    print(f"generated {config.target_layers} layers x {neurons} neurons, "
          f"{connections} connections -> {target}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    images = load_idx(args.images)
    if args.limit is not None:
        if args.limit < 1:
            raise ParameterError("--limit must be >= 1")
        images = type(images)(
            count=min(args.limit, images.count),
            side=images.side,
            pixels=images.pixels[: args.limit],
        )
    batch = resize_threshold_flatten(images, args.side)
    fmt = args.format or ("bin" if str(args.out).endswith(".bin") else "tsv")
    write_feature_batch(batch, args.out, fmt=fmt)
    manifest = _manifest(
        "preprocess", input_path=args.images, neurons=args.side * args.side,
        side=args.side, images=batch.n_images, format=fmt,
        nnz=batch.data.nnz,
    )
    manifest.write(Path(str(args.out) + ".manifest.json"))
    print(f"wrote {batch.n_images} rows x {batch.n_neurons} columns "
          f"({batch.data.nnz} nonzeros) -> {args.out}")
    return EXIT_OK


def cmd_convert(args) -> int:
    src, dst = Path(args.input), Path(args.out)
    with open(src, "rb") as fh:
        if src.suffix == ".bin":
            matrix = read_binary(fh)
        else:
            if args.rows is None or args.cols is None:
                raise ParameterError("converting from TSV needs --rows and --cols")
            matrix = read_tsv(fh, args.rows, args.cols)
    with open(dst, "wb") as fh:
        if dst.suffix == ".bin":
            write_binary(matrix, fh)
        else:
            write_tsv(matrix, fh)
    print(f"converted {src} ({matrix.n_rows}x{matrix.n_cols}, "
          f"nnz={matrix.nnz}) -> {dst}")
    return EXIT_OK


def _load_input(path, neurons, n_rows) -> FeatureBatch:
    matrix = read_matrix_auto(path, n_rows=n_rows, n_cols=neurons)
    if matrix.n_cols != neurons:
        raise ShapeError(
            f"input {path} has {matrix.n_cols} columns, model expects {neurons}"
        )
    return FeatureBatch(matrix)


def cmd_infer(args) -> int:
    model = load_model_dir(args.model, bias=args.bias)
    neurons = model.neurons_per_layer
    y0 = _load_input(args.input, neurons, args.inputs)
    cfg = InferenceConfig(
        ymax=args.ymax, mode=args.mode, workers=args.workers,
        pipeline_stages=args.stages, batch_tile=args.tile,
    )
    _, categories, seconds = infer_timed(model, y0, cfg)

    out_categories = Path(args.out_categories)
    with open(out_categories, "wb") as fh:
        write_truth(categories, fh)

    connections = sum(l.weights.nnz for l in model.layers)
    report = BenchReport(
        neurons=neurons, layers=model.n_layers, connections=connections,
        inputs=y0.n_images, seconds=seconds,
        rate=rate(y0.n_images, connections, seconds),
        mode=cfg.mode, workers=cfg.workers, machine=args.machine,
    )
    if args.out_report:
        with open(args.out_report, "wb") as fh:
            emit_report([report], args.report_format, fh)
    manifest = _manifest(
        "infer", model_dir=args.model, input_path=args.input,
        truth_path=args.truth, neurons=neurons, layers=model.n_layers,
        mode=cfg.mode, workers=cfg.workers, ymax=cfg.ymax,
        stages=cfg.pipeline_stages, tile=cfg.batch_tile,
        bias=args.bias, inputs=y0.n_images, seed=None,
        categories=str(out_categories),
    )
    manifest.write(Path(str(out_categories) + ".manifest.json"))
    print(f"inference: {y0.n_images} inputs x {connections} connections "
          f"in {seconds:.3f}s, rate {report.rate:.3e}, "
          f"{len(categories)} categories")

    if args.truth:
        with open(args.truth, "rb") as fh:
            truth = read_truth(fh)
        outcome = verify(categories, truth)
        if outcome.match:
            print("verification: match")
            return EXIT_OK
        print(f"verification: {len(outcome.false_positives)} false positives, "
              f"{len(outcome.false_negatives)} false negatives")
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_verify(args) -> int:
    with open(args.computed, "rb") as fh:
        computed = read_truth(fh)
    with open(args.truth, "rb") as fh:
        truth = read_truth(fh)
    outcome = verify(computed, truth)
    if outcome.match:
        print(f"match ({len(computed)} categories)")
        return EXIT_OK
    fp = list(outcome.false_positives)
    fn = list(outcome.false_negatives)
    print(f"{len(fp)} false positive(s), {len(fn)} false negative(s)")
    if fp:
        print(f"  false positives (first 10): {fp[:10]}")
    if fn:
        print(f"  false negatives (first 10): {fn[:10]}")
    return EXIT_MISMATCH


def _random_batch(n_rows: int, n_cols: int, density: float, seed: int) -> FeatureBatch:
    """Deterministic binary batch for benchmarking without an image corpus."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, 1 << 32], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    mask = gen.random((n_rows, n_cols)) < density
    counts = mask.sum(axis=1)
    offsets = np.zeros(n_rows + 1, np.int64)
    np.cumsum(counts, out=offsets[1:])
    cols = np.nonzero(mask)[1].astype(np.int64)
    return FeatureBatch(
        SparseMatrix(n_rows, n_cols, offsets, cols, np.ones(cols.size), check=False)
    )


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.neurons.split(",") if s]
    depths = [int(s) for s in args.layers.split(",") if s]
    modes = [m for m in args.modes.split(",") if m]
    workers_list = [int(w) for w in args.workers.split(",") if w]
    for n in sizes:
        if n not in PRESETS:
            raise ParameterError(f"no preset for {n} neurons")
        if n > 4096 and not args.allow_large:
            raise ParameterError(
                f"{n} neurons is beyond desk scale; pass --allow-large"
            )

    data_dir = Path(args.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    warmup()
    reports = []
    errors = []
    for neurons in sizes:
        if args.input:
            y0 = _load_input(args.input, neurons, args.inputs)
        else:
            y0 = _random_batch(args.inputs, neurons, args.density, args.seed)
        for depth in depths:
            model_dir = data_dir / f"n{neurons}-l{depth}"
            try:
                if not model_dir.is_dir():
                    config = GeneratorConfig.preset(neurons, depth,
                                                    args.weight, args.seed)
                    write_model_dir(generate_layers(config), neurons,
                                    model_dir, fmt="bin")
                model = load_model_dir(model_dir, bias=args.bias)
            except (SdnnError, OSError) as exc:
                errors.append((neurons, depth, "-", 0, str(exc)))
                continue
            connections = sum(l.weights.nnz for l in model.layers)
            for mode in modes:
                for workers in workers_list:
                    try:
                        cfg = InferenceConfig(ymax=args.ymax, mode=mode,
                                              workers=workers)
                        _, _, seconds = infer_timed(model, y0, cfg)
                        reports.append(BenchReport(
                            neurons=neurons, layers=depth,
                            connections=connections, inputs=y0.n_images,
                            seconds=seconds,
                            rate=rate(y0.n_images, connections, seconds),
                            mode=mode, workers=workers, machine=args.machine,
                        ))
                    except (SdnnError, OSError) as exc:
                        errors.append((neurons, depth, mode, workers, str(exc)))
    with open(args.out, "wb") as fh:
        emit_report(reports, args.report_format, fh)
        if errors and args.report_format == "tsv":
            for cell in errors:
                fh.write(f"# failed: {cell}\n".encode("ascii"))
    for cell in errors:
        print(f"cell failed: {cell}", file=sys.stderr)
    print(f"bench: {len(reports)} rows -> {args.out}"
          + (f" ({len(errors)} failed cells)" if errors else ""))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdnn",
        description="Sparse DNN inference benchmark toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a synthetic sparse DNN")
    gen.add_argument("--neurons", type=int, default=None,
                     help=f"preset neuron count {sorted(PRESETS)}")
    gen.add_argument("--layers", type=int, required=True)
    gen.add_argument("--radix", default=None,
                     help="explicit radix list, e.g. 2,2,2 (overrides --neurons)")
    gen.add_argument("--kron", type=int, default=None,
                     help="uniform Kronecker factor for --radix")
    gen.add_argument("--bias", type=float, default=None,
                     help="bias override for non-preset sizes")
    gen.add_argument("--weight", type=float,
                     default=_env("WEIGHT", float, DEFAULT_WEIGHT_VALUE))
    gen.add_argument("--seed", type=int, default=_env("SEED", int, 0))
    gen.add_argument("--format", choices=("tsv", "bin", "both"), default="tsv")
    gen.add_argument("--out", required=True)

    pre = sub.add_parser("preprocess", help="IDX images to sparse features")
    pre.add_argument("--images", required=True, help="IDX3 file (.gz ok)")
    pre.add_argument("--side", type=int, choices=TARGET_SIDES, required=True)
    pre.add_argument("--limit", type=int, default=None,
                     help="only the first N images")
    pre.add_argument("--format", choices=("tsv", "bin"), default=None)
    pre.add_argument("--out", required=True)

    conv = sub.add_parser("convert", help="tsv <-> binary matrix files")
    conv.add_argument("--input", required=True)
    conv.add_argument("--out", required=True)
    conv.add_argument("--rows", type=int, default=None)
    conv.add_argument("--cols", type=int, default=None)

    inf = sub.add_parser("infer", help="run the timed challenge kernel")
    inf.add_argument("--model", required=True, help="model directory")
    inf.add_argument("--input", required=True, help="feature batch file")
    inf.add_argument("--inputs", type=int, default=None,
                     help="row count for TSV inputs (default: max row index)")
    inf.add_argument("--mode", choices=("serial", "data_parallel", "pipeline"),
                     default=_env("MODE", str, "serial"))
    inf.add_argument("--workers", type=int, default=_env("WORKERS", int, 1))
    inf.add_argument("--stages", type=int, default=None,
                     help="pipeline stage count (defaults to workers)")
    inf.add_argument("--tile", type=int, default=None, help="rows per work unit")
    inf.add_argument("--ymax", type=float, default=_env("YMAX", float, 32.0))
    inf.add_argument("--bias", type=float, default=None,
                     help="bias override (default: table by neuron count)")
    inf.add_argument("--truth", default=None,
                     help="verify against this truth file")
    inf.add_argument("--machine", default=_env("MACHINE", str, ""))
    inf.add_argument("--out-categories", required=True)
    inf.add_argument("--out-report", default=None)
    inf.add_argument("--report-format", choices=("tsv", "json"), default="tsv")

    ver = sub.add_parser("verify", help="compare category files")
    ver.add_argument("--computed", required=True)
    ver.add_argument("--truth", required=True)

    ben = sub.add_parser("bench", help="run a benchmark matrix")
    ben.add_argument("--neurons", default="1024")
    ben.add_argument("--layers", default="120")
    ben.add_argument("--modes", default="serial")
    ben.add_argument("--workers", default="1")
    ben.add_argument("--inputs", type=int, default=1000,
                     help="synthetic input rows when --input is absent")
    ben.add_argument("--density", type=float, default=0.15)
    ben.add_argument("--input", default=None, help="feature batch file")
    ben.add_argument("--weight", type=float,
                     default=_env("WEIGHT", float, DEFAULT_WEIGHT_VALUE))
    ben.add_argument("--bias", type=float, default=None)
    ben.add_argument("--ymax", type=float, default=_env("YMAX", float, 32.0))
    ben.add_argument("--seed", type=int, default=_env("SEED", int, 0))
    ben.add_argument("--machine", default=_env("MACHINE", str, ""))
    ben.add_argument("--allow-large", action="store_true")
    ben.add_argument("--data-dir", default="bench-data")
    ben.add_argument("--out", required=True)
    ben.add_argument("--report-format", choices=("tsv", "json"), default="tsv")
    return parser


_HANDLERS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "convert": cmd_convert,
    "infer": cmd_infer,
    "verify": cmd_verify,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except SystemExit as exc:  # argparse usage/version handling
        return int(exc.code or 0)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except (FormatError, SdnnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
