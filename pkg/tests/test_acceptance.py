"""Acceptance suite: one test per criterion, one printed line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline.
The image corpus is a real IDX file named by SDNN_MNIST_IDX when present,
otherwise a deterministic synthetic corpus of the same shape (60,000
grayscale 28x28 images).
"""

import io
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from sdnnbench.challenge import (
    categorize,
    oracle_infer,
    oracle_infer_batch,
    rate,
)
from sdnnbench.cli import main
from sdnnbench.engine import (
    InferenceConfig,
    apply_bias_relu_clamp,
    infer,
    infer_timed,
    spmm,
    warmup,
)
from sdnnbench.errors import ChecksumError
from sdnnbench.ingest import (
    ImageSet,
    load_idx,
    load_model_dir,
    read_binary,
    read_matrix_auto,
    read_truth,
    read_tsv,
    resize_threshold_flatten,
    write_binary,
    write_truth,
    write_tsv,
)
from sdnnbench.model import (
    FeatureBatch,
    SparseMatrix,
    Triple,
    build_from_triples,
)
from sdnnbench.radixnet import (
    GeneratorConfig,
    RadixSpec,
    deepen,
    generate_layers,
    generate_model,
    kronecker_expand,
    mixed_radix_butterfly,
)

from helpers import (
    csr_from_mask,
    matrices_identical,
    random_batch,
    random_model,
    synthetic_digits,
)

GEN_SEED = 42


def report(num, desc, ok, detail=""):
    tail = f" ({detail})" if detail else ""
    print(f"\n[criterion {num}] {'PASS' if ok else 'FAIL'}: {desc}{tail}")
    assert ok, f"criterion {num} failed: {desc} {detail}"


@pytest.fixture(scope="session")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def corpus():
    override = os.environ.get("SDNN_MNIST_IDX")
    if override:
        return load_idx(override)
    return ImageSet(60000, 28, synthetic_digits(60000, seed=7))


@pytest.fixture(scope="session")
def generated():
    """Criterion-1 artifacts: per-config connection counts and build times;
    the (1024, 120) model is kept for reuse."""
    out = {}
    for neurons, layers in [(1024, 120), (1024, 480), (4096, 120)]:
        t0 = time.perf_counter()
        model = generate_model(GeneratorConfig.preset(neurons, layers,
                                                      rng_seed=GEN_SEED))
        elapsed = time.perf_counter() - t0
        connections = sum(l.weights.nnz for l in model.layers)
        out[(neurons, layers)] = {
            "connections": connections,
            "seconds": elapsed,
            "model": model if (neurons, layers) == (1024, 120) else None,
        }
    return out


@pytest.fixture(scope="session")
def model_1024_120(generated):
    return generated[(1024, 120)]["model"]


@pytest.fixture(scope="session")
def batch_full(corpus):
    return resize_threshold_flatten(corpus, 32)


@pytest.fixture(scope="session")
def batch_1000(batch_full):
    d = batch_full.data
    hi = d.row_offsets[1000]
    return FeatureBatch(SparseMatrix(
        1000, d.n_cols, d.row_offsets[:1001], d.col_indices[:hi],
        d.values[:hi], check=False,
    ))


@pytest.fixture(scope="session")
def oracle_default_1000(model_1024_120, batch_1000):
    """Timed naive dense oracle on the default-weight challenge model."""
    warmup()
    t0 = time.perf_counter()
    dense, cats = oracle_infer_batch(model_1024_120, batch_1000)
    seconds = time.perf_counter() - t0
    return {"categories": cats, "seconds": seconds}


def test_criterion_1_connection_counts(generated):
    expected = {
        (1024, 120): 3_932_160,
        (1024, 480): 15_728_640,
        (4096, 120): 15_728_640,
    }
    problems = []
    details = []
    for key, want in expected.items():
        got = generated[key]["connections"]
        secs = generated[key]["seconds"]
        details.append(f"{key}: {got} in {secs:.1f}s")
        if got != want:
            problems.append(f"{key}: {got} != {want}")
        if secs >= 120:
            problems.append(f"{key}: generation took {secs:.1f}s")
    report(1, "Table II connection counts, generation under 2 minutes",
           not problems, "; ".join(problems or details))


def test_criterion_2_density_and_bias(model_1024_120):
    problems = []
    for t, layer in enumerate(model_1024_120.layers, start=1):
        if layer.weights.nnz != 32 * 1024:
            problems.append(f"1024 layer {t}: nnz {layer.weights.nnz}")
        if layer.bias != -0.30:
            problems.append(f"1024 layer {t}: bias {layer.bias}")
    density_1024 = model_1024_120.layers[0].weights.nnz / 1024**2
    if density_1024 != 32 / 1024:
        problems.append(f"1024 density {density_1024}")

    config = GeneratorConfig.preset(4096, 120, rng_seed=GEN_SEED)
    for t, layer in enumerate(generate_layers(config), start=1):
        if layer.nnz != 32 * 4096:
            problems.append(f"4096 layer {t}: nnz {layer.nnz}")
    short = generate_model(GeneratorConfig.preset(4096, 8, rng_seed=GEN_SEED))
    if any(l.bias != -0.35 for l in short.layers):
        problems.append("4096 bias is not -0.35")

    report(2, "Table I density exactly 32/N and biases -0.30/-0.35",
           not problems,
           "; ".join(problems) or "densities 0.03125 and 0.0078125")


def _all_radix_specs(max_n):
    out = []

    def rec(prefix, prod):
        if prefix:
            out.append(tuple(prefix))
        f = 2
        while prod * f <= max_n:
            rec(prefix + [f], prod * f)
            f += 1

    rec([], 1)
    return out


def _constant_product(stages) -> bool:
    prod = stages[0].to_dense()
    for m in stages[1:]:
        prod = prod @ m.to_dense()
    return bool(np.all(prod == prod.flat[0]))


def test_criterion_3_path_count_constancy():
    specs = _all_radix_specs(64)
    assert {(2, 2), (2, 2, 2), (3, 2), (2, 3, 2)} <= set(specs)
    failures = []
    checked = 0
    for spec in specs:
        base = mixed_radix_butterfly(RadixSpec(spec))
        for k in (1, 2, 3, 4):
            stages = kronecker_expand(base, k) if k > 1 else base
            if not _constant_product(stages):
                failures.append((spec, k, "base"))
            checked += 1
            for seed in (101, 202, 303):
                deep = deepen(stages, 2 * len(stages), seed)
                if not _constant_product(deep):
                    failures.append((spec, k, seed))
                checked += 1
    report(3, "equal path counts for every radix spec with N <= 64, "
              "through Kronecker (k <= 4) and deepening (3 seeds)",
           not failures,
           f"{len(specs)} specs, {checked} products" if not failures else str(failures[:3]))


def test_criterion_4_oracle_equivalence():
    gen = np.random.default_rng(20240601)
    failures = []
    instances = 200
    for trial in range(instances):
        n = int(gen.integers(4, 65))
        layers = int(gen.integers(1, 9))
        rows = int(gen.integers(1, 101))
        density = float(gen.uniform(0.05, 0.6))
        model = random_model(gen, n, layers, density=density)
        y0 = random_batch(gen, rows, n, float(gen.uniform(0.1, 0.6)))
        want = oracle_infer(model, y0.data.to_dense())
        for mode in ("serial", "data_parallel", "pipeline"):
            for workers in (1, 2, 8):
                out = infer(model, y0, InferenceConfig(mode=mode, workers=workers))
                if not np.array_equal(out.data.to_dense(), want):
                    failures.append((trial, n, layers, rows, mode, workers))
    report(4, f"engine equals dense oracle bit-exactly on {instances} random "
              "instances in all modes at workers 1/2/8",
           not failures, str(failures[:3]) if failures else f"{instances * 9} runs")


def test_criterion_5_kernel_semantics():
    gen = np.random.default_rng(77)
    problems = []

    # (a) post-layer values always in (0, 32]
    for _ in range(5):
        model = random_model(gen, 24, 6, density=0.5)
        state = random_batch(gen, 15, 24, 0.5)
        for layer in model.layers:
            z = spmm(state, layer.weights)
            state = FeatureBatch(apply_bias_relu_clamp(z, layer.bias, 32.0))
            if state.data.nnz and not (
                state.data.values.min() > 0.0 and state.data.values.max() <= 32.0
            ):
                problems.append("(a) value out of (0, 32]")

    # (b) zero input rows stay zero through 120 layers
    model = random_model(gen, 32, 120, density=0.4)
    mask = gen.random((30, 32)) < 0.5
    zero_rows = [2, 11, 29]
    mask[zero_rows] = False
    out = infer(model, FeatureBatch(csr_from_mask(mask)))
    if any(out.data.row_counts()[r] != 0 for r in zero_rows):
        problems.append("(b) zero row grew entries")

    # (c) pre-bias 40 clamps to 32
    y = FeatureBatch(build_from_triples([Triple(1, 1, 8.0)], 1, 1))
    w = build_from_triples([Triple(1, 1, 5.0)], 1, 1)
    clamped = apply_bias_relu_clamp(spmm(y, w), 0.0, 32.0)
    if clamped.values.tolist() != [32.0]:
        problems.append(f"(c) clamp gave {clamped.values.tolist()}")

    # (d) entry-masked bias: the zero position of a {nonzero, zero} row gets none
    y = FeatureBatch(build_from_triples([Triple(1, 1, 1.0), Triple(1, 2, 1.0)], 1, 2))
    w = build_from_triples(
        [Triple(1, 1, 0.75), Triple(1, 2, 0.5), Triple(2, 1, 0.25), Triple(2, 2, -0.5)],
        2, 2,
    )
    z = spmm(y, w)  # row = [1.0, 0.0]: second column cancels exactly
    if z.col_indices.tolist() != [0]:
        problems.append(f"(d) expected cancelled zero, stored {z.col_indices.tolist()}")
    biased = apply_bias_relu_clamp(z, 0.4, 32.0)
    if biased.col_indices.tolist() != [0] or biased.values.tolist() != [1.0 + 0.4]:
        problems.append("(d) bias leaked onto an unstored position")

    report(5, "kernel semantics: range, zero rows, clamp at 32, entry-masked bias",
           not problems, "; ".join(problems))


def test_criterion_6_rates_and_desk_performance(
    model_1024_120, batch_full, batch_1000, oracle_default_1000
):
    problems = []
    details = []

    r1 = rate(60000, 3_932_160, 626)
    if abs(r1 - 376e6) / 376e6 >= 0.005:
        problems.append(f"rate row 1: {r1:.4g}")
    r2 = rate(60000, 15_728_640, 2440)
    if abs(r2 - 386e6) / 386e6 >= 0.005:
        problems.append(f"rate row 2: {r2:.4g}")

    # full-corpus run must complete
    cfg = InferenceConfig(mode="data_parallel", workers=2)
    out, cats, full_seconds = infer_timed(model_1024_120, batch_full, cfg)
    if out.n_images != 60000:
        problems.append("full run lost rows")
    details.append(f"full 60000-image run {full_seconds:.1f}s, "
                   f"{len(cats)} categories")

    # and beat the naive dense oracle by >= 10x on the 1000-image subset
    _, _, engine_seconds = infer_timed(model_1024_120, batch_1000)
    oracle_seconds = oracle_default_1000["seconds"]
    ratio = oracle_seconds / engine_seconds
    details.append(f"subset engine {engine_seconds:.2f}s vs oracle "
                   f"{oracle_seconds:.1f}s ({ratio:.0f}x)")
    if ratio < 10:
        problems.append(f"speedup only {ratio:.1f}x")

    report(6, "Table III rate arithmetic within 0.5%; full run completes; "
              ">= 10x over the dense oracle",
           not problems, "; ".join(problems or details))


@pytest.fixture(scope="session")
def e2e(work, corpus):
    """Criterion-7 flow, timed: generate, preprocess, oracle truth, infer,
    verify.  Uses a saturating weight so categories are non-trivial."""
    steps = {}
    idx_path = work / "corpus.idx"
    import helpers

    idx_path.write_bytes(helpers.idx_bytes(corpus.pixels[:1000]))

    model_dir = work / "e2e-model"
    t0 = time.perf_counter()
    assert main(["generate", "--neurons", "1024", "--layers", "120",
                 "--seed", str(GEN_SEED), "--weight", "0.25",
                 "--out", str(model_dir)]) == 0
    steps["generate"] = time.perf_counter() - t0

    input_path = work / "input-1000.tsv"
    t0 = time.perf_counter()
    assert main(["preprocess", "--images", str(idx_path), "--side", "32",
                 "--limit", "1000", "--out", str(input_path)]) == 0
    steps["preprocess"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    model = load_model_dir(model_dir)
    y0 = FeatureBatch(read_matrix_auto(input_path, n_rows=1000, n_cols=1024))
    _, truth = oracle_infer_batch(model, y0)
    truth_path = work / "truth.cat"
    with open(truth_path, "wb") as fh:
        write_truth(truth, fh)
    steps["oracle_truth"] = time.perf_counter() - t0

    cats_path = work / "computed.cat"
    report_path = work / "report.tsv"
    t0 = time.perf_counter()
    infer_code = main([
        "infer", "--model", str(model_dir), "--input", str(input_path),
        "--inputs", "1000", "--mode", "data_parallel", "--workers", "2",
        "--out-categories", str(cats_path), "--out-report", str(report_path),
    ])
    steps["infer"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    verify_code = main(["verify", "--computed", str(cats_path),
                        "--truth", str(truth_path)])
    steps["verify"] = time.perf_counter() - t0

    return {
        "steps": steps,
        "infer_code": infer_code,
        "verify_code": verify_code,
        "truth": truth,
        "paths": {
            "model_dir": model_dir, "input": input_path,
            "truth": truth_path, "categories": cats_path,
            "report": report_path,
        },
    }


def test_criterion_7_end_to_end(e2e):
    problems = []
    total = sum(e2e["steps"].values())
    if e2e["infer_code"] != 0:
        problems.append(f"infer exited {e2e['infer_code']}")
    if e2e["verify_code"] != 0:
        problems.append(f"verify exited {e2e['verify_code']}")
    with open(e2e["paths"]["categories"], "rb") as fh:
        computed = read_truth(fh)
    if computed != e2e["truth"]:
        problems.append("category sets differ")
    if total >= 600:
        problems.append(f"took {total:.0f}s")
    steps = ", ".join(f"{k} {v:.1f}s" for k, v in e2e["steps"].items())
    report(7, "end-to-end generate/preprocess/oracle-truth/infer/verify "
              "matches exactly in under 10 minutes",
           not problems,
           "; ".join(problems) or f"{len(computed)} categories; {steps}; "
                                  f"total {total:.0f}s")


def test_criterion_8_format_stability(e2e, work):
    problems = []
    input_path = e2e["paths"]["input"]
    raw = input_path.read_bytes()

    # tsv round trip byte-identical
    m = read_tsv(io.BytesIO(raw), 1000, 1024)
    sink = io.BytesIO()
    write_tsv(m, sink)
    if sink.getvalue() != raw:
        problems.append("tsv round trip changed bytes")

    # binary round trip byte-identical
    bin_path = work / "input-1000.bin"
    with open(bin_path, "wb") as fh:
        write_binary(m, fh)
    blob = bin_path.read_bytes()
    again = io.BytesIO()
    write_binary(read_binary(io.BytesIO(blob)), again)
    if again.getvalue() != blob:
        problems.append("binary round trip changed bytes")

    # binary must load at least 5x faster than tsv parses
    def best_of(fn, n=3):
        times = []
        for _ in range(n):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return min(times)

    tsv_time = best_of(lambda: read_tsv(io.BytesIO(raw), 1000, 1024))
    bin_time = best_of(lambda: read_binary(io.BytesIO(blob)))
    speedup = tsv_time / bin_time
    if speedup < 5:
        problems.append(f"binary only {speedup:.1f}x faster")

    # corruption must be rejected
    corrupt = bytearray(blob)
    corrupt[len(corrupt) // 2] ^= 0x40
    try:
        read_binary(io.BytesIO(bytes(corrupt)))
        problems.append("corrupted binary was accepted")
    except ChecksumError:
        pass

    report(8, "TSV and binary round trips byte-identical; binary >= 5x "
              "faster; corruption rejected",
           not problems,
           "; ".join(problems) or f"binary {speedup:.0f}x faster "
                                  f"({tsv_time * 1e3:.0f}ms vs {bin_time * 1e3:.1f}ms)")


def test_criterion_9_determinism(work, e2e, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    problems = []

    model_dir = work / "det-model"
    snapshots = []
    for _ in range(2):
        assert main(["generate", "--neurons", "1024", "--layers", "12",
                     "--seed", "9", "--out", str(model_dir)]) == 0
        layer_dir = model_dir / "neuron1024"
        snapshot = {p.name: p.read_bytes() for p in layer_dir.iterdir()}
        snapshot["manifest.json"] = (model_dir / "manifest.json").read_bytes()
        snapshots.append(snapshot)
    if snapshots[0] != snapshots[1]:
        problems.append("generate runs differ")

    cat_runs = []
    for _ in range(2):
        cats_path = work / "det.cat"
        assert main([
            "infer", "--model", str(model_dir),
            "--input", str(e2e["paths"]["input"]), "--inputs", "1000",
            "--mode", "data_parallel", "--workers", "2",
            "--out-categories", str(cats_path),
        ]) == 0
        cat_runs.append((
            cats_path.read_bytes(),
            (work / "det.cat.manifest.json").read_bytes(),
        ))
    if cat_runs[0] != cat_runs[1]:
        problems.append("infer runs differ")

    report(9, "identical seeds and flags give byte-identical models, "
              "categories, and manifests",
           not problems, "; ".join(problems) or "2x generate + 2x infer compared")
