"""Shipping gate: one test per acceptance criterion.

Each test records a single verdict line through the ``acceptance``
fixture; the lines are echoed together in the terminal summary. The
16-block benchmark models are trained once and cached at module level,
so whichever criterion first needs one pays its training time.
"""

import time

import numpy as np

from skipnorm import (
    DatasetSpec,
    ModelConfig,
    ResidualBlock,
    SkipConstruction,
    SkipKind,
    Tensor,
    TrainConfig,
    amplification_probe,
    build_block,
    build_model,
    cli,
    decomposition_check,
    effective_scale_sweep,
    ewmul,
    gen_synthetic,
    gradcheck_battery,
    gradient_norm_sweep,
    matrix_csv,
    ratio_general,
    run_matrix,
    train,
    tsum,
    unroll_decompose,
)

BENCH_SPEC = DatasetSpec("spiral", classes=3, n_train=512, n_test=512, noise=0.2, seed=0)

XSKIP1 = SkipConstruction(SkipKind.XSKIP, lam=1.0)
XSKIP2 = SkipConstruction(SkipKind.XSKIP, lam=2.0)
XSKIP_LN2 = SkipConstruction(SkipKind.XSKIP_LN, lam=2.0)
RSKIP_LN2 = SkipConstruction(SkipKind.RSKIP_LN, lam=2)
CONTRACTED3 = SkipConstruction(SkipKind.CONTRACTED_F_LN, residual_scale=3.0)

_cache = {}


def bench_data():
    if "data" not in _cache:
        _cache["data"] = gen_synthetic(BENCH_SPEC)
    return _cache["data"]


def bench_cfg(construction, seed):
    # lr 0.02 rather than the library default: the benchmark compares
    # normalized and unnormalized stacks side by side, and the latter
    # need a step size at which at least the single-scale ones train.
    return TrainConfig(
        construction=construction, depth=16, width=64, hidden=64,
        epochs=30, batch_size=64, lr=0.02, seed=seed,
    )


def trained(construction, seed=0):
    key = (construction.label(), seed)
    if key not in _cache:
        _cache[key] = train(bench_cfg(construction, seed), bench_data())
    return _cache[key]


def test_criterion_1_gradient_correctness(acceptance):
    t0 = time.perf_counter()
    rows = gradcheck_battery(instances=20, seed=0)
    elapsed = time.perf_counter() - t0

    failed = [r[0] for r in rows if not r[3]]
    worst = max(r[1] for r in rows)
    block_rows = sum(1 for r in rows if r[0].startswith("block:"))
    ok = not failed and worst <= 1e-4 and elapsed < 60.0
    acceptance(
        f"criterion 1 (gradient correctness): {'PASS' if ok else 'FAIL'} - "
        f"{len(rows)} targets ({block_rows} block constructions) x 20 instances, "
        f"worst rel err {worst:.2e} vs tol 1e-4, {elapsed:.1f}s"
    )
    assert not failed, f"finite-difference failures: {failed}"
    assert worst <= 1e-4
    assert block_rows == 13
    assert elapsed < 60.0


def _ratio_sum_through_all_levels(witness):
    """Alternative closed form whose sum runs over every level, not just
    the inner ones; kept here to demonstrate which convention matches."""
    batch = witness.sigmas[0].shape[0]
    total = np.ones((batch, witness.gains[0].shape[0]))
    running = np.ones_like(total)
    for sigma, gain in zip(witness.sigmas, witness.gains):
        running = running * (sigma[:, None] / gain[None, :])
        total = total + running
    return total


def _random_recursive_witness(rng, lam, width=6, batch=4):
    block = build_block(SkipConstruction(SkipKind.RSKIP_LN, lam=lam), width, 5, rng)
    for p in block.norms:
        p.gain.data = rng.uniform(0.3, 1.7, width)
        p.bias.data = 0.5 * rng.normal(size=width)
    x = Tensor(rng.normal(size=(batch, width)))
    _, f, witness = block.witness(x)
    return witness, x.data, f.data


def test_criterion_2_reconstruction_identity(acceptance):
    t0 = time.perf_counter()
    rows = decomposition_check(lams=(1, 2, 3, 4), width=8, instances=100, seed=0)
    worst_rec = max(r[1] for r in rows)
    worst_disc = max(r[2] for r in rows)

    # the two-level ratio must equal sigma_1/w_1 + 1 elementwise
    rng = np.random.default_rng(7)
    worst_two = 0.0
    for _ in range(100):
        witness, _, _ = _random_recursive_witness(rng, 2)
        ratio = ratio_general(witness)
        direct = 1.0 + witness.sigmas[0][:, None] / witness.gains[0][None, :]
        worst_two = max(worst_two, float(np.max(np.abs(ratio - direct))))

    # indexing reconciliation for deeper recursion: compare both sum
    # conventions against the coefficient oracle coef_x / coef_f
    agree, deviate = 0.0, np.inf
    for lam in (3, 4):
        for _ in range(20):
            witness, x, f = _random_recursive_witness(rng, lam)
            coef_x, coef_f, _ = unroll_decompose(witness, x, f)
            oracle = coef_x / coef_f
            inner = np.max(np.abs(ratio_general(witness) - oracle) / np.abs(oracle))
            full = np.max(np.abs(_ratio_sum_through_all_levels(witness) - oracle) / np.abs(oracle))
            agree = max(agree, float(inner))
            deviate = min(deviate, float(full))
    elapsed = time.perf_counter() - t0

    ok = (
        worst_rec <= 1e-10 and worst_disc <= 1e-10 and worst_two <= 1e-12
        and agree <= 1e-10 and deviate > 1e-3 and elapsed < 60.0
    )
    acceptance(
        f"criterion 2 (reconstruction identity): {'PASS' if ok else 'FAIL'} - "
        f"lam 1..4 x 100 instances, worst reconstruction {worst_rec:.2e} (tol 1e-10), "
        f"worst ratio discrepancy {worst_disc:.2e} (tol 1e-10), "
        f"lam=2 vs sigma_1/w_1 + 1 within {worst_two:.2e}, {elapsed:.1f}s"
    )
    acceptance(
        "criterion 2 indexing note: the matching closed form is "
        "1 + sum_{i=1..lam-1} prod_{j<=i} sigma_j/w_j with level 1 innermost; "
        "the outermost gain and denominator scale coef_x and coef_f equally and cancel"
    )
    acceptance(
        f"criterion 2 indexing note: the lam-1 inner-level sum agrees with the "
        f"coefficient oracle within {agree:.1e}, while extending the sum through "
        f"all lam levels deviates by at least {deviate:.1e}"
    )
    assert worst_rec <= 1e-10
    assert worst_disc <= 1e-10
    assert worst_two <= 1e-12
    assert agree <= 1e-10
    assert deviate > 1e-3
    assert elapsed < 60.0


def test_criterion_3_depth_amplification(acceptance):
    t0 = time.perf_counter()
    depth = 20
    worst = {}
    for lam in (0.5, 2.0, 3.0):
        grads = amplification_probe(SkipConstruction(SkipKind.XSKIP, lam=lam), depth, width=8)
        rel = np.abs(grads[0] / grads[-1] - lam**depth) / lam**depth
        worst[lam] = float(rel.max())
    unit = amplification_probe(SkipConstruction(SkipKind.XSKIP, lam=1.0), depth, width=8)
    unit_exact = np.array_equal(unit[0] / unit[-1], np.ones_like(unit[0]))
    elapsed = time.perf_counter() - t0

    ok = all(v <= 1e-9 for v in worst.values()) and unit_exact and elapsed < 60.0
    detail = ", ".join(f"lam={k:g} rel err {v:.1e}" for k, v in worst.items())
    acceptance(
        f"criterion 3 (lambda^N amplification): {'PASS' if ok else 'FAIL'} - "
        f"depth {depth} zero-branch stacks, {detail} vs tol 1e-9, "
        f"lam=1 ratio exactly 1: {unit_exact}, {elapsed:.1f}s"
    )
    for lam, v in worst.items():
        assert v <= 1e-9, f"lam={lam} amplification off by {v:.3e}"
    assert unit_exact
    assert elapsed < 60.0


def _forward_backward(block, x_data, c_data):
    for _, p, _ in block.parameters():
        p.zero_grad()
    x = Tensor(x_data, requires_grad=True)
    y = block.forward(x)
    tsum(ewmul(y, Tensor(c_data))).backward()
    grads = {name: p.grad.copy() for name, p, _ in block.parameters()}
    return y.data.copy(), x.grad.copy(), grads


def test_criterion_4_equivalence_oracles(acceptance):
    rng = np.random.default_rng(3)
    width, hidden = 6, 5
    base = build_block(SkipConstruction(SkipKind.XSKIP_LN, lam=1.0), width, hidden, rng)
    for p in base.norms:
        p.gain.data = rng.uniform(0.5, 1.5, width)
        p.bias.data = 0.3 * rng.normal(size=width)
    partners = [
        ResidualBlock(SkipConstruction(SkipKind.RSKIP_LN, lam=1), base.branch, base.norms, width=width),
        ResidualBlock(
            SkipConstruction(SkipKind.CONTRACTED_F_LN, residual_scale=1.0),
            base.branch, base.norms, width=width,
        ),
    ]

    identical = True
    for _ in range(10):
        x_data = rng.normal(size=(4, width))
        c_data = rng.normal(size=(4, width))
        ref_y, ref_xg, ref_grads = _forward_backward(base, x_data, c_data)
        for other in partners:
            y, xg, grads = _forward_backward(other, x_data, c_data)
            identical &= np.array_equal(ref_y, y)
            identical &= np.array_equal(ref_xg, xg)
            identical &= all(np.array_equal(ref_grads[k], grads[k]) for k in ref_grads)

    labels = " and ".join(p.construction.label() for p in partners)
    acceptance(
        f"criterion 4 (equivalence oracles): {'PASS' if identical else 'FAIL'} - "
        f"{base.construction.label()} vs {labels}, forward and backward "
        f"bit-identical under shared parameters over 10 instances"
    )
    assert identical


def test_criterion_5_gradient_norm_spread(acceptance):
    t0 = time.perf_counter()
    data = bench_data()
    chunks = [
        (data.x_test[s], data.y_test[s])
        for s in (slice(0, 256), slice(256, 512))
    ]
    spreads, notes = {}, []
    for construction in (XSKIP2, XSKIP_LN2, RSKIP_LN2):
        result, model = trained(construction)
        spreads[result.label] = gradient_norm_sweep(model, chunks).spread
        if result.diverged:
            notes.append(
                f"{result.label} diverged at epoch {result.diverged_epoch}; "
                "the sweep uses its last finite parameters"
            )

    probe = amplification_probe(SkipConstruction(SkipKind.XSKIP, lam=0.5), depth=16, width=64)
    means = [float(np.abs(g).mean()) for g in probe]
    decays = all(means[k] < means[k + 1] for k in range(len(means) - 1))
    elapsed = time.perf_counter() - t0

    margin = min(spreads["2xSkip"] / spreads["2xSkip+LN"], spreads["2xSkip"] / spreads["2rSkip+LN"])
    ok = margin >= 10.0 and decays and elapsed < 600.0
    suffix = f" [{'; '.join(notes)}]" if notes else ""
    acceptance(
        f"criterion 5 (gradient-norm spread): {'PASS' if ok else 'FAIL'} - "
        f"spread 2xSkip={spreads['2xSkip']:.2e} vs 2xSkip+LN={spreads['2xSkip+LN']:.2f} "
        f"and 2rSkip+LN={spreads['2rSkip+LN']:.2f} (min margin {margin:.0f}x, need 10x); "
        f"0.5xSkip probe decays monotonically toward the input: {decays}; "
        f"{elapsed:.1f}s{suffix}"
    )
    assert spreads["2xSkip"] >= 10.0 * spreads["2xSkip+LN"]
    assert spreads["2xSkip"] >= 10.0 * spreads["2rSkip+LN"]
    assert decays
    assert elapsed < 600.0


def test_criterion_6_benchmark_error_ordering(acceptance):
    t0 = time.perf_counter()
    data = bench_data()
    constructions = [XSKIP1, XSKIP2, XSKIP_LN2, RSKIP_LN2, CONTRACTED3]
    results = run_matrix(constructions, list(range(5)), bench_cfg(XSKIP1, 0), data)
    elapsed = time.perf_counter() - t0

    med = {}
    for c in constructions:
        errs = sorted(r.error_rate for r in results if r.label == c.label())
        med[c.label()] = errs[len(errs) // 2]

    ok = (
        med["2xSkip"] > med["1xSkip"]
        and med["2rSkip+LN"] <= med["2xSkip+LN"]
        and med["LN(x+3F)"] > med["2xSkip+LN"]
        and med["LN(x+3F)"] > med["2rSkip+LN"]
        and elapsed < 1800.0
    )
    detail = ", ".join(f"{k}={v:.4f}" for k, v in med.items())
    acceptance(
        f"criterion 6 (benchmark error ordering): {'PASS' if ok else 'FAIL'} - "
        f"median test error over 5 seeds: {detail}; {len(results)} runs, {elapsed:.0f}s"
    )
    assert med["2xSkip"] > med["1xSkip"]
    assert med["2rSkip+LN"] <= med["2xSkip+LN"]
    assert med["LN(x+3F)"] > med["2xSkip+LN"]
    assert med["LN(x+3F)"] > med["2rSkip+LN"]
    assert elapsed < 1800.0


def test_criterion_7_effective_scale(acceptance):
    t0 = time.perf_counter()
    data = bench_data()
    chunks = [data.x_test[:256], data.x_test[256:]]

    exact = {}
    for lam in (2.0, 3.0):
        cfg = ModelConfig(
            construction=SkipConstruction(SkipKind.XSKIP_LN, lam=lam),
            depth=16, d_in=data.d_in, width=64, hidden=64, classes=3,
        )
        report = effective_scale_sweep(build_model(cfg, seed=0), chunks)
        exact[lam] = report.average == lam and all(v == lam for v in report.per_block)

    _, model = trained(RSKIP_LN2)
    report = effective_scale_sweep(model, chunks)
    elapsed = time.perf_counter() - t0

    ok = all(exact.values()) and report.average > 1.0 and elapsed < 300.0
    acceptance(
        f"criterion 7 (effective scale): {'PASS' if ok else 'FAIL'} - "
        f"untrained single-scale blocks report exactly lambda for lam=2, 3: "
        f"{all(exact.values())}; trained 2rSkip+LN average "
        f"{report.average:.3f} (per-block min {min(report.per_block):.3f}) > 1; "
        f"{elapsed:.1f}s"
    )
    assert exact[2.0] and exact[3.0]
    assert report.average > 1.0
    assert elapsed < 300.0


def test_criterion_8_determinism(acceptance, tmp_path):
    t0 = time.perf_counter()
    small_spec = DatasetSpec("spiral", classes=3, n_train=96, n_test=96, noise=0.2, seed=0)
    small_cfg = TrainConfig(
        construction=XSKIP_LN2, depth=4, width=16, hidden=16,
        epochs=3, batch_size=32, lr=0.05, seed=0,
    )
    matrices = []
    for _ in range(2):
        results = run_matrix([XSKIP_LN2, RSKIP_LN2], [0, 1], small_cfg, gen_synthetic(small_spec))
        matrices.append(matrix_csv(results))
    matrix_ok = matrices[0] == matrices[1]

    grad_args = [
        "gradnorm", "--construction", "xskip-ln", "--lambda", "2",
        "--depth", "3", "--width", "8", "--hidden", "8",
        "--train-n", "64", "--test-n", "64", "--seed", "0",
    ]
    grad_bytes = []
    for name in ("grad_a.csv", "grad_b.csv"):
        out = tmp_path / name
        assert cli.main(grad_args + ["--out", str(out)]) == 0
        grad_bytes.append(out.read_bytes())
    grad_ok = grad_bytes[0] == grad_bytes[1]

    ratio_bytes = []
    for name in ("ratio_a.csv", "ratio_b.csv"):
        out = tmp_path / name
        assert cli.main(["ratio-check", "--lambda", "1,2,3", "--seed", "0", "--out", str(out)]) == 0
        ratio_bytes.append(out.read_bytes())
    ratio_ok = ratio_bytes[0] == ratio_bytes[1]
    elapsed = time.perf_counter() - t0

    ok = matrix_ok and grad_ok and ratio_ok
    acceptance(
        f"criterion 8 (determinism): {'PASS' if ok else 'FAIL'} - same-seed reruns "
        f"byte-identical: training matrix {matrix_ok}, gradient-norm sweep {grad_ok}, "
        f"ratio check {ratio_ok}; {elapsed:.1f}s"
    )
    assert matrix_ok
    assert grad_ok
    assert ratio_ok
