"""A miniature version of the benchmark matrix: train a few
constructions on the spiral task and compare their test errors.

The full-size comparison (16 blocks, 30 epochs, 5 seeds) lives in the
acceptance tests and the `skipnorm matrix` command; this one is scaled
down to run in a few seconds.
"""

from skipnorm import (
    DatasetSpec,
    SkipConstruction,
    SkipKind,
    TrainConfig,
    gen_synthetic,
    matrix_csv,
    run_matrix,
)

data = gen_synthetic(DatasetSpec("spiral", classes=3, n_train=256, n_test=256, noise=0.2, seed=0))

constructions = [
    SkipConstruction(SkipKind.XSKIP, lam=1.0),
    SkipConstruction(SkipKind.XSKIP, lam=2.0),
    SkipConstruction(SkipKind.XSKIP_LN, lam=2.0),
    SkipConstruction(SkipKind.RSKIP_LN, lam=2),
]
base = TrainConfig(
    construction=constructions[0],
    depth=8, width=32, hidden=32, epochs=10, batch_size=64, lr=0.02,
)

results = run_matrix(constructions, [0, 1], base, data,
                     progress=lambda r: print(f"  {r.label} seed {r.seed}: "
                                              f"error {r.error_rate:.4f}"
                                              + (" (diverged)" if r.diverged else "")))

print("\nmatrix CSV (one row per run, then per-construction summaries):\n")
print(matrix_csv(results))
