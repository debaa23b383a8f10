"""The residual construction zoo: what each block computes, how it is
labeled, and which knobs it owns."""

import numpy as np

from skipnorm import (
    ModelConfig,
    SkipConstruction,
    SkipKind,
    Tensor,
    build_model,
    effective_scale,
    build_block,
)

tour = [
    SkipConstruction(SkipKind.PLAIN),
    SkipConstruction(SkipKind.XSKIP, lam=2.0),
    SkipConstruction(SkipKind.XSKIP, lam=0.5),
    SkipConstruction(SkipKind.XSKIP_LN, lam=2.0),
    SkipConstruction(SkipKind.RSKIP_LN, lam=3),
    SkipConstruction(SkipKind.WSKIP_LN),
    SkipConstruction(SkipKind.XSKIP_BN, lam=2.0),
    SkipConstruction(SkipKind.CONTRACTED_F_LN, residual_scale=3.0),
]

print(f"{'label':<14} {'computes':<32} norms")
for c in tour:
    print(f"{c.label():<14} {c.arch():<32} {c.norm_label() or '-'}")

# Labels round-trip through the parser, so configuration files and CLI
# flags can name a construction the same way reports do.
parsed = SkipConstruction.parse("rskip-ln", lam=3)
print(f"\nparse('rskip-ln', lam=3) -> {parsed.label()}, {parsed.levels} norm levels")

# Parameter ownership follows the construction: recursion adds one
# gain/bias pair per level, the weighted shortcut adds a vector.
rng = np.random.default_rng(0)
for c in (tour[0], tour[4], tour[5]):
    block = build_block(c, 16, 32, rng)
    n = sum(p.data.size for _, p, _ in block.parameters())
    print(f"{c.label():<14} block parameters: {n}")

# Freshly built scaled-shortcut LN blocks report their shortcut weight
# exactly; training moves it.
c = SkipConstruction(SkipKind.XSKIP_LN, lam=2.0)
block = build_block(c, 16, 32, rng)
x = Tensor(rng.normal(size=(8, 16)))
print(f"\nuntrained {c.label()} effective scale: {effective_scale(block, x):g}")

cfg = ModelConfig(construction=c, depth=4, d_in=2, width=16, hidden=32, classes=3)
model = build_model(cfg, seed=0)
print(f"4-block model parameter count: {model.param_count()}")
