"""Unrolling recursive shortcut normalization into an affine map of the
block's own input and branch value, and reading off the shortcut-to-
branch ratio that the closed form predicts."""

import numpy as np

from skipnorm import (
    SkipConstruction,
    SkipKind,
    Tensor,
    build_block,
    ratio_general,
    unroll_decompose,
)

rng = np.random.default_rng(1)
width, batch, lam = 6, 4, 3

block = build_block(SkipConstruction(SkipKind.RSKIP_LN, lam=lam), width, 12, rng)
for p in block.norms:
    p.gain.data = rng.uniform(0.4, 1.6, width)
    p.bias.data = 0.3 * rng.normal(size=width)

x = Tensor(rng.normal(size=(batch, width)))
y, f, witness = block.witness(x)

# The witness holds, per nesting level from the innermost out, the
# normalization statistics and parameters the forward pass actually
# used. Those are enough to rewrite y as coef_x*x + coef_f*f + const.
coef_x, coef_f, const = unroll_decompose(witness, x.data, f.data)
rebuilt = coef_x * x.data + coef_f * f.data + const
print(f"levels recorded: {witness.levels}")
print(f"worst reconstruction error: {np.max(np.abs(rebuilt - y.data)):.2e}")

# coef_x / coef_f is how strongly the block still listens to its own
# input relative to the branch. The closed form predicts it from the
# per-level sigma/gain quotients alone.
ratio = ratio_general(witness)
print(f"worst closed-form mismatch:  {np.max(np.abs(ratio - coef_x / coef_f)):.2e}")
print(f"ratio range across the batch: {ratio.min():.3f} .. {ratio.max():.3f}")

# Only the inner levels matter: the outermost gain scales coef_x and
# coef_f together, so rescaling it cannot move the ratio.
block.norms[-1].gain.data = block.norms[-1].gain.data * 7.0
_, _, scaled = block.witness(Tensor(x.data))
print(f"ratio unchanged after scaling the outermost gain by 7: "
      f"{np.array_equal(ratio_general(scaled), ratio)}")

# With whitened activations (unit sigma, unit gain) every quotient is 1
# and the ratio collapses to the recursion depth itself.
from skipnorm import RatioWitness

ones, zeros = np.ones(batch), np.zeros(batch)
unit_w, zero_b = np.ones(width), np.zeros(width)
whitened = RatioWitness(
    sigmas=(ones,) * lam, mus=(zeros,) * lam,
    gains=(unit_w,) * lam, biases=(zero_b,) * lam,
)
print(f"whitened {lam}-level ratio is exactly {lam}: "
      f"{np.array_equal(ratio_general(whitened), np.full((batch, width), float(lam)))}")
