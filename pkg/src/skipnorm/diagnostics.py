"""Per-block gradient-norm sweeps and effective-scale probes.

These measurements characterize how a construction conditions the
backward pass: a non-unit shortcut scale without normalization makes
per-block gradient norms grow or shrink geometrically with depth, while
the normalized constructions keep them flat.
"""

from dataclasses import dataclass

import numpy as np

from .blocks import SkipConstruction, SkipKind, build_block, effective_scale
from .errors import ContractError
from .normalization import BatchNormParams, LayerNormParams, batch_norm, layer_norm
from .ratio import ratio_general, unroll_decompose
from .tensor import (
    Tensor,
    add,
    ewmul,
    gradcheck,
    matmul,
    relu,
    scale,
    softmax_cross_entropy,
    tsum,
)

__all__ = [
    "GradReport",
    "ScaleReport",
    "gradient_norm_sweep",
    "effective_scale_sweep",
    "amplification_probe",
    "gradcheck_battery",
    "decomposition_check",
]


@dataclass(frozen=True)
class GradReport:
    """Mean L2 norm of the loss gradient at each block output.

    ``block_norms[k]`` is the average over all sampled rows of
    ||d loss / d y_k||_2, block 0 nearest the input.
    """

    label: str
    block_norms: tuple
    samples: int
    seed: int = 0

    def __post_init__(self):
        if self.samples <= 0:
            raise ContractError("a gradient report needs at least one sample")
        if any(n < 0 for n in self.block_norms):
            raise ContractError("gradient norms cannot be negative")

    @property
    def spread(self):
        """max/min across blocks; inf when some block's norm is 0."""
        lo, hi = min(self.block_norms), max(self.block_norms)
        return float("inf") if lo == 0.0 else hi / lo


@dataclass(frozen=True)
class ScaleReport:
    """Per-block effective shortcut/residual scale and its model average."""

    label: str
    per_block: tuple
    average: float
    samples: int


def gradient_norm_sweep(model, batches, loss_fn=softmax_cross_entropy, seed=0):
    """Average per-block output-gradient norms over a set of batches.

    ``batches`` is a sequence of (inputs, labels) arrays. Row gradients
    of the batch-mean loss are rescaled by the batch size, which turns
    them into per-sample loss gradients; summed in block order and
    divided by the total row count, the result is then independent of
    how the rows were split into batches (for row-local models).
    Batch-normalized models are swept in whatever mode they are in;
    training mode updates their running statistics as a side effect.
    """
    batches = list(batches)
    if not batches or sum(x.shape[0] for x, _ in batches) == 0:
        raise ContractError("gradient_norm_sweep needs a nonempty sample set")
    if not model.blocks:
        raise ContractError("gradient_norm_sweep needs at least one block")
    totals = np.zeros(len(model.blocks))
    samples = 0
    for x, labels in batches:
        model.zero_grad()
        outs = []
        logits = model.forward(Tensor(np.asarray(x, dtype=np.float64)), block_outputs=outs)
        loss = loss_fn(logits, labels)
        loss.backward()
        for k, y in enumerate(outs):
            totals[k] += np.linalg.norm(y.grad, axis=1).sum() * x.shape[0]
        samples += x.shape[0]
    label = model.blocks[0].construction.label()
    return GradReport(label, tuple(float(t / samples) for t in totals), samples, seed)


def effective_scale_sweep(model, batches):
    """Per-block effective scale averaged over a set of input batches.

    Only defined for the shortcut-bearing layer-normalized kinds; the
    per-block value is row-weighted across batches.
    """
    if not model.blocks:
        raise ContractError("effective_scale_sweep needs at least one block")
    kind = model.blocks[0].construction.kind
    if kind not in (SkipKind.XSKIP_LN, SkipKind.RSKIP_LN, SkipKind.WSKIP_LN):
        raise ContractError(f"effective scale is undefined for {model.blocks[0].construction.label()}")
    batches = list(batches)
    if not batches:
        raise ContractError("effective_scale_sweep needs a nonempty sample set")
    totals = [0.0] * len(model.blocks)
    samples = 0
    for batch in batches:
        x = batch[0] if isinstance(batch, tuple) else batch
        x = np.asarray(x, dtype=np.float64)
        ins = []
        model.forward(Tensor(x), block_inputs=ins)
        for i, (block, h) in enumerate(zip(model.blocks, ins)):
            totals[i] += effective_scale(block, Tensor(h.data)) * x.shape[0]
        samples += x.shape[0]
    if samples == 0:
        raise ContractError("effective_scale_sweep needs a nonempty sample set")
    per_block = tuple(t / samples for t in totals)
    label = model.blocks[0].construction.label()
    return ScaleReport(label, per_block, float(np.mean(per_block)), samples)


def amplification_probe(construction, depth, width, batch=2, seed=0):
    """Backward magnification through a bare zero-branch block stack.

    Builds ``depth`` blocks with every branch forced to the zero map,
    runs a random input through them, seeds the top with an all-ones
    upstream gradient, and returns the gradient at each of the depth+1
    block boundaries (index 0 is the stack input, index depth the stack
    output). With branches at zero the scaled kinds multiply the
    gradient by exactly lambda per block, so boundary k carries
    lambda^(depth-k) per coordinate.
    """
    if depth < 1:
        raise ContractError("amplification probe needs depth >= 1")
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(depth):
        block = build_block(construction, width, hidden=width, rng=rng)
        block.branch.zero_()
        blocks.append(block)
    x = Tensor(rng.normal(0.0, 1.0, (batch, width)), requires_grad=True)
    boundaries = [x]
    h = x
    for block in blocks:
        h = block.forward(h)
        boundaries.append(h)
    tsum(h).backward()
    return [b.grad.copy() for b in boundaries]


def _randomized_norms(block, rng):
    """Move norm parameters off their init so their gradients are generic."""
    for p in block.norms:
        p.gain.data = 1.0 + 0.3 * rng.normal(size=p.dim)
        p.bias.data = 0.3 * rng.normal(size=p.dim)


def gradcheck_battery(instances=20, seed=0, tol=1e-4):
    """Finite-difference check of every op and every block construction.

    Returns rows (target, max_rel_err, tol, passed), one per case, each
    aggregated over ``instances`` seeded random instances. The battery
    is deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    rows = []

    def leaf(shape, away=0.0):
        data = rng.normal(0.0, 1.0, shape)
        if away:
            data = np.sign(data) * (np.abs(data) + away)
        return Tensor(data, requires_grad=True)

    def run(name, case):
        worst = 0.0
        for _ in range(instances):
            f, inputs = case()
            worst = max(worst, gradcheck(f, inputs, tol=tol).max_rel_err)
        rows.append((name, worst, tol, worst <= tol))

    def add_case():
        a, b = leaf((3, 4)), leaf((3, 4))
        return lambda *_: tsum(add(a, b)), [a, b]

    def add_broadcast_case():
        a, b = leaf((3, 4)), leaf((4,))
        return lambda *_: tsum(add(a, b)), [a, b]

    def scale_case():
        a = leaf((2, 5))
        c = float(rng.uniform(-3.0, 3.0))
        return lambda *_: tsum(scale(a, c)), [a]

    def ewmul_case():
        a, b = leaf((2, 5)), leaf((2, 5))
        return lambda *_: tsum(ewmul(a, b)), [a, b]

    def ewmul_broadcast_case():
        a, b = leaf((2, 5)), leaf((5,))
        return lambda *_: tsum(ewmul(a, b)), [a, b]

    def matmul_case():
        a, b = leaf((3, 4)), leaf((4, 2))
        return lambda *_: tsum(matmul(a, b)), [a, b]

    def relu_case():
        # entries bounded away from the kink so central differences stay clean
        a = leaf((3, 4), away=1e-3)
        return lambda *_: tsum(relu(a)), [a]

    def xent_case():
        logits = leaf((4, 3))
        labels = rng.integers(0, 3, size=4)
        return lambda *_: softmax_cross_entropy(logits, labels), [logits]

    def layer_norm_case():
        x = leaf((4, 6))
        p = LayerNormParams.create(6)
        p.gain.data = 1.0 + 0.3 * rng.normal(size=6)
        p.bias.data = 0.3 * rng.normal(size=6)
        return lambda *_: tsum(layer_norm(x, p)), [x, p.gain, p.bias]

    def batch_norm_train_case():
        x = leaf((6, 4))
        p = BatchNormParams.create(4)
        p.gain.data = 1.0 + 0.3 * rng.normal(size=4)
        p.bias.data = 0.3 * rng.normal(size=4)
        # normalized columns sum to zero, so an unweighted sum would hide
        # the input gradient entirely
        c = Tensor(rng.normal(size=(6, 4)))
        return lambda *_: tsum(ewmul(batch_norm(x, p), c)), [x, p.gain, p.bias]

    def batch_norm_inference_case():
        x = leaf((3, 4))
        p = BatchNormParams.create(4)
        p.mode = "inference"
        p.running_mean = rng.normal(size=4)
        p.running_var = rng.uniform(0.5, 2.0, size=4)
        p.gain.data = 1.0 + 0.3 * rng.normal(size=4)
        p.bias.data = 0.3 * rng.normal(size=4)
        return lambda *_: tsum(batch_norm(x, p)), [x, p.gain, p.bias]

    run("op:add", add_case)
    run("op:add-vector", add_broadcast_case)
    run("op:scale", scale_case)
    run("op:ewmul", ewmul_case)
    run("op:ewmul-vector", ewmul_broadcast_case)
    run("op:matmul", matmul_case)
    run("op:relu", relu_case)
    run("op:softmax_cross_entropy", xent_case)
    run("op:layer_norm", layer_norm_case)
    run("op:batch_norm-training", batch_norm_train_case)
    run("op:batch_norm-inference", batch_norm_inference_case)

    block_cases = [
        SkipConstruction(SkipKind.PLAIN),
        SkipConstruction(SkipKind.XSKIP, lam=0.5),
        SkipConstruction(SkipKind.XSKIP, lam=3.0),
        SkipConstruction(SkipKind.XSKIP_LN, lam=2.0),
        SkipConstruction(SkipKind.RSKIP_LN, lam=1),
        SkipConstruction(SkipKind.RSKIP_LN, lam=2),
        SkipConstruction(SkipKind.RSKIP_LN, lam=3),
        SkipConstruction(SkipKind.RSKIP_LN, lam=4),
        SkipConstruction(SkipKind.WSKIP_LN),
        SkipConstruction(SkipKind.XSKIP_BN, lam=2.0),
        SkipConstruction(SkipKind.RSKIP_BN, lam=2),
        SkipConstruction(SkipKind.CONTRACTED_F_LN, residual_scale=0.5),
        SkipConstruction(SkipKind.CONTRACTED_F_LN, residual_scale=3.0),
    ]
    for construction in block_cases:

        def block_case(construction=construction):
            block = build_block(construction, width=5, hidden=4, rng=rng)
            _randomized_norms(block, rng)
            if block.w_skip is not None:
                block.w_skip.data = 1.0 + 0.2 * rng.normal(size=5)
            x = leaf((3, 5))
            c = Tensor(rng.normal(size=(3, 5)))  # see batch_norm_train_case
            # batch norm absorbs any shift of its input that is uniform
            # across the batch: the branch output bias always produces one,
            # a hidden bias does whenever its relu unit is active on every
            # row, and inner norm biases do recursively. Gradients along
            # such invariant directions are (near-)zero by construction and
            # finite differences there measure only rounding noise, so the
            # bias directions are left to exact invariance tests.
            skip_names = set()
            if construction.uses_bn:
                skip_names.update({"branch.b1", "branch.b2"})
                skip_names.update(f"norm{k}.bias" for k in range(1, construction.levels))
            inputs = [x] + [p for name, p, _ in block.parameters() if name not in skip_names]
            return lambda *_: tsum(ewmul(block.forward(x), c)), inputs

        run(f"block:{construction.label()}", block_case)
    return rows


def decomposition_check(lams=(1, 2, 3, 4), width=8, instances=100, seed=0, batch=4):
    """Verify the unrolled decomposition against live recursive forwards.

    For each recursion depth, runs ``instances`` random blocks, captures
    their witnesses, and returns rows (lam, max reconstruction error,
    max closed-form ratio discrepancy). The reconstruction error is the
    worst absolute deviation of coef_x*x + coef_f*f + const from the
    actual block output; the discrepancy is the worst relative gap
    between ratio_general and coef_x/coef_f where coef_f is nonzero.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for lam in lams:
        construction = SkipConstruction(SkipKind.RSKIP_LN, lam=lam)
        worst_rec, worst_disc = 0.0, 0.0
        for _ in range(instances):
            block = build_block(construction, width, hidden=width, rng=rng)
            for p in block.norms:
                # positive gains bounded away from zero keep the ratio regular
                p.gain.data = rng.uniform(0.3, 1.7, size=width)
                p.bias.data = 0.5 * rng.normal(size=width)
            for name in ("b1", "b2"):
                getattr(block.branch, name).data = 0.3 * rng.normal(
                    size=getattr(block.branch, name).data.shape
                )
            x = Tensor(rng.normal(0.0, 1.0, (batch, width)))
            y, f, witness = block.witness(x)
            coef_x, coef_f, const = unroll_decompose(witness, x.data, f.data)
            rebuilt = coef_x * x.data + coef_f * f.data + const
            worst_rec = max(worst_rec, float(np.abs(rebuilt - y.data).max()))
            ratio = ratio_general(witness)
            mask = np.abs(coef_f) > 1e-8
            oracle = coef_x[mask] / coef_f[mask]
            disc = np.abs(ratio[mask] - oracle) / np.abs(oracle)
            worst_disc = max(worst_disc, float(disc.max()) if disc.size else 0.0)
        rows.append((lam, worst_rec, worst_disc))
    return rows
