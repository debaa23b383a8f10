"""Skip-connection constructions, residual blocks, and stacked models.

Every block computes some normalized combination of its input x and a
pluggable residual transform F(x) of equal width. The combination rule
is an algebraic :class:`SkipConstruction`; the default residual branch
is a two-layer affine+relu bottleneck, but any differentiable callable
of matching width works.
"""

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, FormatError
from .normalization import BatchNormParams, LayerNormParams, batch_norm, layer_norm
from .ratio import RatioWitness, ratio_general
from .tensor import Tensor, add, ewmul, matmul, relu, scale

__all__ = [
    "SkipKind",
    "SkipConstruction",
    "AffineReluBranch",
    "ResidualBlock",
    "ModelConfig",
    "ResidualModel",
    "build_block",
    "build_model",
    "effective_scale",
    "save_model",
    "load_model",
]


class SkipKind(Enum):
    PLAIN = "plain"
    XSKIP = "xskip"
    XSKIP_LN = "xskip-ln"
    RSKIP_LN = "rskip-ln"
    WSKIP_LN = "wskip-ln"
    XSKIP_BN = "xskip-bn"
    RSKIP_BN = "rskip-bn"
    CONTRACTED_F_LN = "contracted-f-ln"


_SCALED_KINDS = {SkipKind.XSKIP, SkipKind.XSKIP_LN, SkipKind.XSKIP_BN}
_RECURSIVE_KINDS = {SkipKind.RSKIP_LN, SkipKind.RSKIP_BN}
_LN_KINDS = {SkipKind.XSKIP_LN, SkipKind.RSKIP_LN, SkipKind.WSKIP_LN, SkipKind.CONTRACTED_F_LN}
_BN_KINDS = {SkipKind.XSKIP_BN, SkipKind.RSKIP_BN}


@dataclass(frozen=True)
class SkipConstruction:
    """Combination rule of one residual block.

    ``lam`` is the shortcut scale: any positive real for the scaled
    kinds, an integer recursion depth >= 1 for the recursive kinds.
    ``residual_scale`` is the c of LN(x + c*F) and only meaningful for
    the contracted kind. Whichever field a kind does not use must stay
    at its default of 1.
    """

    kind: SkipKind
    lam: float = 1.0
    residual_scale: float = 1.0

    def __post_init__(self):
        if self.kind in _SCALED_KINDS:
            if self.lam <= 0:
                raise ConfigError(f"{self.kind.value} requires lambda > 0, got {self.lam}")
        elif self.kind in _RECURSIVE_KINDS:
            if self.lam < 1 or not float(self.lam).is_integer():
                raise ConfigError(f"{self.kind.value} requires integer lambda >= 1, got {self.lam}")
        elif self.lam != 1.0:
            raise ConfigError(f"{self.kind.value} does not use lambda; leave it at 1")
        if self.kind is SkipKind.CONTRACTED_F_LN:
            if self.residual_scale <= 0:
                raise ConfigError(f"residual_scale must be positive, got {self.residual_scale}")
        elif self.residual_scale != 1.0:
            raise ConfigError(f"{self.kind.value} does not use residual_scale; leave it at 1")

    @property
    def levels(self):
        """Number of normalization instances a block of this kind owns."""
        if self.kind in _RECURSIVE_KINDS:
            return int(self.lam)
        if self.kind in (_LN_KINDS | _BN_KINDS) - _RECURSIVE_KINDS:
            return 1
        return 0

    @property
    def uses_lambda(self):
        return self.kind in _SCALED_KINDS | _RECURSIVE_KINDS

    @property
    def uses_ln(self):
        return self.kind in _LN_KINDS

    @property
    def uses_bn(self):
        return self.kind in _BN_KINDS

    def label(self):
        """Short method name, e.g. 2xSkip+LN or LN(x+3F)."""
        k, lam = self.kind, self.lam
        if k is SkipKind.PLAIN:
            return "plain"
        if k is SkipKind.XSKIP:
            return f"{lam:g}xSkip"
        if k is SkipKind.XSKIP_LN:
            return f"{lam:g}xSkip+LN"
        if k is SkipKind.RSKIP_LN:
            return f"{int(lam)}rSkip+LN"
        if k is SkipKind.WSKIP_LN:
            return "wSkip+LN"
        if k is SkipKind.XSKIP_BN:
            return f"{lam:g}xSkip+BN"
        if k is SkipKind.RSKIP_BN:
            return f"{int(lam)}rSkip+BN"
        return f"LN(x+{self.residual_scale:g}F)"

    def arch(self):
        """Formula string for result tables."""
        k, lam = self.kind, self.lam
        if k is SkipKind.PLAIN:
            return "x+F"
        if k is SkipKind.XSKIP:
            return f"{lam:g}x+F"
        if k is SkipKind.XSKIP_LN:
            return f"LN({lam:g}x+F)"
        if k is SkipKind.XSKIP_BN:
            return f"BN({lam:g}x+F)"
        if k is SkipKind.WSKIP_LN:
            return "LN(w.x+F)"
        if k is SkipKind.CONTRACTED_F_LN:
            return f"LN(x+{self.residual_scale:g}*F)"
        norm = "LN" if k is SkipKind.RSKIP_LN else "BN"
        expr = f"{norm}(x+F)"
        for _ in range(int(lam) - 1):
            expr = f"{norm}(x+{expr})"
        return expr

    def norm_label(self):
        if self.uses_ln:
            return "LN"
        if self.uses_bn:
            return "BN"
        return "-"

    @classmethod
    def parse(cls, token, lam=None):
        """Parse a CLI token like ``xskip-ln``, ``2rskip-ln``, or
        ``contracted-f-ln:3``. A leading number or a ``lam`` argument
        supplies lambda; the ``:c`` suffix supplies the residual scale."""
        token = token.strip().lower()
        residual_scale = None
        if ":" in token:
            token, _, suffix = token.partition(":")
            residual_scale = float(suffix)
        head = token
        digits = ""
        while head and (head[0].isdigit() or head[0] == "."):
            digits += head[0]
            head = head[1:]
        if digits:
            lam = float(digits)
        try:
            kind = SkipKind(head)
        except ValueError:
            valid = ", ".join(k.value for k in SkipKind)
            raise ConfigError(f"unknown construction {token!r}; expected one of: {valid}")
        kwargs = {}
        if kind in _SCALED_KINDS | _RECURSIVE_KINDS:
            kwargs["lam"] = 1.0 if lam is None else float(lam)
        elif lam is not None:
            raise ConfigError(f"{kind.value} does not take lambda")
        if kind is SkipKind.CONTRACTED_F_LN and residual_scale is not None:
            kwargs["residual_scale"] = residual_scale
        return cls(kind, **kwargs)


# damping on the branch's output layer at init: a freshly built branch
# then adds ~1% variance per block, so a deep identity-skip stack starts
# variance-stable and any geometric growth with depth is attributable to
# the skip construction itself rather than to branch initialization
BRANCH_OUT_GAIN = 0.1


class AffineReluBranch:
    """Default residual transform: relu(x @ w1 + b1) @ w2 + b2."""

    def __init__(self, w1, b1, w2, b2):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2

    @classmethod
    def init(cls, d, hidden, rng):
        """Fan-in-scaled normal init; relu layer gets the factor-2 variance
        and the output layer the damping above."""
        return cls(
            w1=Tensor(rng.normal(0.0, np.sqrt(2.0 / d), (d, hidden)), requires_grad=True),
            b1=Tensor(np.zeros(hidden), requires_grad=True),
            w2=Tensor(rng.normal(0.0, BRANCH_OUT_GAIN * np.sqrt(1.0 / hidden), (hidden, d)), requires_grad=True),
            b2=Tensor(np.zeros(d), requires_grad=True),
        )

    def __call__(self, x):
        h = relu(add(matmul(x, self.w1), self.b1))
        return add(matmul(h, self.w2), self.b2)

    def parameters(self):
        yield "w1", self.w1, True
        yield "b1", self.b1, True
        yield "w2", self.w2, True
        yield "b2", self.b2, True

    def zero_(self):
        """Force F(x) = 0 identically (and a zero Jacobian, since the
        relu sits at its flat side)."""
        for _, p, _ in self.parameters():
            p.data[...] = 0.0


class ResidualBlock:
    """One residual block: a construction, a branch, and its norms."""

    def __init__(self, construction, branch, norms=(), w_skip=None, width=None):
        self.construction = construction
        self.branch = branch
        self.norms = list(norms)
        self.w_skip = w_skip
        if width is None:
            width = self.norms[0].dim if self.norms else None
        self.width = width

        n = construction.levels
        if len(self.norms) != n:
            raise ConfigError(f"{construction.label()} owns {n} norms, got {len(self.norms)}")
        if len({id(p) for p in self.norms}) != len(self.norms):
            raise ConfigError("normalization parameter sets must be distinct objects")
        for p in self.norms:
            want = LayerNormParams if construction.uses_ln else BatchNormParams
            if not isinstance(p, want):
                raise ConfigError(f"{construction.label()} requires {want.__name__}")
        if construction.kind is SkipKind.WSKIP_LN:
            if w_skip is None:
                raise ConfigError("wSkip+LN requires a w_skip vector")
        elif w_skip is not None:
            raise ConfigError(f"{construction.label()} does not take w_skip")

    def forward(self, x, stats_out=None, branch_out=None):
        """Apply the construction on the tape.

        ``stats_out``, if a list, receives one (mu, sigma) pair per
        layer-norm level, innermost first; ``branch_out`` receives the
        branch value F(x). Both feed the decomposition witness.
        """
        if x.data.ndim != 2 or (self.width is not None and x.data.shape[1] != self.width):
            raise DimensionError(f"block expects [batch, {self.width}] input, got {x.data.shape}")
        c = self.construction
        k = c.kind
        f = self.branch(x)
        if branch_out is not None:
            branch_out.append(f)

        if k is SkipKind.PLAIN:
            return add(x, f)
        if k is SkipKind.XSKIP:
            return add(scale(x, c.lam), f)
        if k is SkipKind.XSKIP_LN:
            return layer_norm(add(scale(x, c.lam), f), self.norms[0], stats_out)
        if k is SkipKind.WSKIP_LN:
            return layer_norm(add(ewmul(x, self.w_skip), f), self.norms[0], stats_out)
        if k is SkipKind.CONTRACTED_F_LN:
            return layer_norm(add(x, scale(f, c.residual_scale)), self.norms[0], stats_out)
        if k is SkipKind.XSKIP_BN:
            return batch_norm(add(scale(x, c.lam), f), self.norms[0])
        if k is SkipKind.RSKIP_LN:
            y = layer_norm(add(x, f), self.norms[0], stats_out)
            for p in self.norms[1:]:
                y = layer_norm(add(x, y), p, stats_out)
            return y
        if k is SkipKind.RSKIP_BN:
            y = batch_norm(add(x, f), self.norms[0])
            for p in self.norms[1:]:
                y = batch_norm(add(x, y), p)
            return y
        raise ConfigError(f"unhandled construction kind {k}")

    __call__ = forward

    def parameters(self):
        if hasattr(self.branch, "parameters"):
            for name, p, decay in self.branch.parameters():
                yield f"branch.{name}", p, decay
        for i, norm in enumerate(self.norms):
            yield f"norm{i + 1}.gain", norm.gain, False
            yield f"norm{i + 1}.bias", norm.bias, False
        if self.w_skip is not None:
            yield "w_skip", self.w_skip, False

    def witness(self, x):
        """Forward an LN block while recording its decomposition witness.

        Returns (y, f, witness) where f is the branch value. Only the
        LN-bearing kinds produce a witness; for the recursive kind it
        covers all levels innermost-first.
        """
        if not self.construction.uses_ln:
            raise ContractError("witness capture requires a layer-normalized construction")
        stats, branch_vals = [], []
        y = self.forward(x, stats_out=stats, branch_out=branch_vals)
        wit = RatioWitness(
            sigmas=tuple(s for _, s in stats),
            mus=tuple(m for m, _ in stats),
            gains=tuple(p.gain.data.copy() for p in self.norms),
            biases=tuple(p.bias.data.copy() for p in self.norms),
        )
        return y, branch_vals[0], wit


def effective_scale(block, x):
    """Shortcut/residual coefficient ratio of one block on one input.

    For the scaled-LN kind this is the modulating factor itself; for the
    recursive kind it is the closed-form ratio evaluated on the captured
    witness, averaged over rows and features; for the learned-vector
    kind it is the mean of the skip gains.
    """
    k = block.construction.kind
    if k is SkipKind.XSKIP_LN:
        return float(block.construction.lam)
    if k is SkipKind.WSKIP_LN:
        return float(block.w_skip.data.mean())
    if k is SkipKind.RSKIP_LN:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        _, _, wit = block.witness(x)
        return float(ratio_general(wit).mean())
    raise ContractError(f"effective scale is undefined for {block.construction.label()}")


@dataclass(frozen=True)
class ModelConfig:
    construction: SkipConstruction
    depth: int
    d_in: int
    width: int
    hidden: int
    classes: int
    w_skip_init: float = 1.0

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        for name in ("d_in", "width", "hidden", "classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


class ResidualModel:
    """Input projection, a stack of equal-width blocks, output projection."""

    def __init__(self, in_w, in_b, blocks, out_w, out_b, config=None):
        self.in_w, self.in_b = in_w, in_b
        self.blocks = list(blocks)
        self.out_w, self.out_b = out_w, out_b
        self.config = config

    def forward(self, x, block_inputs=None, block_outputs=None):
        """Project, run the blocks in order, project to logits.

        The optional lists receive each block's input/output tensor so
        diagnostics can read their gradients after backward.
        """
        if not isinstance(x, Tensor):
            x = Tensor(x)
        h = add(matmul(x, self.in_w), self.in_b)
        for block in self.blocks:
            if block_inputs is not None:
                block_inputs.append(h)
            h = block.forward(h)
            if block_outputs is not None:
                block_outputs.append(h)
        return add(matmul(h, self.out_w), self.out_b)

    __call__ = forward

    def parameters(self):
        yield "in_proj.w", self.in_w, True
        yield "in_proj.b", self.in_b, True
        for i, block in enumerate(self.blocks):
            for name, p, decay in block.parameters():
                yield f"block{i}.{name}", p, decay
        yield "out_proj.w", self.out_w, True
        yield "out_proj.b", self.out_b, True

    def zero_grad(self):
        for _, p, _ in self.parameters():
            p.zero_grad()

    def set_norm_mode(self, mode):
        """Switch every batch-norm instance between training/inference."""
        for block in self.blocks:
            for p in block.norms:
                if isinstance(p, BatchNormParams):
                    p.mode = mode

    def zero_branches(self):
        """Force every residual branch to the zero map (probe utility)."""
        for block in self.blocks:
            block.branch.zero_()

    def param_count(self):
        return sum(p.data.size for _, p, _ in self.parameters())


def _make_norms(construction, width):
    if construction.uses_ln:
        return [LayerNormParams.create(width) for _ in range(construction.levels)]
    if construction.uses_bn:
        return [BatchNormParams.create(width) for _ in range(construction.levels)]
    return []


def build_block(construction, width, hidden, rng, w_skip_init=1.0):
    """One freshly initialized block: branch draws from rng, norm gains
    start at 1 and biases at 0, w_skip at the given constant."""
    branch = AffineReluBranch.init(width, hidden, rng)
    w_skip = None
    if construction.kind is SkipKind.WSKIP_LN:
        w_skip = Tensor(np.full(width, float(w_skip_init)), requires_grad=True)
    return ResidualBlock(construction, branch, _make_norms(construction, width), w_skip, width=width)


def build_model(cfg, seed):
    """Deterministically initialize a model from a config and a seed.

    Identical (cfg, seed) pairs produce bit-identical parameters. Norm
    creation consumes no random draws, so constructions differing only
    in their normalization share branch initializations under one seed.
    """
    rng = np.random.default_rng(seed)
    c = cfg.construction
    in_w = Tensor(rng.normal(0.0, np.sqrt(1.0 / cfg.d_in), (cfg.d_in, cfg.width)), requires_grad=True)
    in_b = Tensor(np.zeros(cfg.width), requires_grad=True)
    blocks = [build_block(c, cfg.width, cfg.hidden, rng, cfg.w_skip_init) for _ in range(cfg.depth)]
    out_w = Tensor(rng.normal(0.0, np.sqrt(1.0 / cfg.width), (cfg.width, cfg.classes)), requires_grad=True)
    out_b = Tensor(np.zeros(cfg.classes), requires_grad=True)
    return ResidualModel(in_w, in_b, blocks, out_w, out_b, config=cfg)


# checkpoint layout: magic, version, construction, geometry, then every
# parameter in declaration order as little-endian doubles
_MAGIC = b"SKNM"
_VERSION = 1
_KIND_CODES = {k: i for i, k in enumerate(SkipKind)}
_CODE_KINDS = {i: k for k, i in _KIND_CODES.items()}
_HEADER = struct.Struct("<4sII d d IIIII Q")


def save_model(model, path):
    """Write a model checkpoint as a flat little-endian binary file."""
    cfg = model.config
    if cfg is None:
        raise ContractError("only models carrying a ModelConfig can be checkpointed")
    payload = b"".join(
        np.ascontiguousarray(p.data, dtype="<f8").tobytes() for _, p, _ in model.parameters()
    )
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        _KIND_CODES[cfg.construction.kind],
        cfg.construction.lam,
        cfg.construction.residual_scale,
        cfg.depth,
        cfg.d_in,
        cfg.width,
        cfg.hidden,
        cfg.classes,
        model.param_count(),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_model(path):
    """Rebuild a model from a checkpoint; returns (model, config)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, kind_code, lam, residual_scale, depth, d_in, width, hidden, classes, count = (
        _HEADER.unpack_from(raw)
    )
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if kind_code not in _CODE_KINDS:
        raise FormatError(f"{path}: unknown construction code {kind_code}")
    construction = SkipConstruction(_CODE_KINDS[kind_code], lam, residual_scale)
    cfg = ModelConfig(construction, depth, d_in, width, hidden, classes)
    model = build_model(cfg, seed=0)
    if model.param_count() != count:
        raise FormatError(f"{path}: header declares {count} doubles, model has {model.param_count()}")
    expected = _HEADER.size + 8 * count
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    offset = _HEADER.size
    for _, p, _ in model.parameters():
        n = p.data.size
        vals = np.frombuffer(raw, dtype="<f8", count=n, offset=offset)
        p.data = vals.astype(np.float64).reshape(p.data.shape)
        offset += 8 * n
    return model, cfg
