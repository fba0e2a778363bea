"""Full model assembly: 3-scale MIMO U-Net with MS-FE encoders and FEBP skips.

Pipeline: the input image is mean-pooled to half and quarter resolution;
each scale runs MS-FE (or a plain conv stem for the ablation baseline) and
fuses the downsampled previous level, then a residual-block stack.  FEBP
modules at levels 1 and 2 gate the fused multi-scale features and feed the
decoder as skip connections; scale 3 feeds the decoder bottom directly.
The decoder ascends with transposed convolutions and emits a 3-channel map
per scale, added to the scale's input when residual output is on.
"""

import math
from collections import OrderedDict
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from . import autodiff as ag
from . import blocks, ops
from .blocks import BnParams, ConvPair, FebpParams, MsfeFuseParams, MsfeParams
from .errors import ContractViolation

_STATE_SUFFIXES = (".running_mean", ".running_var")


@dataclass
class ModelConfig:
    """Architecture hyperparameters; the parameter name set is a pure
    function of this config."""
    c_base: int = 32
    n_resblocks: int = 8
    leaky_slope: float = 0.2
    use_msfe: bool = True
    use_febp: bool = True
    residual_output: bool = True
    msfe_bn: bool = True
    dtype: str = "float32"

    def validate(self):
        if self.c_base < 4 or self.c_base % 2:
            raise ContractViolation(
                f"c_base must be even and >= 4, got {self.c_base}")
        if self.n_resblocks < 1:
            raise ContractViolation(
                f"n_resblocks must be >= 1, got {self.n_resblocks}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ContractViolation(
                f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        if self.dtype not in ("float32", "float64"):
            raise ContractViolation(
                f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def widths(self):
        """Channel width per scale; doubles going down."""
        return (self.c_base, 2 * self.c_base, 4 * self.c_base)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


class ModelParams(Mapping):
    """Named tensors of one model instance (trainable + BN running stats)."""

    def __init__(self, tensors):
        self.tensors = OrderedDict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    @staticmethod
    def is_state(name):
        return name.endswith(_STATE_SUFFIXES)

    def trainable_names(self):
        return [n for n in self.tensors if not self.is_state(n)]

    def n_trainable(self):
        return sum(self.tensors[n].size for n in self.trainable_names())


def param_shapes(config):
    """Ordered name -> shape map for every tensor the config implies."""
    config.validate()
    cs = config.widths
    shapes = OrderedDict()

    def conv(name, cout, cin, kh, kw, bias=True):
        shapes[f"{name}.w"] = (cout, cin, kh, kw)
        if bias:
            shapes[f"{name}.b"] = (cout,)

    def bn(name, c):
        for suffix, _ in (("gamma", 1), ("beta", 0),
                          ("running_mean", 0), ("running_var", 1)):
            shapes[f"{name}.{suffix}"] = (c,)

    def fout(name, cin, cout):
        conv(f"{name}.conv1", cout, cin, 3, 3)
        conv(f"{name}.conv2", cout, cout, 3, 3)

    for k in (1, 2, 3):
        c = cs[k - 1]
        c_prev = cs[k - 2] if k > 1 else None
        pre = f"enc{k}"
        if config.use_msfe:
            conv(f"{pre}.msfe.entry", c, 3, 3, 3)
            for n in blocks.STRIP_SIZES:
                shapes[f"{pre}.msfe.depth{n}.w"] = (c, 1, n, n)
            if config.msfe_bn:
                bn(f"{pre}.msfe.bn_pre", 4 * c)
            shapes[f"{pre}.msfe.point.w"] = (c, 4 * c, 1, 1)
            if config.msfe_bn:
                bn(f"{pre}.msfe.bn_post", c)
            conv(f"{pre}.msfe.mix", c, c + 3, 1, 1)
            if k > 1:
                conv(f"{pre}.fuse.m", c, c, 1, 1)
                conv(f"{pre}.fuse.s", c, c_prev, 3, 3)
                conv(f"{pre}.fuse.mix", c, c, 3, 3)
                conv(f"{pre}.fuse.proj", c, c_prev + c, 1, 1)
            fout(f"{pre}.fout", c, c)
        else:
            conv(f"{pre}.stem", c, 3, 3, 3)
            if k > 1:
                conv(f"{pre}.down", c, c_prev, 3, 3)
                conv(f"{pre}.mix", c, 2 * c, 1, 1)
        for j in range(1, config.n_resblocks + 1):
            fout(f"{pre}.res{j}", c, c)

    if config.use_febp:
        for level in (1, 2):
            c = cs[level - 1]
            pre = f"febp{level}"
            conv(f"{pre}.fuse3", c, sum(cs), 3, 3)
            conv(f"{pre}.fuse1", c, c, 1, 1)
            conv(f"{pre}.strip.n1", c, c, 3, 1)
            for n in (3, 5, 7):
                conv(f"{pre}.strip.n{n}", c, c, 3, 3)
            fout(f"{pre}.strip.fout", 4 * c, c)
            for sb in ("ll", "lh", "hl", "hh"):
                fout(f"{pre}.wave.{sb}", c, c)
            fout(f"{pre}.mask", c, c)

    for k in (3, 2, 1):
        c = cs[k - 1]
        pre = f"dec{k}"
        if k < 3:
            shapes[f"{pre}.up.w"] = (cs[k], c, 4, 4)
            conv(f"{pre}.skip", c, 2 * c, 1, 1)
        for j in range(1, config.n_resblocks + 1):
            fout(f"{pre}.res{j}", c, c)
        conv(f"{pre}.head", 3, c, 3, 3)
    return shapes


def build(config, seed):
    """Deterministic parameter init: U(-1/sqrt(fan_in), +1/sqrt(fan_in))
    conv weights, zero biases, BN gamma 1 / beta 0."""
    shapes = param_shapes(config)
    rng = np.random.default_rng(seed)
    dt = config.np_dtype
    tensors = OrderedDict()
    for name, shape in shapes.items():
        if name.endswith(".gamma") or name.endswith(".running_var"):
            arr = np.ones(shape, dt)
        elif name.endswith((".beta", ".running_mean", ".b")):
            arr = np.zeros(shape, dt)
        else:
            # uniform with variance 1/fan_in, so layer gain stays near 1
            fan_in = int(np.prod(shape[1:]))
            bound = math.sqrt(3.0 / fan_in)
            arr = rng.uniform(-bound, bound, size=shape).astype(dt)
        tensors[name] = arr
    return ModelParams(tensors)


def count_params(config):
    """Exact trainable scalar count implied by the config."""
    return sum(int(np.prod(shape)) for name, shape in param_shapes(config).items()
               if not ModelParams.is_state(name))


# ---------------------------------------------------------------------------
# parameter views
# ---------------------------------------------------------------------------

def _conv_pair(params, name):
    return ConvPair(params[f"{name}.conv1.w"], params[f"{name}.conv1.b"],
                    params[f"{name}.conv2.w"], params[f"{name}.conv2.b"])


def _bn_params(params, name, enabled):
    if not enabled:
        return None
    return BnParams(params[f"{name}.gamma"], params[f"{name}.beta"],
                    params[f"{name}.running_mean"], params[f"{name}.running_var"])


def msfe_view(params, scale, config):
    """Assemble the MS-FE parameter bundle for one encoder scale."""
    pre = f"enc{scale}.msfe"
    fuse = None
    if scale > 1:
        fpre = f"enc{scale}.fuse"
        fuse = MsfeFuseParams(
            params[f"{fpre}.m.w"], params[f"{fpre}.m.b"],
            params[f"{fpre}.s.w"], params[f"{fpre}.s.b"],
            params[f"{fpre}.mix.w"], params[f"{fpre}.mix.b"],
            params[f"{fpre}.proj.w"], params[f"{fpre}.proj.b"])
    return MsfeParams(
        entry_w=params[f"{pre}.entry.w"], entry_b=params[f"{pre}.entry.b"],
        depth={n: params[f"{pre}.depth{n}.w"] for n in blocks.STRIP_SIZES},
        bn_pre=_bn_params(params, f"{pre}.bn_pre", config.msfe_bn),
        point_w=params[f"{pre}.point.w"],
        bn_post=_bn_params(params, f"{pre}.bn_post", config.msfe_bn),
        mix_w=params[f"{pre}.mix.w"], mix_b=params[f"{pre}.mix.b"],
        fuse=fuse,
        fout=_conv_pair(params, f"enc{scale}.fout"))


def febp_view(params, level):
    """Assemble the FEBP parameter bundle for one level."""
    pre = f"febp{level}"
    return FebpParams(
        fuse3_w=params[f"{pre}.fuse3.w"], fuse3_b=params[f"{pre}.fuse3.b"],
        fuse1_w=params[f"{pre}.fuse1.w"], fuse1_b=params[f"{pre}.fuse1.b"],
        strip={n: (params[f"{pre}.strip.n{n}.w"], params[f"{pre}.strip.n{n}.b"])
               for n in blocks.STRIP_SIZES},
        strip_fout=_conv_pair(params, f"{pre}.strip.fout"),
        wave={sb: _conv_pair(params, f"{pre}.wave.{sb}")
              for sb in ("ll", "lh", "hl", "hh")},
        mask=_conv_pair(params, f"{pre}.mask"))


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def forward(params, config, b1, training=False):
    """Run the network on a (n, 3, H, W) batch in [0, 1].

    H and W must be divisible by 8 (and >= 16 when FEBP is on, so the
    half-resolution strips fit).  Returns restored images at scales 1, 2, 3
    with shapes (n,3,H,W), (n,3,H/2,W/2), (n,3,H/4,W/4); outputs are not
    clamped.
    """
    config.validate()
    xv = ag.value_of(b1)
    ops.check_nchw(xv, "network input")
    n, c, h, w = xv.shape
    if c != 3:
        raise ContractViolation(f"network input must have 3 channels, got {c}")
    if h % 8 or w % 8:
        raise ContractViolation(
            f"input dims must be divisible by 8, got {h}x{w}")
    if config.use_febp and (h // 2 < 7 or w // 2 < 7):
        raise ContractViolation(
            f"FEBP strip pooling needs half-scale dims >= 7; "
            f"input {h}x{w} is too small (need >= 16)")
    if not isinstance(b1, ag.Var) and xv.dtype != config.np_dtype:
        b1 = xv.astype(config.np_dtype)
    slope = config.leaky_slope

    b2 = ag.resize_half(b1)
    b3 = ag.resize_half(b2)
    scales = (b1, b2, b3)

    enc = []
    prev = None
    for k in (1, 2, 3):
        pre = f"enc{k}"
        if config.use_msfe:
            view = msfe_view(params, k, config)
            m = blocks.msfe_forward(scales[k - 1], view, slope, training)
            s_prev = ag.resize_half(prev) if prev is not None else None
            feat = blocks.msfe_fuse(m, s_prev, view, slope)
        else:
            feat = ag.leaky_relu(
                ag.conv2d(scales[k - 1], params[f"{pre}.stem.w"],
                          params[f"{pre}.stem.b"], padding=1), slope)
            if prev is not None:
                down = ag.conv2d(prev, params[f"{pre}.down.w"],
                                 params[f"{pre}.down.b"], stride=2, padding=1)
                feat = ag.conv2d(ag.concat_channels([feat, down]),
                                 params[f"{pre}.mix.w"], params[f"{pre}.mix.b"])
        for j in range(1, config.n_resblocks + 1):
            feat = blocks.resblock_forward(
                feat, _conv_pair(params, f"{pre}.res{j}"), slope)
        enc.append(feat)
        prev = feat
    e1, e2, e3 = enc

    if config.use_febp:
        skip1 = blocks.febp_forward(e1, e2, e3, 1, febp_view(params, 1), slope)
        skip2 = blocks.febp_forward(e1, e2, e3, 2, febp_view(params, 2), slope)
    else:
        skip1, skip2 = e1, e2

    outputs = {}
    d = e3
    for k in (3, 2, 1):
        pre = f"dec{k}"
        if k < 3:
            up = ag.conv_transpose2d(d, params[f"{pre}.up.w"],
                                     stride=2, padding=1)
            skip = skip2 if k == 2 else skip1
            d = ag.conv2d(ag.concat_channels([up, skip]),
                          params[f"{pre}.skip.w"], params[f"{pre}.skip.b"])
        for j in range(1, config.n_resblocks + 1):
            d = blocks.resblock_forward(
                d, _conv_pair(params, f"{pre}.res{j}"), slope)
        out = ag.conv2d(d, params[f"{pre}.head.w"], params[f"{pre}.head.b"],
                        padding=1)
        if config.residual_output:
            out = ag.add(out, scales[k - 1])
        outputs[k] = out
    return outputs[1], outputs[2], outputs[3]
