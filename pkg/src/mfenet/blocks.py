"""The two novel building blocks (MS-FE and FEBP) plus the plain resblock.

All forwards are pure functions over immutable parameter bundles whose
fields hold either plain arrays or autodiff Vars; they trace onto the
active tape when given Vars.  `slope` is the engine-wide LeakyReLU slope
(1.0 turns the activation into the identity, which test harnesses use to
bypass it).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ag
from .errors import ContractViolation
from .wavelet import Subbands, haar_dwt2, haar_idwt2

STRIP_SIZES = (1, 3, 5, 7)


@dataclass
class ConvPair:
    """Two stacked convolutions, the shape of every f_out and resblock."""
    w1: object
    b1: object
    w2: object
    b2: object


@dataclass
class BnParams:
    gamma: object
    beta: object
    running_mean: object
    running_var: object


@dataclass
class MsfeFuseParams:
    """Convs for fusing the previous scale's features (levels 2 and 3)."""
    m_w: object      # 1x1 on this scale's features
    m_b: object
    s_w: object      # 3x3 on the downsampled previous-scale features
    s_b: object
    mix_w: object    # 3x3 on the elementwise product
    mix_b: object
    proj_w: object   # 1x1 projecting the concat back to the scale width
    proj_b: object


@dataclass
class MsfeParams:
    entry_w: object
    entry_b: object
    depth: dict          # strip size -> depthwise kernel (c, 1, n, n)
    bn_pre: BnParams     # or None to run without normalization
    point_w: object      # (c, 4c, 1, 1)
    bn_post: BnParams
    mix_w: object        # (c, c + 3, 1, 1) after concat with the raw image
    mix_b: object
    fuse: MsfeFuseParams  # None at the top scale
    fout: ConvPair


@dataclass
class FebpParams:
    fuse3_w: object      # 3x3 over the concatenated multi-scale features
    fuse3_b: object
    fuse1_w: object      # 1x1 to the level width
    fuse1_b: object
    strip: dict          # n -> (weight, bias); n=1 weight is (c, c, 3, 1)
    strip_fout: ConvPair
    wave: dict           # "ll"/"lh"/"hl"/"hh" -> ConvPair
    mask: ConvPair


def f_out(x, pair, slope):
    """Conv -> LeakyReLU -> Conv with same padding derived from the kernel."""
    w1 = ag.value_of(pair.w1)
    w2 = ag.value_of(pair.w2)
    h = ag.conv2d(x, pair.w1, pair.b1,
                  padding=(w1.shape[2] // 2, w1.shape[3] // 2))
    h = ag.leaky_relu(h, slope)
    return ag.conv2d(h, pair.w2, pair.b2,
                     padding=(w2.shape[2] // 2, w2.shape[3] // 2))


def resblock_forward(x, pair, slope=0.2):
    """x + Conv3x3(LeakyReLU(Conv3x3(x))); shape preserved."""
    return ag.add(x, f_out(x, pair, slope))


# ---------------------------------------------------------------------------
# strip pooling
# ---------------------------------------------------------------------------

def strip_geometry(axis_len, n):
    """Stride and window size for n strips: S = floor(L/n), K = L - (n-1)S."""
    stride = axis_len // n
    kernel = axis_len - (n - 1) * stride
    return stride, kernel


def strip_pool(fm, n, orientation):
    """Average long thin windows along one axis.

    "vertical" returns the (n_batch, c, H, n) map pooled along width,
    "horizontal" the (n_batch, c, n, W) map pooled along height, matching
    the strip definitions with stride floor(axis/n) and window
    axis - (n-1)*stride.
    """
    v = ag.value_of(fm)
    if v.ndim != 4:
        raise ContractViolation(f"strip_pool needs NCHW input, got {v.shape}")
    if n not in STRIP_SIZES:
        raise ContractViolation(f"strip size must be one of {STRIP_SIZES}")
    h, w = v.shape[2], v.shape[3]
    if n > min(h, w):
        raise ContractViolation(
            f"strip size {n} exceeds the smallest spatial dim of {h}x{w}")
    if orientation == "vertical":
        stride, kernel = strip_geometry(w, n)
        out = np.stack(
            [v[:, :, :, j * stride:j * stride + kernel].mean(axis=3)
             for j in range(n)], axis=3)

        def vjp(gs, needs):
            (g,) = gs
            dv = np.zeros_like(v)
            for j in range(n):
                dv[:, :, :, j * stride:j * stride + kernel] += \
                    (g[:, :, :, j] / kernel)[:, :, :, None]
            return (dv,)

    elif orientation == "horizontal":
        stride, kernel = strip_geometry(h, n)
        out = np.stack(
            [v[:, :, j * stride:j * stride + kernel, :].mean(axis=2)
             for j in range(n)], axis=2)

        def vjp(gs, needs):
            (g,) = gs
            dv = np.zeros_like(v)
            for j in range(n):
                dv[:, :, j * stride:j * stride + kernel, :] += \
                    (g[:, :, j, :] / kernel)[:, :, None, :]
            return (dv,)

    else:
        raise ContractViolation(
            f"orientation must be 'vertical' or 'horizontal', got {orientation!r}")
    return ag.apply_op(out, (fm,), vjp)


def strip_expand(y, orientation, out_len):
    """Nearest-index expansion back to the full axis.

    Output position p reads strip index floor(n*p/out_len); the index map
    is nondecreasing, so the adjoint reduces contiguous runs.
    """
    v = ag.value_of(y)
    axis = 3 if orientation == "vertical" else 2
    n = v.shape[axis]
    idx = (n * np.arange(out_len)) // out_len
    lo = np.searchsorted(idx, np.arange(n), side="left")
    hi = np.searchsorted(idx, np.arange(n), side="right")
    if orientation == "vertical":
        out = v[:, :, :, idx]

        def vjp(gs, needs):
            (g,) = gs
            return (np.stack([g[:, :, :, a:b].sum(axis=3)
                              for a, b in zip(lo, hi)], axis=3),)

    else:
        out = v[:, :, idx, :]

        def vjp(gs, needs):
            (g,) = gs
            return (np.stack([g[:, :, a:b, :].sum(axis=2)
                              for a, b in zip(lo, hi)], axis=2),)

    return ag.apply_op(np.ascontiguousarray(out), (y,), vjp)


def strip_features(fm, n, params):
    """One strip size's fused map: pool, conv, expand, add both orientations."""
    v = ag.value_of(fm)
    h, w_dim = v.shape[2], v.shape[3]
    weight, bias = params.strip[n]
    wv = ag.value_of(weight)
    y_v = strip_pool(fm, n, "vertical")
    y_h = strip_pool(fm, n, "horizontal")
    y_v = ag.conv2d(y_v, weight, bias,
                    padding=(wv.shape[2] // 2, wv.shape[3] // 2))
    # the horizontal map is the transposed geometry, so share the kernel
    # with its spatial axes swapped
    y_h = ag.conv2d(y_h, ag.transpose_hw(weight), bias,
                    padding=(wv.shape[3] // 2, wv.shape[2] // 2))
    y_v = strip_expand(y_v, "vertical", w_dim)
    y_h = strip_expand(y_h, "horizontal", h)
    return ag.add(y_v, y_h)


def blur_branch(fm, params, slope=0.2):
    """Multi-strip blur perception: all four strip sizes, concat, f_out."""
    v = ag.value_of(fm)
    if min(v.shape[2], v.shape[3]) < max(STRIP_SIZES):
        raise ContractViolation(
            f"blur_branch needs spatial dims >= {max(STRIP_SIZES)}, "
            f"got {v.shape[2]}x{v.shape[3]}")
    ys = [strip_features(fm, n, params) for n in STRIP_SIZES]
    return f_out(ag.concat_channels(ys), params.strip_fout, slope)


# ---------------------------------------------------------------------------
# frequency branch
# ---------------------------------------------------------------------------

def freq_branch(fm, params, slope=0.2):
    """Haar-analyze, transform each sub-band with its f_out, synthesize."""
    sb = haar_dwt2(fm)
    processed = Subbands(
        f_out(sb.ll, params.wave["ll"], slope),
        f_out(sb.lh, params.wave["lh"], slope),
        f_out(sb.hl, params.wave["hl"], slope),
        f_out(sb.hh, params.wave["hh"], slope),
    )
    return haar_idwt2(processed)


# ---------------------------------------------------------------------------
# MS-FE
# ---------------------------------------------------------------------------

def msfe_forward(b_k, params, slope=0.2, training=False):
    """Multi-scale depthwise extraction on one scale's raw image.

    entry conv + LeakyReLU, four same-padded depthwise branches (1/3/5/7)
    concatenated, BN -> pointwise -> BN, then concat with the input and a
    1x1 mix back to the scale width.
    """
    f = ag.conv2d(b_k, params.entry_w, params.entry_b, padding=1)
    f = ag.leaky_relu(f, slope)
    c = ag.value_of(params.entry_w).shape[0]
    branches = [ag.conv2d(f, params.depth[n], None, padding=n // 2, groups=c)
                for n in STRIP_SIZES]
    d = ag.concat_channels(branches)
    if params.bn_pre is not None:
        d = ag.batch_norm(d, params.bn_pre.gamma, params.bn_pre.beta,
                          params.bn_pre.running_mean,
                          params.bn_pre.running_var, training)
    p = ag.conv2d(d, params.point_w, None)
    if params.bn_post is not None:
        p = ag.batch_norm(p, params.bn_post.gamma, params.bn_post.beta,
                          params.bn_post.running_mean,
                          params.bn_post.running_var, training)
    return ag.conv2d(ag.concat_channels([p, b_k]), params.mix_w, params.mix_b)


def msfe_fuse(m_k, s_prev_down, params, slope=0.2):
    """Fuse with the upper scale and apply the residual output mapping.

    s_prev_down is the previous scale's output already downsampled to this
    scale, or None at the top scale (where the fused features are m_k
    itself).  Returns m_out + f_out(m_out).
    """
    if s_prev_down is None:
        m_out = m_k
    else:
        a = ag.conv2d(m_k, params.fuse.m_w, params.fuse.m_b)
        s = ag.conv2d(s_prev_down, params.fuse.s_w, params.fuse.s_b, padding=1)
        inner = ag.conv2d(ag.mul(a, s), params.fuse.mix_w, params.fuse.mix_b,
                          padding=1)
        m_out = ag.conv2d(ag.concat_channels([s_prev_down, inner]),
                          params.fuse.proj_w, params.fuse.proj_b)
    return ag.add(m_out, f_out(m_out, params.fout, slope))


# ---------------------------------------------------------------------------
# FEBP
# ---------------------------------------------------------------------------

def febp_forward(s1, s2, s3, level, params, slope=0.2):
    """Fuse the three scales, run both branches, gate with a sigmoid mask.

    level 1 fuses at full resolution (s2 and s3 upsampled); level 2 at half
    resolution (s1 downsampled, s3 upsampled).  Output shape equals the
    fused feature shape; mask values lie in (0, 1).
    """
    if level == 1:
        cat = ag.concat_channels(
            [s1, ag.resize_double(s2), ag.resize_double(ag.resize_double(s3))])
    elif level == 2:
        cat = ag.concat_channels(
            [ag.resize_half(s1), s2, ag.resize_double(s3)])
    else:
        raise ContractViolation(f"febp level must be 1 or 2, got {level}")
    fm = ag.conv2d(cat, params.fuse3_w, params.fuse3_b, padding=1)
    fm = ag.conv2d(fm, params.fuse1_w, params.fuse1_b)
    combined = ag.add(blur_branch(fm, params, slope),
                      freq_branch(fm, params, slope))
    mask = ag.sigmoid(f_out(combined, params.mask, slope))
    return ag.mul(fm, mask)
