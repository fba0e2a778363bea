"""Elementary NCHW layer operations with analytic forward/backward passes.

Tensors are plain numpy arrays of shape (n, c, h, w), float32 by default and
float64 in gradient-check mode.  Every function here is pure numpy and
deterministic; the differentiable wrappers live in :mod:`mfenet.autodiff`.

Conventions: cross-correlation (no kernel flip), zero padding, output size
floor((h + 2p - k) / s) + 1.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractViolation


def _pair(v):
    return v if isinstance(v, tuple) else (v, v)


def check_nchw(x, name="tensor"):
    """Raise ContractViolation unless x is a 4-D (n, c, h, w) array."""
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ContractViolation(
            f"{name} must be a 4-D NCHW array, got "
            f"{getattr(x, 'shape', type(x).__name__)}"
        )


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_geometry(x, w, stride, padding, groups):
    check_nchw(x, "conv input")
    check_nchw(w, "conv weight")
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if groups < 1 or cin % groups or cout % groups:
        raise ContractViolation(
            f"groups={groups} must divide c_in={cin} and c_out={cout}")
    if cin_g != cin // groups:
        raise ContractViolation(
            f"weight c_in/groups dim is {cin_g}, expected {cin // groups} "
            f"for c_in={cin}, groups={groups}")
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ContractViolation(
            f"kernel {kh}x{kw} with padding {padding} does not fit "
            f"input {h}x{wd}")
    return n, cin, h, wd, cout, cin_g, kh, kw, sh, sw, ph, pw, ho, wo


def _im2col(x, kh, kw, sh, sw, ph, pw, groups):
    """Return strided patches shaped (n, groups, cin_g*kh*kw, ho*wo)."""
    n, cin = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    ho, wo = win.shape[2], win.shape[3]
    cin_g = cin // groups
    win = win.reshape(n, groups, cin_g, ho, wo, kh, kw)
    cols = win.transpose(0, 1, 2, 5, 6, 3, 4).reshape(
        n, groups, cin_g * kh * kw, ho * wo)
    return cols, ho, wo


def conv2d_forward(x, w, b=None, stride=1, padding=0, groups=1):
    """conv2d returning (out, cols) so a backward pass can reuse the patches."""
    (n, cin, h, wd, cout, cin_g, kh, kw,
     sh, sw, ph, pw, ho, wo) = _conv_geometry(x, w, stride, padding, groups)
    cols, _, _ = _im2col(x, kh, kw, sh, sw, ph, pw, groups)
    wg = w.reshape(groups, cout // groups, cin_g * kh * kw)
    out = (wg @ cols).reshape(n, cout, ho, wo)
    if b is not None:
        if b.shape != (cout,):
            raise ContractViolation(
                f"bias shape {b.shape} does not match c_out={cout}")
        out += b.reshape(1, cout, 1, 1)
    return out, cols


def conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    """2-D cross-correlation; weight (c_out, c_in/groups, kh, kw)."""
    return conv2d_forward(x, w, b, stride, padding, groups)[0]


def conv2d_weight_grad(x, g, w_shape, stride=1, padding=0, groups=1,
                       cols=None):
    """dLoss/dweight for conv2d given upstream gradient g."""
    cout, cin_g, kh, kw = w_shape
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    n = x.shape[0]
    ho, wo = g.shape[2], g.shape[3]
    if cols is None:
        cols, ho, wo = _im2col(x, kh, kw, sh, sw, ph, pw, groups)
    gmat = g.reshape(n, groups, cout // groups, ho * wo)
    dw = (gmat @ cols.transpose(0, 1, 3, 2)).sum(axis=0)
    return dw.reshape(w_shape)


def conv2d_input_grad(g, w, x_shape, stride=1, padding=0, groups=1):
    """dLoss/dinput for conv2d; also the forward map of conv_transpose2d."""
    n, cin, h, wd = x_shape
    cout, cin_g, kh, kw = w.shape
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    ho, wo = g.shape[2], g.shape[3]
    cout_g = cout // groups
    gmat = g.reshape(n, groups, cout_g, ho * wo)
    wmat = w.reshape(groups, cout_g, cin_g * kh * kw)
    t = wmat.transpose(0, 2, 1) @ gmat           # (n, g, cin_g*kh*kw, ho*wo)
    t = t.reshape(n, groups * cin_g, kh, kw, ho, wo)
    dxp = np.zeros((n, cin, h + 2 * ph, wd + 2 * pw), dtype=g.dtype)
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u:u + sh * ho:sh, v:v + sw * wo:sw] += t[:, :, u, v]
    return dxp[:, :, ph:ph + h, pw:pw + wd]


def conv_transpose2d(x, w, stride=2, padding=1):
    """Adjoint of conv2d: input has w.shape[0] channels, output w.shape[1].

    For the decoder configuration (k=4, stride=2, padding=1) spatial dims
    exactly double.
    """
    check_nchw(x, "conv_transpose input")
    check_nchw(w, "conv_transpose weight")
    n, cin, h, wd = x.shape
    cout, cout_t, kh, kw = w.shape
    if cin != cout:
        raise ContractViolation(
            f"conv_transpose input has {cin} channels, weight expects {cout}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    hout = (h - 1) * sh + kh - 2 * ph
    wout = (wd - 1) * sw + kw - 2 * pw
    if hout < 1 or wout < 1:
        raise ContractViolation(
            f"conv_transpose output {hout}x{wout} is empty")
    return conv2d_input_grad(x, w, (n, cout_t, hout, wout), stride, padding, 1)


# ---------------------------------------------------------------------------
# activations and elementwise ops
# ---------------------------------------------------------------------------

def leaky_relu(x, slope=0.2):
    """Elementwise x if x >= 0 else slope*x.  Caller keeps slope in (0, 1)."""
    return np.where(x >= 0, x, slope * x)


def leaky_relu_grad(x, g, slope=0.2):
    return np.where(x >= 0, g, slope * g)


def sigmoid(x):
    """Numerically stable logistic; saturates without overflow."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def add(x, y):
    if x.shape != y.shape:
        raise ContractViolation(f"add shapes differ: {x.shape} vs {y.shape}")
    return x + y


def mul(x, y):
    if x.shape != y.shape:
        raise ContractViolation(f"mul shapes differ: {x.shape} vs {y.shape}")
    return x * y


def concat_channels(xs):
    """Concatenate along the channel axis; n/h/w must match."""
    first = xs[0]
    check_nchw(first, "concat input")
    for x in xs[1:]:
        check_nchw(x, "concat input")
        if (x.shape[0], x.shape[2], x.shape[3]) != \
                (first.shape[0], first.shape[2], first.shape[3]):
            raise ContractViolation(
                f"concat n/h/w mismatch: {x.shape} vs {first.shape}")
    return np.concatenate(xs, axis=1)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Per-channel batch norm.

    Train mode normalizes by batch statistics and updates the running
    arrays in place; eval mode uses the running statistics.  Returns
    (out, cache) where cache feeds :func:`batch_norm_grad`.
    """
    check_nchw(x, "batch_norm input")
    n, c, h, w = x.shape
    if n * h * w == 0:
        raise ContractViolation("batch_norm requires a non-empty batch")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ContractViolation(
            f"batch_norm gamma/beta must have shape ({c},)")
    if training:
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean[...] = (1.0 - momentum) * running_mean + momentum * mu
        running_var[...] = (1.0 - momentum) * running_var + momentum * var
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = gamma.reshape(1, c, 1, 1) * xhat + beta.reshape(1, c, 1, 1)
    cache = (xhat, inv, gamma, training)
    return out, cache


def batch_norm_grad(g, cache):
    """Returns (dx, dgamma, dbeta)."""
    xhat, inv, gamma, training = cache
    c = xhat.shape[1]
    dbeta = g.sum(axis=(0, 2, 3))
    dgamma = (g * xhat).sum(axis=(0, 2, 3))
    k = (gamma * inv).reshape(1, c, 1, 1)
    if training:
        m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
        dx = k * (g - dbeta.reshape(1, c, 1, 1) / m
                  - xhat * dgamma.reshape(1, c, 1, 1) / m)
    else:
        dx = k * g
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def resize_half(x):
    """2x2 mean-pool downsampling; h and w must be even."""
    check_nchw(x, "resize_half input")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ContractViolation(
            f"resize_half needs even dims, got {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def resize_half_grad(g):
    """Adjoint of resize_half: spread each gradient over its 2x2 block / 4."""
    return np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25


def _up2_axis(x, axis):
    """Double one axis bilinearly (align_corners off, borders clamped).

    Output sample i reads input coordinate (i + 0.5)/2 - 0.5, so
    out[2i] = 0.25*x[i-1] + 0.75*x[i] and out[2i+1] = 0.75*x[i] + 0.25*x[i+1].
    """
    x = np.moveaxis(x, axis, -1)
    left = np.concatenate([x[..., :1], x[..., :-1]], axis=-1)
    right = np.concatenate([x[..., 1:], x[..., -1:]], axis=-1)
    out = np.stack([0.25 * left + 0.75 * x, 0.75 * x + 0.25 * right], axis=-1)
    out = out.reshape(x.shape[:-1] + (2 * x.shape[-1],))
    return np.moveaxis(out, -1, axis)


def _up2_axis_adjoint(g, axis):
    g = np.moveaxis(g, axis, -1)
    ge = g[..., 0::2]
    go = g[..., 1::2]
    dx = 0.75 * (ge + go)
    dx[..., :-1] += 0.25 * ge[..., 1:]
    dx[..., 0] += 0.25 * ge[..., 0]
    dx[..., 1:] += 0.25 * go[..., :-1]
    dx[..., -1] += 0.25 * go[..., -1]
    return np.moveaxis(dx, -1, axis)


def resize_double(x):
    """Bilinear x2 upsampling; constant images map to constant images."""
    check_nchw(x, "resize_double input")
    return _up2_axis(_up2_axis(x, 2), 3)


def resize_double_grad(g, h, w):
    """Adjoint of resize_double back to an (h, w) input."""
    return _up2_axis_adjoint(_up2_axis_adjoint(g, 3), 2)


# ---------------------------------------------------------------------------
# 2-D DFT
# ---------------------------------------------------------------------------

def _bit_reverse(n):
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(n.bit_length() - 1):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _fft_last(a):
    """Unnormalized forward DFT along the last axis of a complex array.

    Radix-2 Cooley-Tukey when the length is a power of two, direct DFT
    matrix product otherwise.
    """
    n = a.shape[-1]
    if n == 0:
        return a.copy()
    if n & (n - 1) == 0:
        out = np.ascontiguousarray(a[..., _bit_reverse(n)])
        m = 2
        while m <= n:
            half = m // 2
            tw = np.exp(-2j * np.pi * np.arange(half) / m)
            v = out.reshape(out.shape[:-1] + (n // m, m))
            even = v[..., :half].copy()
            odd = v[..., half:] * tw
            v[..., :half] = even + odd
            v[..., half:] = even - odd
            m *= 2
        return out
    j = np.arange(n)
    dft = np.exp(-2j * np.pi * np.outer(j, j) / n)
    return a @ dft


def _dft2_complex(z):
    """2-D DFT over the trailing (h, w) axes of a complex array."""
    z = _fft_last(z)
    z = np.swapaxes(_fft_last(np.swapaxes(z, -1, -2)), -1, -2)
    return z


def fft2(x):
    """Unnormalized forward 2-D DFT per (n, c) slice; returns (re, im).

    The DC bin equals the sum of all pixels.  Power-of-two axes take the
    radix-2 fast path; any other size falls back to the direct DFT.
    Computation runs in complex128 and the result is cast back to the
    input dtype.
    """
    check_nchw(x, "fft2 input")
    z = _dft2_complex(x.astype(np.complex128))
    return z.real.astype(x.dtype), z.imag.astype(x.dtype)


def fft2_grad(g_re, g_im):
    """VJP of fft2 for real input: Re(DFT2(g_re - i*g_im))."""
    z = _dft2_complex(g_re.astype(np.complex128)
                      - 1j * g_im.astype(np.complex128))
    return z.real.astype(g_re.dtype)
