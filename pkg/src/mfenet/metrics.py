"""Image-quality metrics: MSE, PSNR, SSIM (global and windowed), VIF.

Inputs are image arrays, either 2-D grayscale (h, w) or channels-last
(h, w, c); integer arrays are promoted to float64 internally.  PSNR of
identical images is the one infinite value in the engine.  VIF is the
pixel-domain variant over 4 Gaussian-pyramid scales with noise variance
2.0, computed on the luma channel for color inputs.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractViolation

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
_VIF_NOISE_VAR = 2.0
_VIF_EPS = 1e-10


@dataclass
class MetricReport:
    """psnr is math.inf exactly when mse == 0."""
    psnr: float
    ssim: float
    vif: float
    mse: float


def _as_float_pair(s, i, op):
    s = np.asarray(s)
    i = np.asarray(i)
    if s.shape != i.shape:
        raise ContractViolation(
            f"{op} needs matching shapes, got {s.shape} vs {i.shape}")
    return s.astype(np.float64), i.astype(np.float64)


def mse(s, i):
    """Mean squared error over all elements."""
    sf, xf = _as_float_pair(s, i, "mse")
    return float(np.mean((sf - xf) ** 2))


def psnr(s, i, max_val=255.0):
    """10*log10(max^2 / mse); math.inf for identical images."""
    if max_val <= 0:
        raise ContractViolation(f"max_val must be > 0, got {max_val}")
    err = mse(s, i)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / err)


def _gaussian_kernel(size, sigma):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _local_stats(img, kernel):
    """Valid-mode Gaussian-weighted local mean via sliding windows."""
    win = sliding_window_view(img, kernel.shape)
    return np.tensordot(win, kernel, axes=([2, 3], [0, 1]))


def _ssim_global(sf, xf, c1, c2):
    mu_s, mu_x = sf.mean(), xf.mean()
    var_s, var_x = sf.var(), xf.var()
    cov = ((sf - mu_s) * (xf - mu_x)).mean()
    c3 = c2 / 2.0
    sd_s, sd_x = math.sqrt(var_s), math.sqrt(var_x)
    lum = (2 * mu_s * mu_x + c1) / (mu_s ** 2 + mu_x ** 2 + c1)
    con = (2 * sd_s * sd_x + c2) / (var_s + var_x + c2)
    struct = (cov + c3) / (sd_s * sd_x + c3)
    return lum * con * struct


def _ssim_windowed(sf, xf, c1, c2, kernel):
    mu_s = _local_stats(sf, kernel)
    mu_x = _local_stats(xf, kernel)
    var_s = _local_stats(sf * sf, kernel) - mu_s ** 2
    var_x = _local_stats(xf * xf, kernel) - mu_x ** 2
    cov = _local_stats(sf * xf, kernel) - mu_s * mu_x
    # two-term form; identical to l*c*s with C3 = C2/2
    num = (2 * mu_s * mu_x + c1) * (2 * cov + c2)
    den = (mu_s ** 2 + mu_x ** 2 + c1) * (var_s + var_x + c2)
    return float((num / den).mean())


def ssim(s, i, max_val=255.0, mode="windowed"):
    """Structural similarity with alpha = beta = gamma = 1.

    "global" computes luminance/contrast/structure from whole-image
    statistics; "windowed" (the reporting default) averages the statistic
    over 11x11 Gaussian windows (sigma 1.5), per channel for color inputs.
    """
    if max_val <= 0:
        raise ContractViolation(f"max_val must be > 0, got {max_val}")
    sf, xf = _as_float_pair(s, i, "ssim")
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    if mode == "global":
        return float(_ssim_global(sf, xf, c1, c2))
    if mode != "windowed":
        raise ContractViolation(f"ssim mode must be global|windowed, got {mode!r}")
    if sf.ndim == 2:
        sf = sf[:, :, None]
        xf = xf[:, :, None]
    if sf.ndim != 3:
        raise ContractViolation(
            f"windowed ssim needs (h, w) or (h, w, c) images, got {sf.shape}")
    if sf.shape[0] < 11 or sf.shape[1] < 11:
        raise ContractViolation(
            f"windowed ssim needs images >= 11x11, got {sf.shape[:2]}")
    kernel = _gaussian_kernel(11, 1.5)
    vals = [_ssim_windowed(sf[:, :, c], xf[:, :, c], c1, c2, kernel)
            for c in range(sf.shape[2])]
    return float(np.mean(vals))


def to_luma(img):
    """Rec.601 luma of a channels-last color image (pass-through for 2-D)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * img[:, :, 0] + g * img[:, :, 1] + b * img[:, :, 2]
    raise ContractViolation(f"expected (h, w) or (h, w, 3) image, got {img.shape}")


def vifp(s, i):
    """Pixel-domain visual information fidelity over 4 pyramid scales.

    Degenerate all-constant references return 1.0 by convention.  Needs
    images of at least 32x32.
    """
    sf, xf = _as_float_pair(s, i, "vifp")
    ref = to_luma(sf)
    dist = to_luma(xf)
    if min(ref.shape) < 32:
        raise ContractViolation(
            f"vifp needs images >= 32x32, got {ref.shape}")
    num = 0.0
    den = 0.0
    for scale in range(1, 5):
        size = 2 ** (4 - scale + 1) + 1
        kernel = _gaussian_kernel(size, size / 5.0)
        if scale > 1:
            if min(ref.shape) < size:
                break
            ref = _local_stats(ref, kernel)[::2, ::2]
            dist = _local_stats(dist, kernel)[::2, ::2]
        if min(ref.shape) < size:
            break
        mu1 = _local_stats(ref, kernel)
        mu2 = _local_stats(dist, kernel)
        sigma1_sq = np.maximum(_local_stats(ref * ref, kernel) - mu1 ** 2, 0.0)
        sigma2_sq = np.maximum(_local_stats(dist * dist, kernel) - mu2 ** 2, 0.0)
        sigma12 = _local_stats(ref * dist, kernel) - mu1 * mu2

        g = sigma12 / (sigma1_sq + _VIF_EPS)
        sv_sq = sigma2_sq - g * sigma12

        g[sigma1_sq < _VIF_EPS] = 0.0
        sv_sq[sigma1_sq < _VIF_EPS] = sigma2_sq[sigma1_sq < _VIF_EPS]
        sigma1_sq = np.where(sigma1_sq < _VIF_EPS, 0.0, sigma1_sq)
        sv_sq[sigma2_sq < _VIF_EPS] = 0.0
        g[sigma2_sq < _VIF_EPS] = 0.0
        sv_sq[g < 0.0] = sigma2_sq[g < 0.0]
        g[g < 0.0] = 0.0
        sv_sq = np.maximum(sv_sq, _VIF_EPS)

        num += float(np.log(1.0 + g * g * sigma1_sq
                            / (sv_sq + _VIF_NOISE_VAR)).sum())
        den += float(np.log(1.0 + sigma1_sq / _VIF_NOISE_VAR).sum())
    if den == 0.0:
        return 1.0
    return num / den


def metric_report(s, i, max_val=255.0):
    """All four metrics of one image pair (windowed SSIM)."""
    return MetricReport(
        psnr=psnr(s, i, max_val),
        ssim=ssim(s, i, max_val),
        vif=vifp(s, i),
        mse=mse(s, i))
