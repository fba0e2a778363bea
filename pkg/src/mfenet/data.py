"""Image I/O, synthetic motion blur, and multi-scale training pairs.

Binary P6 PPM (maxval 255) is the mandatory bit-exact format; PNG works as
an optional extension when Pillow is importable.  Corpus generation is a
pure function of (count, size, seed): procedural sharp images with edges
and texture, anti-aliased linear motion kernels, Gaussian noise, and a
one-line-per-pair manifest.
"""

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import ops
from .errors import ContractViolation, ImageFormatError

MANIFEST_NAME = "manifest.txt"


@dataclass
class Image:
    """8-bit RGB image, pixels shaped (height, width, 3) row-major."""
    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.uint8)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ContractViolation(
                f"Image pixels must be (h, w, 3) uint8, got {p.shape}")
        self.pixels = p

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return 3


@dataclass
class BlurKernel:
    """Normalized point-spread function with its generating line descriptor."""
    taps: np.ndarray          # odd-sized square, non-negative, sums to 1
    length_px: float
    angle_rad: float

    @property
    def size(self):
        return self.taps.shape[0]


@dataclass
class SamplePair:
    """A (blurred, sharp) pair with mean-pooled x1/x2/x4 pyramids."""
    blurred: np.ndarray       # (1, 3, h, w) float32 in [0, 1]
    sharp: np.ndarray
    blurred_pyramid: tuple
    sharp_pyramid: tuple


# ---------------------------------------------------------------------------
# tensor <-> image conversions
# ---------------------------------------------------------------------------

def to_tensor(img, dtype=np.float32):
    """(h, w, 3) uint8 -> (1, 3, h, w) float in [0, 1]."""
    arr = img.pixels.astype(dtype) / dtype(255.0)
    return arr.transpose(2, 0, 1)[None]


def from_tensor(t):
    """(1, 3, h, w) float -> Image, clamping to [0, 1] and rounding."""
    ops.check_nchw(t, "from_tensor input")
    arr = quantize_unit(t[0].transpose(1, 2, 0))
    return Image(arr)


def quantize_unit(x):
    """Clamp to [0, 1], scale by 255, round to uint8."""
    return np.clip(np.round(np.clip(x, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# PPM (P6) and optional PNG
# ---------------------------------------------------------------------------

def _write_atomic(path, payload):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def save_image(img, path):
    """Write a P6 PPM (or PNG when the path ends in .png and Pillow exists)."""
    path = os.fspath(path)
    if path.lower().endswith(".png"):
        try:
            from PIL import Image as PilImage
        except ImportError as exc:
            raise ImageFormatError(
                "PNG support needs Pillow; save as .ppm instead") from exc
        PilImage.fromarray(img.pixels, mode="RGB").save(path)
        return
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    _write_atomic(path, header + img.pixels.tobytes())


def _parse_ppm_token(data, pos):
    """Next whitespace-delimited token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError(f"expected a header token at byte {start}")
    return data[start:pos], pos


def load_image(path):
    """Read a P6 PPM (or PNG via Pillow); lossless for P6 roundtrips."""
    path = os.fspath(path)
    if path.lower().endswith(".png"):
        try:
            from PIL import Image as PilImage
        except ImportError as exc:
            raise ImageFormatError(
                "PNG support needs Pillow; use .ppm instead") from exc
        return Image(np.asarray(PilImage.open(path).convert("RGB")))
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P6":
        raise ImageFormatError(
            f"bad magic at byte 0: expected 'P6', got {data[:2]!r}")
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        token, pos = _parse_ppm_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise ImageFormatError(
                f"non-numeric {name} {token!r} ending at byte {pos}") from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageFormatError(
            f"non-positive dimensions {width}x{height} in header (byte {pos})")
    if maxval != 255:
        raise ImageFormatError(
            f"unsupported maxval {maxval} at byte {pos}; only 255 is handled")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageFormatError(
            f"expected single whitespace after maxval at byte {pos}")
    pos += 1
    expected = width * height * 3
    payload = data[pos:pos + expected]
    if len(payload) != expected:
        raise ImageFormatError(
            f"truncated payload at byte {pos}: expected {expected} bytes, "
            f"got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Image(pixels.copy())


# ---------------------------------------------------------------------------
# motion blur synthesis
# ---------------------------------------------------------------------------

def make_motion_kernel(length_px, angle_rad):
    """Anti-aliased line-segment PSF, normalized to sum 1.

    Sample points at roughly unit spacing along the segment are splatted
    bilinearly onto an odd-sized grid; length 1 collapses to an identity
    kernel.
    """
    if length_px < 1:
        raise ContractViolation(f"kernel length must be >= 1, got {length_px}")
    half = (length_px - 1.0) / 2.0
    dx, dy = math.cos(angle_rad), math.sin(angle_rad)
    reach = half * max(abs(dx), abs(dy))
    size = 2 * (int(math.ceil(reach)) + 1) + 1
    center = size // 2
    taps = np.zeros((size, size), dtype=np.float64)
    n_samples = max(1, int(round(length_px)))
    if n_samples == 1:
        positions = [0.0]
    else:
        positions = np.linspace(-half, half, n_samples)
    weight = 1.0 / n_samples
    for t in positions:
        x = center + t * dx
        y = center + t * dy
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        taps[y0, x0] += weight * (1 - fx) * (1 - fy)
        taps[y0, x0 + 1] += weight * fx * (1 - fy)
        taps[y0 + 1, x0] += weight * (1 - fx) * fy
        taps[y0 + 1, x0 + 1] += weight * fx * fy
    taps /= taps.sum()
    return BlurKernel(taps=taps, length_px=float(length_px),
                      angle_rad=float(angle_rad))


def synth_pair(sharp, kernel, noise_sigma, seed):
    """Blur + noise one sharp image deterministically.

    blurred = clamp(sharp (x) kernel + N(0, sigma^2)) with reflect-padded
    convolution; both images come back as float32 tensors with their
    mean-pooled pyramids.
    """
    if sharp.height % 8 or sharp.width % 8:
        raise ContractViolation(
            f"pair dims must be divisible by 8, got "
            f"{sharp.height}x{sharp.width}")
    clean = sharp.pixels.astype(np.float64) / 255.0
    blurred = np.empty_like(clean)
    for c in range(3):
        blurred[:, :, c] = ndimage.convolve(clean[:, :, c], kernel.taps,
                                            mode="mirror")
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        blurred = blurred + rng.normal(0.0, noise_sigma, size=blurred.shape)
    blurred = np.clip(blurred, 0.0, 1.0)

    blur_t = blurred.astype(np.float32).transpose(2, 0, 1)[None]
    sharp_t = clean.astype(np.float32).transpose(2, 0, 1)[None]
    return SamplePair(
        blurred=blur_t, sharp=sharp_t,
        blurred_pyramid=_pyramid(blur_t), sharp_pyramid=_pyramid(sharp_t))


def _pyramid(t):
    half = ops.resize_half(t)
    return (t, half, ops.resize_half(half))


# ---------------------------------------------------------------------------
# procedural sharp images
# ---------------------------------------------------------------------------

def _render_sharp(rng, size):
    """Random composition of gradients, rects, circles, gratings, strokes."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    top = rng.uniform(0.1, 0.9, 3)
    bottom = rng.uniform(0.1, 0.9, 3)
    ramp = (yy / max(size - 1, 1))[:, :, None]
    canvas = top * (1 - ramp) + bottom * ramp

    def blend(coverage, color, alpha):
        a = (alpha * coverage)[:, :, None]
        return canvas * (1 - a) + color * a

    for _ in range(int(rng.integers(6, 12))):
        kind = rng.integers(0, 4)
        color = rng.uniform(0.0, 1.0, 3)
        alpha = rng.uniform(0.6, 1.0)
        if kind == 0:                                   # rectangle
            cx, cy = rng.uniform(0, size, 2)
            wx, wy = rng.uniform(size * 0.1, size * 0.5, 2)
            dist = np.minimum(wx / 2 - np.abs(xx - cx), wy / 2 - np.abs(yy - cy))
            cover = np.clip(dist + 0.5, 0.0, 1.0)
        elif kind == 1:                                 # circle
            cx, cy = rng.uniform(0, size, 2)
            r = rng.uniform(size * 0.05, size * 0.3)
            dist = r - np.hypot(xx - cx, yy - cy)
            cover = np.clip(dist + 0.5, 0.0, 1.0)
        elif kind == 2:                                 # line grating
            theta = rng.uniform(0, math.pi)
            freq = rng.uniform(2.0, 8.0) / size
            phase = rng.uniform(0, 2 * math.pi)
            wave = np.sin(2 * math.pi * freq
                          * (xx * math.cos(theta) + yy * math.sin(theta))
                          + phase)
            cover = 0.5 + 0.5 * wave
            alpha *= 0.5
        else:                                           # glyph-like strokes
            cover = np.zeros_like(xx)
            pts = rng.uniform(size * 0.1, size * 0.9, (int(rng.integers(3, 6)), 2))
            thick = rng.uniform(1.0, max(2.0, size * 0.04))
            for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
                vx, vy = x1 - x0, y1 - y0
                norm = vx * vx + vy * vy
                if norm == 0:
                    continue
                t = np.clip(((xx - x0) * vx + (yy - y0) * vy) / norm, 0.0, 1.0)
                d = np.hypot(xx - (x0 + t * vx), yy - (y0 + t * vy))
                cover = np.maximum(cover, np.clip(thick / 2 - d + 0.5, 0.0, 1.0))
        canvas = blend(cover, color, alpha)
    return Image(np.clip(np.round(canvas * 255.0), 0, 255).astype(np.uint8))


def generate_corpus(count, size, seed, out_dir):
    """Write `count` blurred/sharp P6 pairs plus a manifest; returns its path.

    Kernel lengths are uniform in [1, 15], angles uniform in [0, pi), noise
    sigma uniform in [0, 0.01].  Each sample derives its RNG from
    seed XOR index, so output is independent of generation order.
    """
    if size % 8:
        raise ContractViolation(f"corpus size must be divisible by 8, got {size}")
    if count < 1:
        raise ContractViolation(f"corpus count must be >= 1, got {count}")
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for index in range(count):
        rng = np.random.default_rng(seed ^ index)
        sharp = _render_sharp(rng, size)
        length = float(rng.uniform(1.0, 15.0))
        angle = float(rng.uniform(0.0, math.pi))
        sigma = float(rng.uniform(0.0, 0.01))
        noise_seed = int(rng.integers(0, 2 ** 63))
        kernel = make_motion_kernel(length, angle)
        pair = synth_pair(sharp, kernel, sigma, noise_seed)
        blur_name = f"pair_{index:04d}_blur.ppm"
        sharp_name = f"pair_{index:04d}_sharp.ppm"
        save_image(from_tensor(pair.blurred), os.path.join(out_dir, blur_name))
        save_image(sharp, os.path.join(out_dir, sharp_name))
        lines.append(f"{index} {blur_name} {sharp_name} "
                     f"{length:.6f} {angle:.6f} {sigma:.6f}")
    manifest = os.path.join(out_dir, MANIFEST_NAME)
    _write_atomic(manifest, ("\n".join(lines) + "\n").encode("utf-8"))
    return manifest


def load_manifest(manifest_path):
    """Parse manifest rows into (index, blur_path, sharp_path, length,
    angle, sigma) tuples with paths resolved against the manifest dir."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    rows = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ContractViolation(
                    f"manifest line {lineno} has {len(parts)} fields, expected 6")
            rows.append((int(parts[0]),
                         os.path.join(base, parts[1]),
                         os.path.join(base, parts[2]),
                         float(parts[3]), float(parts[4]), float(parts[5])))
    return rows


def load_pair(blur_path, sharp_path):
    """Load one manifest row into a SamplePair."""
    blurred = to_tensor(load_image(blur_path))
    sharp = to_tensor(load_image(sharp_path))
    if blurred.shape != sharp.shape:
        raise ContractViolation(
            f"pair shapes differ: {blurred.shape} vs {sharp.shape}")
    if blurred.shape[2] % 8 or blurred.shape[3] % 8:
        raise ContractViolation(
            f"pair dims must be divisible by 8, got {blurred.shape[2:]}")
    return SamplePair(blurred=blurred, sharp=sharp,
                      blurred_pyramid=_pyramid(blurred),
                      sharp_pyramid=_pyramid(sharp))
