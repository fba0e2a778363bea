"""Optimization loop, evaluation pass, and checkpoint persistence.

Checkpoint binary layout (little-endian throughout): magic "MFEN", u32
version = 1, u32 config length + canonical key=value lines, u32 tensor
count, then per tensor u16 name length, name bytes, u8 ndim, ndim x u64
dims, raw float32 data.  Optimizer moments live under "#opt.m." / "#opt.v."
and the iteration counter / sampler RNG state under "#state.", all in the
same tensor encoding, so save -> load -> save is byte-identical.
"""

import math
import os
import struct
import sys
from dataclasses import dataclass, field

import numpy as np

from . import data as datamod
from . import metrics as metricsmod
from . import network, objectives, ops
from .autodiff import Tape, Var, backward
from .errors import (CheckpointFormatError, CheckpointMismatchError,
                     ContractViolation, TrainingDiverged)

MAGIC = b"MFEN"
VERSION = 1
_CONFIG_KEYS = ("c_base", "n_resblocks", "leaky_slope", "use_msfe",
                "use_febp", "residual_output", "msfe_bn")
_OPT_M = "#opt.m."
_OPT_V = "#opt.v."
_STATE_ITER = "#state.iteration"
_STATE_RNG = "#state.rng"


@dataclass
class TrainConfig:
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 4
    iterations: int = 200
    lam: float = objectives.DEFAULT_LAMBDA
    seed: int = 0
    eval_every: int = 0              # 0 disables periodic checkpoints
    checkpoint_path: str = "model.ckpt"
    lr_min: float = None             # cosine floor; defaults to lr / 100
    patch_size: int = None           # random crop edge when images are larger

    def validate(self):
        if self.lr <= 0:
            raise ContractViolation(f"lr must be > 0, got {self.lr}")
        if self.iterations < 1:
            raise ContractViolation(
                f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ContractViolation(
                f"batch_size must be >= 1, got {self.batch_size}")
        if self.lam < 0:
            raise ContractViolation(f"lambda must be >= 0, got {self.lam}")
        if self.patch_size is not None and self.patch_size % 8:
            raise ContractViolation(
                f"patch_size must be divisible by 8, got {self.patch_size}")

    @property
    def lr_floor(self):
        return self.lr / 100.0 if self.lr_min is None else self.lr_min


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def cosine_lr(step, total, lr, lr_min):
    """Cosine decay from lr (step 1) toward lr_min (step total)."""
    progress = (step - 1) / max(total, 1)
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * progress))


def adam_step(params, grads, state, lr_t, betas=(0.9, 0.999), eps=1e-8):
    """Standard bias-corrected Adam update, in place on the param arrays."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr_t * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return params, state


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

def _encode_config(config):
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        return repr(v) if isinstance(v, float) else str(v)
    lines = "".join(f"{k}={fmt(getattr(config, k))}\n" for k in _CONFIG_KEYS)
    return lines.encode("utf-8")


def _decode_config(blob):
    values = {}
    for line in blob.decode("utf-8").splitlines():
        if not line:
            continue
        key, _, raw = line.partition("=")
        if key not in _CONFIG_KEYS:
            raise CheckpointFormatError(f"unknown config key {key!r}")
        values[key] = raw
    missing = [k for k in _CONFIG_KEYS if k not in values]
    if missing:
        raise CheckpointFormatError(f"config block missing keys {missing}")
    return network.ModelConfig(
        c_base=int(values["c_base"]),
        n_resblocks=int(values["n_resblocks"]),
        leaky_slope=float(values["leaky_slope"]),
        use_msfe=values["use_msfe"] == "true",
        use_febp=values["use_febp"] == "true",
        residual_output=values["residual_output"] == "true",
        msfe_bn=values["msfe_bn"] == "true")


def _pack_rng_state(rng):
    """PCG64 state as exact 16-bit limbs inside a float32 tensor."""
    st = rng.bit_generator.state
    limbs = []
    for value, n_limbs in ((st["state"]["state"], 8), (st["state"]["inc"], 8),
                           (st["has_uint32"], 1), (st["uinteger"], 2)):
        for k in range(n_limbs):
            limbs.append((value >> (16 * k)) & 0xFFFF)
    return np.asarray(limbs, dtype=np.float32)


def _unpack_rng_state(arr):
    limbs = [int(round(v)) for v in arr]

    def take(n):
        nonlocal limbs
        chunk, limbs = limbs[:n], limbs[n:]
        return sum(c << (16 * k) for k, c in enumerate(chunk))

    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": take(8), "inc": take(8)},
        "has_uint32": take(1),
        "uinteger": take(2)}
    return rng


def _encode_tensor(name, arr):
    name_b = name.encode("utf-8")
    arr32 = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<H", len(name_b)) + name_b
    head += struct.pack("<B", arr32.ndim)
    head += struct.pack(f"<{arr32.ndim}Q", *arr32.shape)
    return head + arr32.tobytes()


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise CheckpointFormatError(
                f"truncated checkpoint: needed {n} bytes for {what} at "
                f"offset {self.pos}, file has {len(self.blob)}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out


def save_checkpoint(path, config, params, opt_state=None, iteration=0,
                    rng=None):
    """Serialize config + params (+ optimizer/RNG state) atomically."""
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg_blob = _encode_config(config)
    parts.append(struct.pack("<I", len(cfg_blob)))
    parts.append(cfg_blob)
    tensors = [(name, params[name]) for name in params]
    if opt_state is not None:
        tensors += [(_OPT_M + n, opt_state.m[n]) for n in params
                    if n in opt_state.m]
        tensors += [(_OPT_V + n, opt_state.v[n]) for n in params
                    if n in opt_state.v]
    tensors.append((_STATE_ITER, np.asarray([float(iteration)], np.float32)))
    if rng is not None:
        tensors.append((_STATE_RNG, _pack_rng_state(rng)))
    parts.append(struct.pack("<I", len(tensors)))
    parts.extend(_encode_tensor(n, a) for n, a in tensors)
    datamod._write_atomic(path, b"".join(parts))


def load_checkpoint(path, expected_config=None):
    """Read and validate a checkpoint.

    Returns (config, ModelParams, AdamState-or-None, iteration, rng-or-None).
    The tensor name set must exactly match the config's param_shapes; pass
    expected_config to additionally insist on a specific architecture.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointFormatError(
            f"bad magic: expected {MAGIC!r}, got {blob[:4]!r}")
    (version,) = struct.unpack("<I", r.take(4, "version"))
    if version != VERSION:
        raise CheckpointFormatError(
            f"unsupported checkpoint version {version}, expected {VERSION}")
    (cfg_len,) = struct.unpack("<I", r.take(4, "config length"))
    config = _decode_config(r.take(cfg_len, "config"))
    if expected_config is not None and _encode_config(expected_config) != \
            _encode_config(config):
        raise CheckpointMismatchError(
            f"checkpoint config {config} does not match expected "
            f"{expected_config}")
    (count,) = struct.unpack("<I", r.take(4, "tensor count"))
    raw = {}
    order = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", r.take(2, "name length"))
        name = r.take(name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", r.take(1, "ndim"))
        dims = struct.unpack(f"<{ndim}Q", r.take(8 * ndim, "dims")) \
            if ndim else ()
        n_items = int(np.prod(dims)) if dims else 1
        payload = r.take(4 * n_items, f"data of {name}")
        raw[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        order.append(name)

    expected = network.param_shapes(config)
    model_names = [n for n in order if not n.startswith("#")]
    missing = [n for n in expected if n not in raw]
    unknown = [n for n in model_names if n not in expected]
    if missing:
        raise CheckpointMismatchError(
            f"checkpoint is missing parameter {missing[0]!r} "
            f"(and {len(missing) - 1} more)")
    if unknown:
        raise CheckpointMismatchError(
            f"checkpoint has unknown parameter {unknown[0]!r} "
            f"(and {len(unknown) - 1} more)")
    for name, shape in expected.items():
        if raw[name].shape != shape:
            raise CheckpointMismatchError(
                f"parameter {name!r} has shape {raw[name].shape}, "
                f"expected {shape}")
    params = network.ModelParams((n, raw[n]) for n in expected)

    opt = None
    m_names = [n for n in order if n.startswith(_OPT_M)]
    if m_names:
        opt = AdamState(
            m={n[len(_OPT_M):]: raw[n] for n in m_names},
            v={n[len(_OPT_V):]: raw[n] for n in order
               if n.startswith(_OPT_V)})
    iteration = int(raw[_STATE_ITER][0]) if _STATE_ITER in raw else 0
    if opt is not None:
        opt.t = iteration
    rng = _unpack_rng_state(raw[_STATE_RNG]) if _STATE_RNG in raw else None
    return config, params, opt, iteration, rng


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _assemble_batch(pairs, indices, rng, patch):
    """Stack a batch; random-crop when a patch size is set and smaller."""
    blur, sharp = [], []
    for i in indices:
        b = pairs[i].blurred
        s = pairs[i].sharp
        h, w = b.shape[2], b.shape[3]
        if patch is not None and (h > patch or w > patch):
            oy = int(rng.integers(0, h - patch + 1))
            ox = int(rng.integers(0, w - patch + 1))
            b = b[:, :, oy:oy + patch, ox:ox + patch]
            s = s[:, :, oy:oy + patch, ox:ox + patch]
        blur.append(b)
        sharp.append(s)
    b1 = np.concatenate(blur, axis=0)
    s1 = np.concatenate(sharp, axis=0)
    s2 = ops.resize_half(s1)
    return b1, (s1, s2, ops.resize_half(s2))


def format_log_line(iteration, report, lr_t):
    return (f"{iteration} {report.l_cont:.9e} {report.l_msfr:.9e} "
            f"{report.l_total:.9e} {lr_t:.9e}")


def train(model_config, train_config, manifest_path, model_seed=None,
          resume_from=None, log_path=None, quiet=True, stop_after=None):
    """Run the optimization loop; returns (checkpoint_path, log_lines).

    Deterministic given (model seed, train seed, corpus): the sampler RNG
    and optimizer state ride along in checkpoints, so resuming reproduces
    the uninterrupted run bitwise.  stop_after pauses a run early while
    keeping the full-length learning-rate schedule, for chunked training.
    """
    model_config.validate()
    train_config.validate()
    rows = datamod.load_manifest(manifest_path)
    if not rows:
        raise ContractViolation(f"manifest {manifest_path} has no pairs")
    pairs = [datamod.load_pair(r[1], r[2]) for r in rows]

    if resume_from is not None:
        config, params, opt, start_iter, rng = load_checkpoint(
            resume_from, expected_config=model_config)
        if opt is None or rng is None:
            raise CheckpointMismatchError(
                f"{resume_from} holds no optimizer/RNG state to resume from")
    else:
        config = model_config
        seed = train_config.seed if model_seed is None else model_seed
        params = network.build(config, seed)
        opt = AdamState()
        start_iter = 0
        rng = np.random.default_rng(train_config.seed)

    trainable = {n: params[n] for n in params.trainable_names()}
    var_map = dict(params.tensors)
    var_map.update({n: Var(a) for n, a in trainable.items()})
    param_arrays = {n: var_map[n].value for n in trainable}

    log_lines = []
    ckpt_path = train_config.checkpoint_path
    last_iter = train_config.iterations if stop_after is None \
        else min(stop_after, train_config.iterations)

    def snapshot(path, iteration):
        save_checkpoint(path, config, params, opt, iteration, rng)

    for it in range(start_iter + 1, last_iter + 1):
        indices = rng.permutation(len(pairs))[:train_config.batch_size]
        b1, targets = _assemble_batch(pairs, indices, rng,
                                      train_config.patch_size)
        for v in var_map.values():
            if isinstance(v, Var):
                v.zero_grad()
        with Tape() as tape:
            preds = network.forward(var_map, config, b1, training=True)
            report = objectives.total_loss(preds, targets,
                                           lam=train_config.lam)
            if not math.isfinite(report.l_total):
                snapshot(ckpt_path + ".diverged", it - 1)
                raise TrainingDiverged(
                    f"loss became non-finite at iteration {it}; diagnostic "
                    f"checkpoint saved to {ckpt_path}.diverged")
            backward(tape, report.loss)
        lr_t = cosine_lr(it, train_config.iterations, train_config.lr,
                         train_config.lr_floor)
        grads = {n: var_map[n].grad for n in trainable}
        try:
            adam_step(param_arrays, grads, opt, lr_t,
                      train_config.betas, train_config.eps)
        except TrainingDiverged:
            snapshot(ckpt_path + ".diverged", it - 1)
            raise
        log_lines.append(format_log_line(it, report, lr_t))
        if not quiet:
            print(log_lines[-1], file=sys.stderr)
        if train_config.eval_every and it % train_config.eval_every == 0 \
                and it < last_iter:
            snapshot(ckpt_path, it)

    snapshot(ckpt_path, max(last_iter, start_iter))
    if log_path is not None:
        datamod._write_atomic(log_path,
                              ("\n".join(log_lines) + "\n").encode("utf-8"))
    return ckpt_path, log_lines


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _mean_report(reports):
    return metricsmod.MetricReport(
        psnr=float(np.mean([r.psnr for r in reports])),
        ssim=float(np.mean([r.ssim for r in reports])),
        vif=float(np.mean([r.vif for r in reports])),
        mse=float(np.mean([r.mse for r in reports])))


def evaluate(checkpoint, manifest_path):
    """Per-image and mean metrics of restored (or raw blurred) vs sharp.

    With checkpoint=None the blurred inputs themselves are scored, which is
    the corpus degradation baseline.  Model outputs are 8-bit quantized
    before scoring so numbers match the saved files.
    """
    rows = datamod.load_manifest(manifest_path)
    if not rows:
        raise ContractViolation(f"manifest {manifest_path} has no pairs")
    model = None
    if checkpoint is not None:
        config, params, _, _, _ = load_checkpoint(checkpoint)
        model = (config, params)
    per_image = []
    for _, blur_path, sharp_path, *_ in rows:
        pair = datamod.load_pair(blur_path, sharp_path)
        if model is None:
            out_t = pair.blurred
        else:
            config, params = model
            out_t, _, _ = network.forward(params, config, pair.blurred,
                                          training=False)
        restored = datamod.quantize_unit(out_t[0].transpose(1, 2, 0))
        sharp = datamod.quantize_unit(pair.sharp[0].transpose(1, 2, 0))
        per_image.append((os.path.basename(blur_path),
                          metricsmod.metric_report(sharp, restored)))
    return per_image, _mean_report([r for _, r in per_image])
