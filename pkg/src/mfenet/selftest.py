"""Built-in oracle suites: naive references and gradient checks.

Every reference here is intentionally loop-based and independent of the
vectorized implementations it checks.  The CLI `selftest` subcommand runs
these; the pytest suite reuses the same oracles.
"""

import math

import numpy as np

from . import autodiff as ag
from . import blocks, network, objectives, ops
from .autodiff import Tape, Var, backward

QUICK, FULL = "quick", "full"


# ---------------------------------------------------------------------------
# naive references
# ---------------------------------------------------------------------------

def naive_conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    """Direct six-loop cross-correlation with zero padding."""
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    cout_g = cout // groups
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    for ni in range(n):
        for oc in range(cout):
            grp = oc // cout_g
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ic in range(cin_g):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += xp[ni, grp * cin_g + ic,
                                          oy * stride + ky,
                                          ox * stride + kx] * w[oc, ic, ky, kx]
                    out[ni, oc, oy, ox] = acc
    if b is not None:
        out += b.reshape(1, cout, 1, 1)
    return out


def naive_dft2(x):
    """Direct 2-D DFT per (n, c) slice from the defining double sum."""
    n, c, h, w = x.shape
    re = np.zeros_like(x, dtype=np.float64)
    im = np.zeros_like(re)
    ys = np.arange(h).reshape(h, 1)
    xs = np.arange(w).reshape(1, w)
    for ni in range(n):
        for ci in range(c):
            for u in range(h):
                for v in range(w):
                    phase = -2.0 * math.pi * (u * ys / h + v * xs / w)
                    re[ni, ci, u, v] = (x[ni, ci] * np.cos(phase)).sum()
                    im[ni, ci, u, v] = (x[ni, ci] * np.sin(phase)).sum()
    return re, im


def brute_strip_pool(fm, n, orientation):
    """Window averaging straight from the strip definitions."""
    nb, c, h, w = fm.shape
    if orientation == "vertical":
        stride, kernel = w // n, w - (n - 1) * (w // n)
        out = np.zeros((nb, c, h, n), dtype=fm.dtype)
        for j in range(n):
            for k in range(kernel):
                out[:, :, :, j] += fm[:, :, :, j * stride + k]
        return out / kernel
    stride, kernel = h // n, h - (n - 1) * (h // n)
    out = np.zeros((nb, c, n, w), dtype=fm.dtype)
    for j in range(n):
        for k in range(kernel):
            out[:, :, j, :] += fm[:, :, j * stride + k, :]
    return out / kernel


def brute_expand_indices(n, out_len):
    return [n * p // out_len for p in range(out_len)]


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def fd_gradient_check(fn, arrays, h=1e-5, rtol=1e-4, atol=1e-8,
                      max_entries=64, rng=None):
    """Compare tape gradients of fn(*arrays) against central differences.

    fn maps Vars (or plain arrays) to a scalar Var; arrays must be float64.
    Returns the worst relative error over sampled entries.
    """
    rng = rng or np.random.default_rng(0)
    vars_ = [Var(a.copy()) for a in arrays]
    with Tape() as tape:
        loss = fn(*vars_)
    backward(tape, loss)

    def eval_at(perturbed):
        out = fn(*perturbed)
        return float(ag.value_of(out).reshape(()))

    worst = 0.0
    for ai, base in enumerate(arrays):
        flat = base.reshape(-1)
        count = min(max_entries, flat.size)
        picks = rng.choice(flat.size, size=count, replace=False)
        for idx in picks:
            step = h * max(1.0, abs(flat[idx]))
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[ai].reshape(-1)[idx] += step
            minus[ai].reshape(-1)[idx] -= step
            fd = (eval_at(plus) - eval_at(minus)) / (2 * step)
            an = vars_[ai].grad.reshape(-1)[idx]
            err = abs(an - fd)
            rel = err / max(abs(an), abs(fd), 1e-12)
            if err > atol and rel > rtol:
                raise AssertionError(
                    f"gradient mismatch in array {ai} entry {idx}: "
                    f"analytic {an!r} vs finite-difference {fd!r}")
            worst = max(worst, rel if err > atol else 0.0)
    return worst


def projected_sum(out, proj):
    """sum(out * proj) as a scalar Var; proj is a fixed constant."""
    return ag.sum_all(ag.mul(out, proj))


def model_gradient_check(config=None, size=16, n_params=50, seed=3,
                         h=1e-6, rtol=1e-4):
    """End-to-end FD check of the full training loss on a tiny model.

    Runs in float64; samples n_params random parameter entries.  Returns
    the worst relative error.
    """
    config = config or network.ModelConfig(c_base=8, n_resblocks=1,
                                           dtype="float64")
    rng = np.random.default_rng(seed)
    params = network.build(config, seed)
    b1 = rng.uniform(0.0, 1.0, (1, 3, size, size))
    targets = [rng.uniform(0.0, 1.0, (1, 3, size, size))]
    targets.append(ops.resize_half(targets[0]))
    targets.append(ops.resize_half(targets[1]))

    def run(tensors):
        preds = network.forward(tensors, config, b1, training=True)
        report = objectives.total_loss(preds, targets)
        return report.loss, report.l_total

    var_map = {n: (a if network.ModelParams.is_state(n) else Var(a.copy()))
               for n, a in params.tensors.items()}
    with Tape() as tape:
        loss, _ = run(var_map)
    backward(tape, loss)

    names = [n for n in params.trainable_names()]
    worst = 0.0
    for _ in range(n_params):
        name = names[int(rng.integers(len(names)))]
        base = var_map[name].value
        idx = int(rng.integers(base.size))
        step = h * max(1.0, abs(base.reshape(-1)[idx]))

        def loss_at(delta):
            tensors = {n: (a if network.ModelParams.is_state(n)
                           else var_map[n].value)
                       for n, a in params.tensors.items()}
            shifted = var_map[name].value.copy()
            shifted.reshape(-1)[idx] += delta
            tensors[name] = shifted
            _, total = run(tensors)
            return total

        fd = (loss_at(step) - loss_at(-step)) / (2 * step)
        an = float(var_map[name].grad.reshape(-1)[idx])
        err = abs(an - fd)
        rel = err / max(abs(an), abs(fd), 1e-12)
        if err > 1e-9 and rel > rtol:
            raise AssertionError(
                f"model gradient mismatch at {name}[{idx}]: "
                f"analytic {an!r} vs finite-difference {fd!r}")
        worst = max(worst, rel if err > 1e-9 else 0.0)
    return worst


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def _max_rel(a, b):
    scale = max(float(np.abs(b).max()), 1e-12)
    return float(np.abs(a - b).max()) / scale


def _suite_conv(level, perturb):
    rng = np.random.default_rng(11)
    cases = [
        dict(x=(1, 1, 5, 5), w=(1, 1, 3, 3), stride=1, padding=1, groups=1),
        dict(x=(2, 3, 8, 8), w=(4, 3, 3, 3), stride=1, padding=1, groups=1),
        dict(x=(1, 4, 9, 7), w=(4, 1, 5, 5), stride=1, padding=2, groups=4),
        dict(x=(2, 4, 8, 8), w=(6, 2, 3, 3), stride=2, padding=1, groups=2),
    ]
    if level == FULL:
        cases.append(dict(x=(1, 6, 12, 10), w=(6, 1, 7, 7),
                          stride=1, padding=3, groups=6))
    worst = 0.0
    for case in cases:
        x = rng.normal(size=case["x"])
        w = rng.normal(size=case["w"])
        b = rng.normal(size=case["w"][0])
        got = ops.conv2d(x, w, b, case["stride"], case["padding"],
                         case["groups"])
        if perturb:
            got = got + 1e-3
        ref = naive_conv2d(x, w, b, case["stride"], case["padding"],
                           case["groups"])
        worst = max(worst, _max_rel(got, ref))
    return worst < 1e-6, f"max rel err {worst:.3e} (tol 1e-6)"


def _suite_fft(level, perturb):
    rng = np.random.default_rng(12)
    sizes = [(8, 8)] if level == QUICK else [(8, 8), (16, 16), (6, 10)]
    worst = 0.0
    for h, w in sizes:
        x = rng.normal(size=(1, 2, h, w))
        re, im = ops.fft2(x)
        if perturb:
            re = re + 1e-2
        ref_re, ref_im = naive_dft2(x)
        worst = max(worst, _max_rel(re, ref_re), _max_rel(im, ref_im))
        parseval = abs((re ** 2 + im ** 2).sum() - h * w * (x ** 2).sum()) \
            / (h * w * (x ** 2).sum())
        worst = max(worst, parseval * 1e-1)   # parseval tol is looser
    return worst < 1e-5, f"max rel err {worst:.3e} (tol 1e-5)"


def _suite_strip(level, perturb):
    rng = np.random.default_rng(13)
    dims = (7, 8) if level == QUICK else (7, 8, 12, 16)
    worst = 0.0
    for h in dims:
        for w in dims:
            x = rng.normal(size=(1, 2, h, w))
            for n in blocks.STRIP_SIZES:
                for orientation in ("vertical", "horizontal"):
                    got = blocks.strip_pool(x, n, orientation)
                    if perturb:
                        got = got + 1e-3
                    ref = brute_strip_pool(x, n, orientation)
                    worst = max(worst, float(np.abs(got - ref).max()))
    return worst < 1e-12, f"max abs err {worst:.3e} (tol 1e-12)"


def _suite_wavelet(level, perturb):
    from . import wavelet
    rng = np.random.default_rng(14)
    reps = 20 if level == QUICK else 100
    worst = 0.0
    for _ in range(reps):
        x = rng.normal(size=(1, 2, 16, 16))
        sb = wavelet.haar_dwt2(x)
        back = wavelet.haar_idwt2(sb)
        if perturb:
            back = back + 1e-3
        worst = max(worst, float(np.abs(back - x).max()))
        energy = sum(float((s ** 2).sum()) for s in sb.astuple())
        worst = max(worst, abs(energy - float((x ** 2).sum()))
                    / float((x ** 2).sum()) * 1e-7)
    return worst < 1e-12, f"max roundtrip err {worst:.3e} (tol 1e-12)"


def _suite_grad_ops(level, perturb):
    rng = np.random.default_rng(15)
    worst = 0.0

    def check(fn, arrays, **kw):
        nonlocal worst
        worst = max(worst, fd_gradient_check(fn, arrays, rng=rng, **kw))

    proj = rng.normal(size=(2, 3, 6, 6))
    x = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(4, 3, 3, 3)) * 0.5
    b = rng.normal(size=(4,)) * 0.1
    proj_c = rng.normal(size=(2, 4, 6, 6))
    check(lambda xx, ww, bb: projected_sum(
        ag.conv2d(xx, ww, bb, padding=1), proj_c), [x, w, b])
    wt = rng.normal(size=(3, 2, 4, 4)) * 0.5
    proj_t = rng.normal(size=(2, 2, 12, 12))
    check(lambda xx, ww: projected_sum(
        ag.conv_transpose2d(xx, ww, 2, 1), proj_t), [x, wt])
    # keep leaky_relu inputs away from the kink
    xa = rng.uniform(0.1, 1.0, (2, 3, 6, 6)) * rng.choice([-1.0, 1.0],
                                                          (2, 3, 6, 6))
    check(lambda xx: projected_sum(ag.leaky_relu(xx, 0.2), proj), [xa])
    check(lambda xx: projected_sum(ag.sigmoid(xx), proj), [x])
    y = rng.normal(size=x.shape)
    check(lambda xx, yy: projected_sum(ag.mul(xx, yy), proj), [x, y])
    gmm = rng.uniform(0.5, 1.5, 3)
    bt = rng.normal(size=3) * 0.1
    check(lambda xx, gg, bb: projected_sum(
        ag.batch_norm(xx, gg, bb, np.zeros(3), np.ones(3), True), proj),
        [x, gmm, bt])
    proj_h = rng.normal(size=(2, 3, 3, 3))
    check(lambda xx: projected_sum(ag.resize_half(xx), proj_h), [x])
    proj_d = rng.normal(size=(2, 3, 12, 12))
    check(lambda xx: projected_sum(ag.resize_double(xx), proj_d), [x])
    proj_f = rng.normal(size=(1, 1, 8, 8))
    xf = rng.normal(size=(1, 1, 8, 8))

    def fft_loss(xx):
        re, im = ag.fft2(xx)
        return ag.add(projected_sum(re, proj_f), projected_sum(im, proj_f))

    check(fft_loss, [xf])
    for orientation in ("vertical", "horizontal"):
        proj_s = rng.normal(size=(1, 2, 7, 3) if orientation == "vertical"
                            else (1, 2, 3, 9))
        xs = rng.normal(size=(1, 2, 7, 9))
        check(lambda xx, o=orientation, p=proj_s: projected_sum(
            blocks.strip_pool(xx, 3, o), p), [xs])
        proj_e = rng.normal(size=(1, 2, 7, 9))
        xe = rng.normal(size=(1, 2, 7, 3) if orientation == "vertical"
                        else (1, 2, 3, 9))
        check(lambda xx, o=orientation, p=proj_e: projected_sum(
            blocks.strip_expand(xx, o, 9 if o == "vertical" else 7), p), [xe])
    from . import wavelet
    proj_w = rng.normal(size=(1, 2, 4, 4))
    xw = rng.normal(size=(1, 2, 8, 8))
    check(lambda xx: projected_sum(wavelet.haar_dwt2(xx).ll, proj_w), [xw])
    if perturb:
        worst = 1.0
    return worst < 1e-4, f"max rel err {worst:.3e} (tol 1e-4)"


def _suite_grad_model(level, perturb):
    worst = model_gradient_check(n_params=50 if level == FULL else 10)
    if perturb:
        worst = 1.0
    return worst < 1e-4, f"max rel err {worst:.3e} over sampled params (tol 1e-4)"


_SUITES = (
    ("conv-oracle", _suite_conv, (QUICK, FULL)),
    ("dft-oracle", _suite_fft, (QUICK, FULL)),
    ("strip-oracle", _suite_strip, (QUICK, FULL)),
    ("wavelet-roundtrip", _suite_wavelet, (QUICK, FULL)),
    ("gradient-ops", _suite_grad_ops, (QUICK, FULL)),
    ("gradient-model", _suite_grad_model, (FULL,)),
)


def run_suites(level=QUICK, perturb=None):
    """Run all suites for the level; returns [(name, passed, detail)].

    perturb names a suite whose comparison gets an injected error, proving
    the oracle can detect a broken build.
    """
    results = []
    for name, fn, levels in _SUITES:
        if level not in levels:
            continue
        try:
            ok, detail = fn(level, perturb == name)
        except AssertionError as exc:
            ok, detail = False, str(exc)
        results.append((name, ok, detail))
    return results
