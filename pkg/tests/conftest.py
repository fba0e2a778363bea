"""Shared builders for block-level parameter bundles."""

import numpy as np
import pytest

from mfenet.blocks import (BnParams, ConvPair, FebpParams, MsfeFuseParams,
                           MsfeParams, STRIP_SIZES)


def rand_conv(rng, cout, cin, kh, kw, scale=0.3):
    return (rng.normal(size=(cout, cin, kh, kw)) * scale / np.sqrt(cin * kh * kw),
            rng.normal(size=cout) * 0.05)


def rand_conv_pair(rng, cin, cout, k=3):
    w1, b1 = rand_conv(rng, cout, cin, k, k)
    w2, b2 = rand_conv(rng, cout, cout, k, k)
    return ConvPair(w1, b1, w2, b2)


def identity_kernel(c, kh=3, kw=3):
    w = np.zeros((c, c, kh, kw))
    for i in range(c):
        w[i, i, kh // 2, kw // 2] = 1.0
    return w


def identity_conv_pair(c, k=3):
    z = np.zeros(c)
    return ConvPair(identity_kernel(c, k, k), z, identity_kernel(c, k, k), z)


def rand_bn(rng, c):
    return BnParams(gamma=rng.uniform(0.5, 1.5, c),
                    beta=rng.normal(size=c) * 0.1,
                    running_mean=np.zeros(c), running_var=np.ones(c))


def rand_msfe(rng, c, with_fuse=False, c_prev=None, bn=True):
    entry_w, entry_b = rand_conv(rng, c, 3, 3, 3)
    fuse = None
    if with_fuse:
        fuse = MsfeFuseParams(
            *rand_conv(rng, c, c, 1, 1),
            *rand_conv(rng, c, c_prev, 3, 3),
            *rand_conv(rng, c, c, 3, 3),
            *rand_conv(rng, c, c_prev + c, 1, 1))
    return MsfeParams(
        entry_w=entry_w, entry_b=entry_b,
        depth={n: rng.normal(size=(c, 1, n, n)) / (n * 2.0)
               for n in STRIP_SIZES},
        bn_pre=rand_bn(rng, 4 * c) if bn else None,
        point_w=rng.normal(size=(c, 4 * c, 1, 1)) / np.sqrt(4 * c),
        bn_post=rand_bn(rng, c) if bn else None,
        mix_w=rng.normal(size=(c, c + 3, 1, 1)) / np.sqrt(c + 3),
        mix_b=rng.normal(size=c) * 0.05,
        fuse=fuse,
        fout=rand_conv_pair(rng, c, c))


def rand_febp(rng, c, c_total):
    strip = {}
    for n in STRIP_SIZES:
        shape = (c, c, 3, 1) if n == 1 else (c, c, 3, 3)
        strip[n] = (rng.normal(size=shape) / np.sqrt(np.prod(shape[1:])),
                    rng.normal(size=c) * 0.05)
    return FebpParams(
        *rand_conv(rng, c, c_total, 3, 3),
        *rand_conv(rng, c, c, 1, 1),
        strip=strip,
        strip_fout=rand_conv_pair(rng, 4 * c, c),
        wave={sb: rand_conv_pair(rng, c, c)
              for sb in ("ll", "lh", "hl", "hh")},
        mask=rand_conv_pair(rng, c, c))


@pytest.fixture
def rng():
    return np.random.default_rng(42)
