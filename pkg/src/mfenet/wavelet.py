"""Single-level orthonormal 2-D Haar transform and its exact inverse.

Filters: low = (1/sqrt(2))[1, 1], high = (1/sqrt(2))[1, -1], rows then
columns.  HL carries horizontal detail (high along width), LH vertical
detail (high along height).  For a 2x2 block [[a, b], [c, d]]:

    LL = (a+b+c+d)/2    HL = (a-b+c-d)/2
    LH = (a+b-c-d)/2    HH = (a-b-c+d)/2

Orthonormal, so the transform preserves energy and its adjoint equals its
inverse (which is what the autodiff rules below exploit).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ag
from .errors import ContractViolation


@dataclass
class Subbands:
    """The four half-resolution frequency sub-bands of one decomposition."""
    ll: object
    lh: object
    hl: object
    hh: object

    def astuple(self):
        return (self.ll, self.lh, self.hl, self.hh)


def _dwt2_values(x):
    if x.ndim != 4:
        raise ContractViolation(f"haar_dwt2 needs NCHW input, got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    if h % 2 or w % 2:
        raise ContractViolation(f"haar_dwt2 needs even dims, got {h}x{w}")
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    c = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    ll = (a + b + c + d) * 0.5
    hl = (a - b + c - d) * 0.5
    lh = (a + b - c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return ll, lh, hl, hh


def _idwt2_values(ll, lh, hl, hh):
    for name, s in (("lh", lh), ("hl", hl), ("hh", hh)):
        if s.shape != ll.shape:
            raise ContractViolation(
                f"subband {name} shape {s.shape} != ll shape {ll.shape}")
    n, c, h2, w2 = ll.shape
    out = np.empty((n, c, 2 * h2, 2 * w2), dtype=ll.dtype)
    out[:, :, 0::2, 0::2] = (ll + hl + lh + hh) * 0.5
    out[:, :, 0::2, 1::2] = (ll - hl + lh - hh) * 0.5
    out[:, :, 1::2, 0::2] = (ll + hl - lh - hh) * 0.5
    out[:, :, 1::2, 1::2] = (ll - hl - lh + hh) * 0.5
    return out


def haar_dwt2(x):
    """Analysis transform; returns a Subbands of (n, c, h/2, w/2) tensors."""
    xv = ag.value_of(x)
    outs = _dwt2_values(xv)

    def vjp(gs, needs):
        # orthonormal: the adjoint of analysis is synthesis
        return (_idwt2_values(*gs),)

    return Subbands(*ag.apply_op(outs, (x,), vjp))


def haar_idwt2(subbands):
    """Synthesis transform; exact inverse of haar_dwt2."""
    vals = tuple(ag.value_of(s) for s in subbands.astuple())
    out = _idwt2_values(*vals)

    def vjp(gs, needs):
        (g,) = gs
        return _dwt2_values(g)

    return ag.apply_op(out, subbands.astuple(), vjp)
