"""Reverse-mode differentiation: Var, Tape, and differentiable op wrappers.

Define-by-run: a Tape is (re)built each forward pass as a context manager;
parameters are persistent Var leaves reused across tapes.  Ops are
polymorphic — with an active tape and at least one Var argument they return
Vars and record a vector-Jacobian-product rule; otherwise they return plain
arrays.  A tape is confined to one logical thread.
"""

import threading

import numpy as np

from . import ops
from .errors import ContractViolation

_LOCAL = threading.local()


def _tape_stack():
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Var:
    """A tensor bound to a gradient buffer of the same shape."""

    __slots__ = ("value", "grad", "node_id")

    def __init__(self, value):
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)
        self.node_id = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Var(shape={self.value.shape}, dtype={self.value.dtype})"


class Tape:
    """Ordered record of ops; reverse traversal computes all gradients."""

    def __init__(self):
        self._records = []
        self._produced = set()
        self._next_id = 0

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def _assign_id(self, var):
        if var.node_id is None:
            var.node_id = self._next_id
            self._next_id += 1

    def record(self, inputs, outputs, vjp):
        for v in inputs:
            if isinstance(v, Var):
                self._assign_id(v)
        for v in outputs:
            self._assign_id(v)
            self._produced.add(id(v))
        self._records.append((inputs, outputs, vjp))

    def __len__(self):
        return len(self._records)

    def backward(self, loss):
        """Accumulate dLoss/d(leaf) into every leaf Var's .grad.

        The loss must be scalar-shaped (1, 1, 1, 1).  Tape-produced
        intermediates use per-call scratch cotangents, so repeated calls
        without zeroing accumulate cleanly on the leaves.
        """
        if not isinstance(loss, Var):
            raise ContractViolation("backward needs a Var loss node")
        if loss.value.shape != (1, 1, 1, 1):
            raise ContractViolation(
                f"loss must have shape (1, 1, 1, 1), got {loss.value.shape}")
        cot = {}
        if id(loss) in self._produced:
            cot[id(loss)] = np.ones_like(loss.value)
        else:
            loss.grad += np.ones_like(loss.value)
            return
        for inputs, outputs, vjp in reversed(self._records):
            gs = tuple(cot.pop(id(o), None) for o in outputs)
            if all(g is None for g in gs):
                continue
            gs = tuple(np.zeros_like(o.value) if g is None else g
                       for o, g in zip(outputs, gs))
            needs = tuple(isinstance(v, Var) for v in inputs)
            grads = vjp(gs, needs)
            for v, need, g in zip(inputs, needs, grads):
                if not need or g is None:
                    continue
                if id(v) in self._produced:
                    prev = cot.get(id(v))
                    cot[id(v)] = g if prev is None else prev + g
                else:
                    v.grad += g


def backward(tape, loss):
    """Run reverse-mode accumulation over a recorded tape."""
    tape.backward(loss)


def value_of(x):
    """Underlying array of a Var, or the argument itself."""
    return x.value if isinstance(x, Var) else x


def apply_op(out_values, inputs, vjp):
    """Wrap op outputs as recorded Vars when tracing, else pass through.

    out_values is an ndarray or tuple of ndarrays; vjp(gs, needs) returns
    one gradient (or None) per entry of inputs.
    """
    tape = current_tape()
    if tape is None or not any(isinstance(v, Var) for v in inputs):
        return out_values
    single = not isinstance(out_values, tuple)
    outs = (Var(out_values),) if single else tuple(Var(v) for v in out_values)
    tape.record(tuple(inputs), outs, vjp)
    return outs[0] if single else outs


# ---------------------------------------------------------------------------
# differentiable ops
# ---------------------------------------------------------------------------

def add(x, y):
    out = ops.add(value_of(x), value_of(y))

    def vjp(gs, needs):
        (g,) = gs
        return (g, g)

    return apply_op(out, (x, y), vjp)


def sub(x, y):
    xv, yv = value_of(x), value_of(y)
    if xv.shape != yv.shape:
        raise ContractViolation(f"sub shapes differ: {xv.shape} vs {yv.shape}")
    out = xv - yv

    def vjp(gs, needs):
        (g,) = gs
        return (g, -g)

    return apply_op(out, (x, y), vjp)


def mul(x, y):
    xv, yv = value_of(x), value_of(y)
    out = ops.mul(xv, yv)

    def vjp(gs, needs):
        (g,) = gs
        return (g * yv if needs[0] else None,
                g * xv if needs[1] else None)

    return apply_op(out, (x, y), vjp)


def scale(x, s):
    """Multiply by a python float constant."""
    out = value_of(x) * s

    def vjp(gs, needs):
        (g,) = gs
        return (g * s,)

    return apply_op(out, (x,), vjp)


def absolute(x):
    xv = value_of(x)
    out = np.abs(xv)

    def vjp(gs, needs):
        (g,) = gs
        return (g * np.sign(xv),)

    return apply_op(out, (x,), vjp)


def square_root(x):
    """Elementwise sqrt with a guarded subgradient at zero."""
    xv = value_of(x)
    out = np.sqrt(xv)

    def vjp(gs, needs):
        (g,) = gs
        denom = np.maximum(out, np.finfo(out.dtype).tiny)
        return (g / (2.0 * denom),)

    return apply_op(out, (x,), vjp)


def sum_all(x):
    """Reduce to a scalar-shaped (1, 1, 1, 1) tensor."""
    xv = value_of(x)
    out = xv.sum(dtype=xv.dtype).reshape(1, 1, 1, 1)

    def vjp(gs, needs):
        (g,) = gs
        return (np.broadcast_to(g.reshape(()), xv.shape).copy(),)

    return apply_op(out, (x,), vjp)


def leaky_relu(x, slope=0.2):
    xv = value_of(x)
    out = ops.leaky_relu(xv, slope)

    def vjp(gs, needs):
        (g,) = gs
        return (ops.leaky_relu_grad(xv, g, slope),)

    return apply_op(out, (x,), vjp)


def sigmoid(x):
    xv = value_of(x)
    out = ops.sigmoid(xv)

    def vjp(gs, needs):
        (g,) = gs
        return (g * out * (1.0 - out),)

    return apply_op(out, (x,), vjp)


def concat_channels(xs):
    vals = [value_of(x) for x in xs]
    out = ops.concat_channels(vals)
    splits = np.cumsum([v.shape[1] for v in vals])[:-1]

    def vjp(gs, needs):
        (g,) = gs
        return tuple(np.split(g, splits, axis=1))

    return apply_op(out, tuple(xs), vjp)


def transpose_hw(x):
    """Swap the spatial axes (used to share strip kernels across orientations)."""
    xv = value_of(x)
    out = np.ascontiguousarray(xv.transpose(0, 1, 3, 2))

    def vjp(gs, needs):
        (g,) = gs
        return (np.ascontiguousarray(g.transpose(0, 1, 3, 2)),)

    return apply_op(out, (x,), vjp)


def conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    xv, wv = value_of(x), value_of(w)
    bv = None if b is None else value_of(b)
    traced = current_tape() is not None and any(
        isinstance(v, Var) for v in (x, w, b) if v is not None)
    if not traced:
        return ops.conv2d(xv, wv, bv, stride, padding, groups)
    out, cols = ops.conv2d_forward(xv, wv, bv, stride, padding, groups)

    def vjp(gs, needs):
        (g,) = gs
        dx = ops.conv2d_input_grad(g, wv, xv.shape, stride, padding, groups) \
            if needs[0] else None
        dw = ops.conv2d_weight_grad(xv, g, wv.shape, stride, padding, groups,
                                    cols=cols) if needs[1] else None
        db = g.sum(axis=(0, 2, 3)) if len(needs) > 2 and needs[2] else None
        return (dx, dw, db) if len(needs) > 2 else (dx, dw)

    inputs = (x, w) if b is None else (x, w, b)
    return apply_op(out, inputs, vjp)


def conv_transpose2d(x, w, stride=2, padding=1):
    xv, wv = value_of(x), value_of(w)
    out = ops.conv_transpose2d(xv, wv, stride, padding)

    def vjp(gs, needs):
        (g,) = gs
        dx = ops.conv2d(g, wv, None, stride, padding) if needs[0] else None
        dw = ops.conv2d_weight_grad(g, xv, wv.shape, stride, padding) \
            if needs[1] else None
        return (dx, dw)

    return apply_op(out, (x, w), vjp)


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Running stats are plain arrays, mutated in place in train mode."""
    xv = value_of(x)
    out, cache = ops.batch_norm(xv, value_of(gamma), value_of(beta),
                                running_mean, running_var, training,
                                momentum, eps)

    def vjp(gs, needs):
        (g,) = gs
        dx, dgamma, dbeta = ops.batch_norm_grad(g, cache)
        return (dx if needs[0] else None,
                dgamma if needs[1] else None,
                dbeta if needs[2] else None)

    return apply_op(out, (x, gamma, beta), vjp)


def resize_half(x):
    xv = value_of(x)
    out = ops.resize_half(xv)

    def vjp(gs, needs):
        (g,) = gs
        return (ops.resize_half_grad(g),)

    return apply_op(out, (x,), vjp)


def resize_double(x):
    xv = value_of(x)
    out = ops.resize_double(xv)
    h, w = xv.shape[2], xv.shape[3]

    def vjp(gs, needs):
        (g,) = gs
        return (ops.resize_double_grad(g, h, w),)

    return apply_op(out, (x,), vjp)


def fft2(x):
    """Differentiable unnormalized 2-D DFT; returns (re, im)."""
    xv = value_of(x)
    re, im = ops.fft2(xv)

    def vjp(gs, needs):
        g_re, g_im = gs
        return (ops.fft2_grad(g_re, g_im),)

    return apply_op((re, im), (x,), vjp)
