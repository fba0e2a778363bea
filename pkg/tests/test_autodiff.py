"""Tape mechanics and per-op gradient checks against central differences."""

import numpy as np
import pytest

from mfenet import autodiff as ag
from mfenet import blocks, wavelet
from mfenet.autodiff import Tape, Var, backward
from mfenet.errors import ContractViolation
from mfenet.selftest import fd_gradient_check, projected_sum


class TestTape:
    def test_sum_gradient_is_ones(self):
        x = Var(np.arange(6.0).reshape(1, 1, 2, 3))
        with Tape() as tape:
            loss = ag.sum_all(x)
        backward(tape, loss)
        assert np.allclose(x.grad, 1.0)

    def test_quadratic_gradient(self):
        x = Var(np.arange(4.0).reshape(1, 1, 2, 2))
        with Tape() as tape:
            loss = ag.sum_all(ag.mul(x, x))
        backward(tape, loss)
        assert np.allclose(x.grad, 2.0 * x.value)

    def test_non_scalar_loss_rejected(self):
        x = Var(np.zeros((1, 1, 2, 2)))
        with Tape() as tape:
            y = ag.mul(x, x)
        with pytest.raises(ContractViolation, match="1, 1, 1, 1"):
            backward(tape, y)

    def test_repeated_backward_accumulates(self):
        x = Var(np.full((1, 1, 1, 1), 3.0))
        with Tape() as tape:
            loss = ag.sum_all(ag.mul(x, x))
        backward(tape, loss)
        first = x.grad.copy()
        backward(tape, loss)
        assert np.allclose(x.grad, 2.0 * first)

    def test_fanout_accumulates(self):
        x = Var(np.full((1, 1, 1, 1), 2.0))
        with Tape() as tape:
            loss = ag.sum_all(ag.add(ag.mul(x, x), ag.mul(x, x)))
        backward(tape, loss)
        assert np.allclose(x.grad, 8.0)  # d/dx (2x^2) = 4x

    def test_untraced_ops_return_arrays(self):
        x = Var(np.ones((1, 1, 2, 2)))
        out = ag.mul(x, x)
        assert isinstance(out, np.ndarray)

    def test_constants_stay_arrays_inside_tape(self):
        with Tape():
            out = ag.add(np.ones((1, 1, 2, 2)), np.ones((1, 1, 2, 2)))
        assert isinstance(out, np.ndarray)

    def test_node_ids_assigned_in_order(self):
        x = Var(np.ones((1, 1, 1, 1)))
        with Tape() as tape:
            y = ag.mul(x, x)
            z = ag.sum_all(y)
        assert x.node_id is not None
        assert x.node_id < y.node_id < z.node_id
        assert len(tape) == 2


class TestOpGradients:
    """Central-difference checks in double precision, rel err < 1e-4."""

    def setup_method(self):
        self.rng = np.random.default_rng(21)

    def check(self, fn, arrays):
        worst = fd_gradient_check(fn, arrays, rng=self.rng)
        assert worst < 1e-4

    def test_conv2d(self):
        x = self.rng.normal(size=(2, 3, 6, 6))
        w = self.rng.normal(size=(4, 3, 3, 3)) * 0.5
        b = self.rng.normal(size=4) * 0.1
        proj = self.rng.normal(size=(2, 4, 6, 6))
        self.check(lambda xx, ww, bb: projected_sum(
            ag.conv2d(xx, ww, bb, padding=1), proj), [x, w, b])

    def test_conv2d_strided_grouped(self):
        x = self.rng.normal(size=(1, 4, 8, 8))
        w = self.rng.normal(size=(4, 2, 3, 3)) * 0.5
        proj = self.rng.normal(size=(1, 4, 4, 4))
        self.check(lambda xx, ww: projected_sum(
            ag.conv2d(xx, ww, None, stride=2, padding=1, groups=2), proj),
            [x, w])

    def test_conv_transpose2d(self):
        x = self.rng.normal(size=(1, 3, 5, 5))
        w = self.rng.normal(size=(3, 2, 4, 4)) * 0.5
        proj = self.rng.normal(size=(1, 2, 10, 10))
        self.check(lambda xx, ww: projected_sum(
            ag.conv_transpose2d(xx, ww, 2, 1), proj), [x, w])

    def test_leaky_relu_slopes(self):
        x = np.array([-1.0, 2.0]).reshape(1, 1, 1, 2)
        v = Var(x.copy())
        with Tape() as tape:
            loss = ag.sum_all(ag.leaky_relu(v, 0.2))
        backward(tape, loss)
        assert np.allclose(v.grad.ravel(), [0.2, 1.0])
        proj = self.rng.normal(size=(1, 1, 1, 2))
        self.check(lambda xx: projected_sum(ag.leaky_relu(xx, 0.2), proj), [x])

    def test_sigmoid_matches_analytic(self):
        x = self.rng.normal(size=(1, 2, 3, 3))
        v = Var(x.copy())
        with Tape() as tape:
            loss = ag.sum_all(ag.sigmoid(v))
        backward(tape, loss)
        s = 1.0 / (1.0 + np.exp(-x))
        assert np.abs(v.grad - s * (1 - s)).max() < 1e-12
        proj = self.rng.normal(size=x.shape)
        self.check(lambda xx: projected_sum(ag.sigmoid(xx), proj), [x])

    def test_mul_gradient_is_other_operand(self):
        x = self.rng.normal(size=(1, 2, 3, 3))
        y = self.rng.normal(size=(1, 2, 3, 3))
        vx, vy = Var(x.copy()), Var(y.copy())
        with Tape() as tape:
            loss = ag.sum_all(ag.mul(vx, vy))
        backward(tape, loss)
        assert np.abs(vx.grad - y).max() < 1e-12
        proj = self.rng.normal(size=x.shape)
        self.check(lambda xx, yy: projected_sum(ag.mul(xx, yy), proj), [x, y])

    def test_batch_norm_train_and_eval(self):
        x = self.rng.normal(size=(2, 3, 4, 4))
        gamma = self.rng.uniform(0.5, 1.5, 3)
        beta = self.rng.normal(size=3) * 0.1
        proj = self.rng.normal(size=x.shape)
        for training in (True, False):
            self.check(lambda xx, gg, bb, tr=training: projected_sum(
                ag.batch_norm(xx, gg, bb, np.zeros(3), np.ones(3), tr), proj),
                [x, gamma, beta])

    def test_resizes(self):
        x = self.rng.normal(size=(1, 2, 4, 6))
        proj_h = self.rng.normal(size=(1, 2, 2, 3))
        proj_d = self.rng.normal(size=(1, 2, 8, 12))
        self.check(lambda xx: projected_sum(ag.resize_half(xx), proj_h), [x])
        self.check(lambda xx: projected_sum(ag.resize_double(xx), proj_d), [x])

    def test_concat_and_abs(self):
        a = self.rng.normal(size=(1, 2, 3, 3))
        b = self.rng.normal(size=(1, 1, 3, 3))
        proj = self.rng.normal(size=(1, 3, 3, 3))
        self.check(lambda aa, bb: projected_sum(
            ag.concat_channels([aa, bb]), proj), [a, b])
        proj_a = self.rng.normal(size=a.shape)
        self.check(lambda aa: projected_sum(ag.absolute(aa), proj_a), [a])

    def test_fft2(self):
        x = self.rng.normal(size=(1, 1, 8, 8))
        pr = self.rng.normal(size=x.shape)
        pi = self.rng.normal(size=x.shape)

        def fn(xx):
            re, im = ag.fft2(xx)
            return ag.add(projected_sum(re, pr), projected_sum(im, pi))

        self.check(fn, [x])

    def test_fft2_non_pow2(self):
        x = self.rng.normal(size=(1, 1, 6, 6))
        pr = self.rng.normal(size=x.shape)

        def fn(xx):
            re, im = ag.fft2(xx)
            return ag.add(projected_sum(re, pr), projected_sum(im, pr))

        self.check(fn, [x])

    def test_strip_pool_and_expand(self):
        x = self.rng.normal(size=(1, 2, 8, 12))
        for n in (1, 3, 5, 7):
            for orientation in ("vertical", "horizontal"):
                pooled_shape = (1, 2, 8, n) if orientation == "vertical" \
                    else (1, 2, n, 12)
                proj = self.rng.normal(size=pooled_shape)
                self.check(lambda xx, nn=n, oo=orientation, pp=proj:
                           projected_sum(blocks.strip_pool(xx, nn, oo), pp),
                           [x])
        y = self.rng.normal(size=(1, 2, 8, 3))
        proj = self.rng.normal(size=(1, 2, 8, 12))
        self.check(lambda yy: projected_sum(
            blocks.strip_expand(yy, "vertical", 12), proj), [y])

    def test_wavelet(self):
        x = self.rng.normal(size=(1, 2, 8, 8))
        projs = [self.rng.normal(size=(1, 2, 4, 4)) for _ in range(4)]

        def fn(xx):
            sb = wavelet.haar_dwt2(xx)
            total = projected_sum(sb.ll, projs[0])
            for s, p in zip((sb.lh, sb.hl, sb.hh), projs[1:]):
                total = ag.add(total, projected_sum(s, p))
            return total

        self.check(fn, [x])
        sub = [self.rng.normal(size=(1, 1, 4, 4)) for _ in range(4)]
        proj = self.rng.normal(size=(1, 1, 8, 8))

        def fn_inv(ll, lh, hl, hh):
            return projected_sum(
                wavelet.haar_idwt2(wavelet.Subbands(ll, lh, hl, hh)), proj)

        self.check(fn_inv, sub)

    def test_transpose_hw(self):
        x = self.rng.normal(size=(1, 2, 3, 5))
        proj = self.rng.normal(size=(1, 2, 5, 3))
        self.check(lambda xx: projected_sum(ag.transpose_hw(xx), proj), [x])
