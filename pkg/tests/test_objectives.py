"""Loss semantics: normalized L1 content term and FFT-domain term."""

import numpy as np
import pytest

from mfenet import autodiff as ag
from mfenet import objectives, ops
from mfenet.autodiff import Tape, Var, backward
from mfenet.errors import ContractViolation
from mfenet.objectives import content_loss, msfr_loss, total_loss
from mfenet.selftest import naive_dft2


def as_float(v):
    return float(ag.value_of(v).reshape(()))


class TestContentLoss:
    def test_zero_for_equal_inputs(self, rng):
        x = rng.normal(size=(1, 3, 8, 8))
        assert as_float(content_loss([x], [x.copy()])) == 0.0

    def test_single_scale_example(self):
        pred = np.array([1.0, -1.0, 2.0, 0.0]).reshape(1, 1, 2, 2)
        target = np.zeros((1, 1, 2, 2))
        assert as_float(content_loss([pred], [target])) == pytest.approx(1.0)

    def test_homogeneity(self, rng):
        p = rng.normal(size=(1, 3, 8, 8))
        t = rng.normal(size=(1, 3, 8, 8))
        one = as_float(content_loss([p], [t]))
        three = as_float(content_loss([t + 3 * (p - t)], [t]))
        assert three == pytest.approx(3 * one, rel=1e-12)

    def test_multi_scale_sums(self, rng):
        preds = [rng.normal(size=(1, 3, 8, 8)),
                 rng.normal(size=(1, 3, 4, 4))]
        targets = [rng.normal(size=(1, 3, 8, 8)),
                   rng.normal(size=(1, 3, 4, 4))]
        total = as_float(content_loss(preds, targets))
        parts = sum(as_float(content_loss([p], [t]))
                    for p, t in zip(preds, targets))
        assert total == pytest.approx(parts, rel=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation, match="mismatch"):
            content_loss([np.zeros((1, 1, 4, 4))], [np.zeros((1, 1, 4, 5))])


class TestMsfrLoss:
    def test_zero_for_equal_inputs(self, rng):
        x = rng.normal(size=(1, 3, 8, 8))
        assert as_float(msfr_loss([x], [x.copy()])) == 0.0

    def test_single_pixel_difference_matches_naive_dft(self, rng):
        target = rng.normal(size=(1, 1, 4, 4))
        pred = target.copy()
        pred[0, 0, 1, 2] += 0.73
        got = as_float(msfr_loss([pred], [target]))
        re_p, im_p = naive_dft2(pred)
        re_t, im_t = naive_dft2(target)
        ref = (np.abs(re_p - re_t).sum() + np.abs(im_p - im_t).sum()) / 16
        assert got == pytest.approx(ref, rel=1e-6)

    def test_uniform_offset_hits_dc_bin_only(self, rng):
        target = rng.normal(size=(1, 3, 8, 8))
        d = 0.31
        pred = target + d
        # F(pred) - F(target) = F(d) which is h*w*d in the DC bin per slice,
        # so the normalized L1 equals d exactly
        got = as_float(msfr_loss([pred], [target]))
        assert got == pytest.approx(d, rel=1e-6)

    def test_complex_abs_variant(self, rng):
        target = rng.normal(size=(1, 1, 8, 8))
        pred = target + 0.11
        # a DC-only difference is purely real: both norms agree
        a = as_float(msfr_loss([pred], [target], complex_abs=False))
        b = as_float(msfr_loss([pred], [target], complex_abs=True))
        assert a == pytest.approx(b, rel=1e-6)
        pred2 = rng.normal(size=(1, 1, 8, 8))
        a2 = as_float(msfr_loss([pred2], [target], complex_abs=False))
        b2 = as_float(msfr_loss([pred2], [target], complex_abs=True))
        assert b2 <= a2  # |z|_1 over re/im dominates the magnitude norm


class TestTotalLoss:
    def test_default_lambda(self, rng):
        p = rng.normal(size=(1, 3, 8, 8))
        t = rng.normal(size=(1, 3, 8, 8))
        report = total_loss([p], [t])
        assert report.lam == 0.1

    def test_lambda_zero_reduces_to_content(self, rng):
        p = rng.normal(size=(1, 3, 8, 8))
        t = rng.normal(size=(1, 3, 8, 8))
        report = total_loss([p], [t], lam=0.0)
        assert report.l_total == report.l_cont

    def test_report_identity_exact(self, rng):
        p = rng.normal(size=(1, 3, 8, 8)).astype(np.float32)
        t = rng.normal(size=(1, 3, 8, 8)).astype(np.float32)
        report = total_loss([p], [t])
        assert report.l_total == report.l_cont + report.lam * report.l_msfr
        assert len(report.per_scale) == 1

    def test_negative_lambda_rejected(self, rng):
        x = rng.normal(size=(1, 1, 4, 4))
        with pytest.raises(ContractViolation, match="lambda"):
            total_loss([x], [x], lam=-0.1)

    def test_nonnegative_and_zero_iff_equal(self, rng):
        p = rng.normal(size=(1, 3, 8, 8))
        t = rng.normal(size=(1, 3, 8, 8))
        report = total_loss([p], [t])
        assert report.l_cont > 0 and report.l_msfr > 0
        equal = total_loss([p], [p.copy()])
        assert equal.l_total == 0.0

    def test_gradient_matches_finite_differences(self, rng):
        p = rng.normal(size=(1, 2, 4, 4))
        t = rng.normal(size=(1, 2, 4, 4))
        v = Var(p.copy())
        with Tape() as tape:
            report = total_loss([v], [t])
        backward(tape, report.loss)
        h = 1e-6
        for idx in rng.choice(p.size, size=8, replace=False):
            plus = p.copy()
            minus = p.copy()
            plus.reshape(-1)[idx] += h
            minus.reshape(-1)[idx] -= h
            fd = (total_loss([plus], [t]).l_total
                  - total_loss([minus], [t]).l_total) / (2 * h)
            an = v.grad.reshape(-1)[idx]
            assert abs(an - fd) / max(abs(fd), 1e-9) < 1e-4

    def test_bitwise_reproducible(self, rng):
        p = rng.normal(size=(1, 3, 8, 8)).astype(np.float32)
        t = rng.normal(size=(1, 3, 8, 8)).astype(np.float32)
        a = total_loss([p], [t])
        b = total_loss([p], [t])
        assert a.l_total == b.l_total and a.per_scale == b.per_scale

    def test_fast_fft_matches_naive_dft_route(self, rng):
        p = rng.normal(size=(1, 2, 8, 8))
        t = rng.normal(size=(1, 2, 8, 8))
        got = as_float(msfr_loss([p], [t]))
        re_p, im_p = naive_dft2(p)
        re_t, im_t = naive_dft2(t)
        ref = (np.abs(re_p - re_t).sum() + np.abs(im_p - im_t).sum()) / p.size
        assert abs(got - ref) / ref < 1e-4
