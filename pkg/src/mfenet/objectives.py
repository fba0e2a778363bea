"""Training loss: multi-scale L1 content term plus an FFT-domain term.

Per scale k the content term is ||pred_k - target_k||_1 / t_k and the
frequency term ||F(pred_k) - F(target_k)||_1 / t_k, where t_k is the
element count of that scale and the complex L1 is |d_re| + |d_im| per bin
(a flag switches to the complex magnitude).  The total is
content + lambda * frequency with lambda defaulting to 0.1.
"""

from dataclasses import dataclass

from . import autodiff as ag
from .errors import ContractViolation

DEFAULT_LAMBDA = 0.1


@dataclass
class LossReport:
    """Scalar summary of one loss evaluation.

    l_total equals l_cont + lam * l_msfr exactly (recomputed in python
    floats); `loss` is the differentiable scalar node driving backward.
    """
    l_cont: float
    l_msfr: float
    l_total: float
    lam: float
    per_scale: list
    loss: object


def _check_pairs(preds, targets):
    if len(preds) != len(targets) or not preds:
        raise ContractViolation(
            f"need equal non-empty prediction/target lists, "
            f"got {len(preds)} vs {len(targets)}")
    for i, (p, t) in enumerate(zip(preds, targets)):
        ps, ts = ag.value_of(p).shape, ag.value_of(t).shape
        if ps != ts:
            raise ContractViolation(
                f"scale {i + 1} shape mismatch: {ps} vs {ts}")


def _sum_terms(terms):
    total = terms[0]
    for t in terms[1:]:
        total = ag.add(total, t)
    return total


def _content_terms(preds, targets):
    terms = []
    for p, t in zip(preds, targets):
        t_k = ag.value_of(p).size
        terms.append(ag.scale(ag.sum_all(ag.absolute(ag.sub(p, t))), 1.0 / t_k))
    return terms


def _msfr_terms(preds, targets, complex_abs):
    terms = []
    for p, t in zip(preds, targets):
        t_k = ag.value_of(p).size
        re_p, im_p = ag.fft2(p)
        re_t, im_t = ag.fft2(t)
        d_re = ag.sub(re_p, re_t)
        d_im = ag.sub(im_p, im_t)
        if complex_abs:
            term = ag.sum_all(ag.square_root(
                ag.add(ag.mul(d_re, d_re), ag.mul(d_im, d_im))))
        else:
            term = ag.add(ag.sum_all(ag.absolute(d_re)),
                          ag.sum_all(ag.absolute(d_im)))
        terms.append(ag.scale(term, 1.0 / t_k))
    return terms


def content_loss(preds, targets):
    """Sum over scales of the normalized L1 distance."""
    _check_pairs(preds, targets)
    return _sum_terms(_content_terms(preds, targets))


def msfr_loss(preds, targets, complex_abs=False):
    """Sum over scales of the normalized L1 distance between 2-D DFTs."""
    _check_pairs(preds, targets)
    return _sum_terms(_msfr_terms(preds, targets, complex_abs))


def total_loss(preds, targets, lam=DEFAULT_LAMBDA, complex_abs=False):
    """Full training objective; returns a LossReport."""
    if lam < 0:
        raise ContractViolation(f"lambda must be >= 0, got {lam}")
    _check_pairs(preds, targets)
    ct = _content_terms(preds, targets)
    mt = _msfr_terms(preds, targets, complex_abs)
    l_cont = _sum_terms(ct)
    l_msfr = _sum_terms(mt)
    loss = ag.add(l_cont, ag.scale(l_msfr, lam))

    def as_float(v):
        return float(ag.value_of(v).reshape(()))

    cont = as_float(l_cont)
    msfr = as_float(l_msfr)
    return LossReport(
        l_cont=cont, l_msfr=msfr, l_total=cont + lam * msfr, lam=lam,
        per_scale=[(as_float(a), as_float(b)) for a, b in zip(ct, mt)],
        loss=loss)
