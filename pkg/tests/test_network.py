"""Model assembly: init determinism, shapes, toggles, identity, gradients."""

import numpy as np
import pytest

from mfenet import network, ops
from mfenet.errors import ContractViolation
from mfenet.network import ModelConfig, ModelParams, build, count_params, forward
from mfenet.selftest import model_gradient_check

TINY = ModelConfig(c_base=8, n_resblocks=1)


def tiny_input(seed=0, size=32, n=1):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, (n, 3, size, size)).astype(np.float32)


class TestBuild:
    def test_same_seed_bitwise_identical(self):
        a = build(TINY, seed=9)
        b = build(TINY, seed=9)
        assert list(a) == list(b)
        for name in a:
            assert a[name].tobytes() == b[name].tobytes()

    def test_scale_widths_double(self):
        cfg = ModelConfig(c_base=32)
        assert cfg.widths == (32, 64, 128)
        shapes = network.param_shapes(cfg)
        assert shapes["enc1.msfe.entry.w"] == (32, 3, 3, 3)
        assert shapes["enc2.msfe.entry.w"] == (64, 3, 3, 3)
        assert shapes["enc3.msfe.entry.w"] == (128, 3, 3, 3)

    def test_param_count_seed_independent(self):
        a = build(TINY, seed=1)
        b = build(TINY, seed=2)
        assert a.n_trainable() == b.n_trainable()
        assert any(a[n].tobytes() != b[n].tobytes()
                   for n in a.trainable_names())

    def test_count_matches_built_params(self):
        # count_params sums analytic shapes; the oracle sums real arrays
        for cfg in (TINY, ModelConfig(c_base=8, n_resblocks=2,
                                      use_msfe=False)):
            params = build(cfg, 0)
            brute = sum(int(params[n].size) for n in params.trainable_names())
            assert count_params(cfg) == brute

    def test_count_monotone_in_blocks(self):
        base = ModelConfig(c_base=8, n_resblocks=1, use_msfe=False,
                           use_febp=False)
        msfe = ModelConfig(c_base=8, n_resblocks=1, use_febp=False)
        febp = ModelConfig(c_base=8, n_resblocks=1, use_msfe=False)
        assert count_params(base) < count_params(msfe)
        assert count_params(base) < count_params(febp)

    def test_doubling_c_base_roughly_quadruples(self):
        small = count_params(ModelConfig(c_base=8, n_resblocks=1))
        big = count_params(ModelConfig(c_base=16, n_resblocks=1))
        assert big >= 3.5 * small

    def test_invalid_configs_rejected(self):
        with pytest.raises(ContractViolation):
            ModelConfig(c_base=3).validate()
        with pytest.raises(ContractViolation):
            ModelConfig(n_resblocks=0).validate()
        with pytest.raises(ContractViolation):
            ModelConfig(leaky_slope=1.5).validate()
        with pytest.raises(ContractViolation):
            ModelConfig(dtype="float16").validate()


class TestForward:
    def test_pyramid_output_shapes(self):
        cfg = ModelConfig(c_base=4, n_resblocks=1)
        params = build(cfg, 0)
        x = tiny_input(size=256)
        i1, i2, i3 = forward(params, cfg, x)
        assert i1.shape == (1, 3, 256, 256)
        assert i2.shape == (1, 3, 128, 128)
        assert i3.shape == (1, 3, 64, 64)

    def test_zero_heads_identity(self):
        params = build(TINY, seed=3)
        for k in (1, 2, 3):
            params.tensors[f"dec{k}.head.w"][:] = 0
            params.tensors[f"dec{k}.head.b"][:] = 0
        x = tiny_input(seed=4)
        i1, i2, i3 = forward(params, TINY, x)
        b2 = ops.resize_half(x)
        assert i1.tobytes() == x.tobytes()
        assert i2.tobytes() == b2.tobytes()
        assert i3.tobytes() == ops.resize_half(b2).tobytes()

    def test_raw_output_mode(self):
        cfg = ModelConfig(c_base=8, n_resblocks=1, residual_output=False)
        params = build(cfg, 3)
        for k in (1, 2, 3):
            params.tensors[f"dec{k}.head.w"][:] = 0
            params.tensors[f"dec{k}.head.b"][:] = 0
        i1, _, _ = forward(params, cfg, tiny_input())
        assert not i1.any()

    def test_baseline_topology_name_set(self):
        baseline = ModelConfig(c_base=8, n_resblocks=1, use_msfe=False,
                               use_febp=False)
        names = list(network.param_shapes(baseline))
        assert not any(".msfe." in n or n.startswith("febp") for n in names)
        assert any(".stem." in n for n in names)
        full = list(network.param_shapes(TINY))
        assert any(".msfe." in n for n in full)
        assert any(n.startswith("febp") for n in full)

    def test_all_toggle_combinations_run(self):
        x = tiny_input(size=16)
        for use_msfe in (False, True):
            for use_febp in (False, True):
                cfg = ModelConfig(c_base=8, n_resblocks=1,
                                  use_msfe=use_msfe, use_febp=use_febp)
                i1, i2, i3 = forward(build(cfg, 0), cfg, x)
                assert i1.shape == (1, 3, 16, 16)
                assert np.isfinite(i1).all()

    def test_indivisible_dims_rejected(self):
        params = build(TINY, 0)
        with pytest.raises(ContractViolation, match="divisible by 8"):
            forward(params, TINY, np.zeros((1, 3, 60, 64), np.float32))

    def test_too_small_for_febp_rejected(self):
        params = build(TINY, 0)
        with pytest.raises(ContractViolation, match="FEBP"):
            forward(params, TINY, np.zeros((1, 3, 8, 8), np.float32))

    def test_deterministic(self):
        params = build(TINY, 5)
        x = tiny_input(seed=6)
        a = forward(params, TINY, x)
        b = forward(params, TINY, x)
        for u, v in zip(a, b):
            assert u.tobytes() == v.tobytes()

    def test_scale_consistency(self):
        params = build(TINY, 7)
        i1, i2, _ = forward(params, TINY, tiny_input(seed=7))
        assert ops.resize_half(i1).shape == i2.shape

    def test_double_precision_mode(self):
        cfg = ModelConfig(c_base=8, n_resblocks=1, dtype="float64")
        params = build(cfg, 0)
        i1, _, _ = forward(params, cfg, tiny_input(size=16).astype(np.float64))
        assert i1.dtype == np.float64


class TestGradients:
    def test_end_to_end_without_febp_on_8x8(self):
        cfg = ModelConfig(c_base=8, n_resblocks=1, use_febp=False,
                          dtype="float64")
        worst = model_gradient_check(config=cfg, size=8, n_params=12, seed=5)
        assert worst < 1e-4

    def test_end_to_end_tiny_16x16(self):
        cfg = ModelConfig(c_base=8, n_resblocks=1, dtype="float64")
        worst = model_gradient_check(config=cfg, size=16, n_params=12, seed=3)
        assert worst < 1e-4
