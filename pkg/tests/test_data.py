"""Image I/O, motion kernels, synthesis, and corpus generation."""

import numpy as np
import pytest

from mfenet import data, metrics, ops
from mfenet.data import (Image, generate_corpus, load_image, load_manifest,
                         load_pair, make_motion_kernel, save_image, synth_pair)
from mfenet.errors import ContractViolation, ImageFormatError


class TestPpm:
    def test_roundtrip_bitwise(self, rng, tmp_path):
        img = Image(rng.integers(0, 256, (12, 10, 3)).astype(np.uint8))
        path = tmp_path / "img.ppm"
        save_image(img, path)
        back = load_image(path)
        assert back.pixels.tobytes() == img.pixels.tobytes()
        assert (back.width, back.height) == (10, 12)

    def test_minimal_header_parses(self, tmp_path):
        payload = bytes(range(12))
        path = tmp_path / "mini.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + payload)
        img = load_image(path)
        assert (img.width, img.height) == (2, 2)
        assert img.pixels.tobytes() == payload

    def test_comments_in_header(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n# a comment\n2 1 # trailing\n255\n" + bytes(6))
        assert load_image(path).pixels.shape == (1, 2, 3)

    def test_truncated_payload_names_byte_counts(self, tmp_path):
        path = tmp_path / "trunc.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(7))
        with pytest.raises(ImageFormatError, match="expected 12 bytes, got 7"):
            load_image(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes(12))
        with pytest.raises(ImageFormatError, match="byte 0"):
            load_image(path)

    def test_wrong_maxval(self, tmp_path):
        path = tmp_path / "max.ppm"
        path.write_bytes(b"P6\n2 2\n65535\n" + bytes(24))
        with pytest.raises(ImageFormatError, match="maxval"):
            load_image(path)

    def test_non_numeric_dimension(self, tmp_path):
        path = tmp_path / "dim.ppm"
        path.write_bytes(b"P6\nx 2\n255\n")
        with pytest.raises(ImageFormatError, match="width"):
            load_image(path)


class TestMotionKernel:
    def test_length_one_is_identity(self):
        k = make_motion_kernel(1.0, 0.7)
        assert k.taps.sum() == pytest.approx(1.0)
        nz = np.nonzero(k.taps)
        assert len(nz[0]) == 1
        assert k.taps[k.size // 2, k.size // 2] == pytest.approx(1.0)

    def test_horizontal_five_tap(self):
        k = make_motion_kernel(5.0, 0.0)
        row = k.taps[k.size // 2]
        nz = row[row > 0]
        assert len(nz) == 5
        assert np.allclose(nz, 0.2)
        assert row.sum() == pytest.approx(1.0)  # all mass in the center row

    def test_fifty_random_kernels_normalized(self, rng):
        for _ in range(50):
            length = float(rng.uniform(1, 15))
            angle = float(rng.uniform(0, np.pi))
            k = make_motion_kernel(length, angle)
            assert k.taps.sum() == pytest.approx(1.0, abs=1e-9)
            assert (k.taps >= 0).all()
            assert k.size % 2 == 1

    def test_short_length_rejected(self):
        with pytest.raises(ContractViolation):
            make_motion_kernel(0.5, 0.0)


class TestSynthPair:
    def _flat(self, rng, size=16):
        return Image(rng.integers(0, 256, (size, size, 3)).astype(np.uint8))

    def test_identity_kernel_no_noise(self, rng):
        sharp = self._flat(rng)
        pair = synth_pair(sharp, make_motion_kernel(1.0, 0.0), 0.0, seed=0)
        assert pair.blurred.tobytes() == pair.sharp.tobytes()

    def test_edge_ramp_spans_kernel_length(self):
        # vertical step edge blurred by a 5-tap horizontal kernel becomes a
        # 5-sample ramp matching a direct convolution of the step profile
        px = np.zeros((16, 16, 3), np.uint8)
        px[:, 8:, :] = 255
        pair = synth_pair(Image(px), make_motion_kernel(5.0, 0.0), 0.0, seed=0)
        profile = pair.blurred[0, 0, 8, :]
        step = np.zeros(16)
        step[8:] = 1.0
        ref = np.convolve(np.pad(step, 2, mode="reflect"),
                          np.full(5, 0.2), mode="valid")
        assert np.abs(profile - ref).max() < 1e-6
        transition = np.where((profile > 0) & (profile < 1))[0]
        assert len(transition) == 4  # interior of a 5-px ramp

    def test_noise_deterministic_per_seed(self, rng):
        sharp = self._flat(rng)
        k = make_motion_kernel(3.0, 0.3)
        a = synth_pair(sharp, k, 0.01, seed=42)
        b = synth_pair(sharp, k, 0.01, seed=42)
        c = synth_pair(sharp, k, 0.01, seed=43)
        assert a.blurred.tobytes() == b.blurred.tobytes()
        assert a.blurred.tobytes() != c.blurred.tobytes()

    def test_indivisible_dims_rejected(self, rng):
        bad = Image(rng.integers(0, 256, (12, 16, 3)).astype(np.uint8))
        with pytest.raises(ContractViolation, match="divisible"):
            synth_pair(bad, make_motion_kernel(1.0, 0.0), 0.0, 0)

    def test_range_and_pyramid_invariant(self, rng):
        sharp = self._flat(rng)
        pair = synth_pair(sharp, make_motion_kernel(7.0, 1.1), 0.01, seed=1)
        for t in (pair.blurred, pair.sharp):
            assert t.min() >= 0.0 and t.max() <= 1.0
        for pyr, base in ((pair.blurred_pyramid, pair.blurred),
                          (pair.sharp_pyramid, pair.sharp)):
            assert pyr[0] is base
            assert pyr[1].tobytes() == ops.resize_half(base).tobytes()
            assert pyr[2].tobytes() == \
                ops.resize_half(ops.resize_half(base)).tobytes()


class TestCorpus:
    def test_counts_and_manifest(self, tmp_path):
        manifest = generate_corpus(6, 16, 3, tmp_path / "c")
        rows = load_manifest(manifest)
        assert len(rows) == 6
        files = sorted(p.name for p in (tmp_path / "c").iterdir())
        assert len(files) == 13  # 12 images + manifest
        for _, blur_path, sharp_path, length, angle, sigma in rows:
            assert 1.0 <= length <= 15.0
            assert 0.0 <= angle <= np.pi
            assert 0.0 <= sigma <= 0.01
            pair = load_pair(blur_path, sharp_path)
            assert pair.blurred.shape == (1, 3, 16, 16)

    def test_bitwise_regeneration(self, tmp_path):
        m1 = generate_corpus(3, 16, 9, tmp_path / "a")
        m2 = generate_corpus(3, 16, 9, tmp_path / "b")
        for r1, r2 in zip(load_manifest(m1), load_manifest(m2)):
            assert open(r1[1], "rb").read() == open(r2[1], "rb").read()
            assert open(r1[2], "rb").read() == open(r2[2], "rb").read()
        assert open(m1, "rb").read() == open(m2, "rb").read()

    def test_different_seed_differs(self, tmp_path):
        m1 = generate_corpus(2, 16, 1, tmp_path / "a")
        m2 = generate_corpus(2, 16, 2, tmp_path / "b")
        assert open(load_manifest(m1)[0][2], "rb").read() != \
            open(load_manifest(m2)[0][2], "rb").read()

    def test_blur_is_nontrivial(self, tmp_path):
        manifest = generate_corpus(12, 64, 21, tmp_path / "c")
        psnrs = []
        for _, bp, sp, *_ in load_manifest(manifest):
            psnrs.append(metrics.psnr(load_image(sp).pixels,
                                      load_image(bp).pixels, 255.0))
        assert np.mean(psnrs) < 35.0

    def test_invalid_size_rejected(self, tmp_path):
        with pytest.raises(ContractViolation, match="divisible"):
            generate_corpus(2, 60, 0, tmp_path / "c")
