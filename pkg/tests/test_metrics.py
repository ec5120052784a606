"""MAE/SSIM identities, FLOPs accounting, and PGM round-trips."""

import numpy as np
import pytest

from geoedit.errors import ConfigError, ContractError, DimensionError, ImageFormatError
from geoedit.flops import (
    flops_attention,
    flops_conv,
    load_arch_config,
    reference_arch,
    unet_flops_breakdown,
    validate_arch,
)
from geoedit.imageio import read_pgm, write_pgm
from geoedit.metrics import mae, ssim


class TestMae:
    def test_identical_zero(self):
        a = np.random.default_rng(0).uniform(-1, 1, (32, 32))
        assert mae(a, a) == 0.0

    def test_ones_vs_zeros(self):
        assert mae(np.ones((8, 8)), np.zeros((8, 8))) == 1.0

    def test_checkerboard_vs_inverse(self):
        idx = np.indices((16, 16)).sum(axis=0)
        board = np.where(idx % 2 == 0, 1.0, -1.0)
        assert mae(board, -board) == 2.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mae(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSsim:
    def test_identical_is_one(self):
        a = np.random.default_rng(1).uniform(-1, 1, (32, 32))
        assert abs(ssim(a, a) - 1.0) < 1e-12

    def test_negation_of_zero_mean_is_negative(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(32, 32))
        # remove per-window means so the luminance term stays neutral
        means = z.reshape(4, 8, 4, 8).transpose(0, 2, 1, 3).mean(axis=(2, 3))
        z = z - means.repeat(8, axis=0).repeat(8, axis=1)
        z = 0.9 * z / np.abs(z).max()
        assert ssim(z, -z) < 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = rng.uniform(-1, 1, (32, 32))
            b = rng.uniform(-1, 1, (32, 32))
            assert ssim(a, b) == ssim(b, a)

    def test_bounded_and_less_than_one_for_noise(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(-1, 1, (32, 32))
        b = rng.uniform(-1, 1, (32, 32))
        assert -1.0 - 1e-9 <= ssim(a, b) < 1.0

    def test_window_too_large(self):
        with pytest.raises(ContractError, match="window"):
            ssim(np.zeros((4, 4)), np.zeros((4, 4)), window=8)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ssim(np.zeros((8, 8)), np.zeros((8, 16)))


class TestFlopsFormulas:
    def test_attention_unit_case(self):
        assert flops_attention(1, 1) == 12

    def test_attention_reference_value(self):
        assert flops_attention(4096, 512) == 8 * 4096 * 512**2 + 4 * 4096**2 * 512

    def test_quadratic_term_quadruples_when_n_doubles(self):
        c = 64
        for n in (16, 128, 1024):
            quad = flops_attention(n, c) - 8 * n * c * c
            quad2 = flops_attention(2 * n, c) - 8 * (2 * n) * c * c
            assert quad2 == 4 * quad

    def test_conv_formula(self):
        assert flops_conv(8, 8, 8, kernel=1) == 2 * 64 * 64
        assert flops_conv(32, 1, 16) == 2 * 32 * 32 * 1 * 16 * 9

    def test_nonpositive_rejected(self):
        with pytest.raises(ConfigError):
            flops_attention(0, 4)
        with pytest.raises(ConfigError):
            flops_conv(4, 4, 0)


class TestUnetBreakdown:
    def test_no_attention_share_zero(self):
        arch = {
            "stages": [{"downsample": 1, "channels": 8, "res_blocks": 2}],
            "mirror_decoder": False,
        }
        report = unet_flops_breakdown(arch, 16)
        assert report.attention == 0 and report.attention_share == 0.0

    def test_equal_attention_and_conv_gives_half_share(self):
        arch = {
            "kernel": 1,
            "mirror_decoder": False,
            "stages": [
                {"downsample": 2, "channels": 8, "res_blocks": 1},
                {"downsample": 4, "channels": 8, "attention_blocks": 1},
            ],
        }
        report = unet_flops_breakdown(arch, 16)
        assert report.resnet == report.attention == 16384
        assert report.attention_share == 0.5

    def test_reference_arch_orderings(self):
        arch = reference_arch()
        r256 = unet_flops_breakdown(arch, 256)
        r512 = unet_flops_breakdown(arch, 512)
        assert r256.attention_share > 0.5
        assert r512.attention_share > 0.5
        assert r512.attention_to_conv_ratio > r256.attention_to_conv_ratio

    def test_share_increases_with_resolution_given_attention(self):
        arch = reference_arch()
        shares = [unet_flops_breakdown(arch, r).attention_share for r in (64, 128, 256, 512)]
        assert all(b > a for a, b in zip(shares, shares[1:]))

    def test_row_is_consistent(self):
        report = unet_flops_breakdown(reference_arch(), 256)
        row = report.as_row()
        assert row["attention_flops"] + row["convolution_flops"] + row["resnet_flops"] + row[
            "other_flops"
        ] == report.total

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            validate_arch({"stages": [{"downsample": 1, "channels": 4}], "depth": 3})
        with pytest.raises(ConfigError, match="unknown"):
            validate_arch({"stages": [{"downsample": 1, "channels": 4, "heads": 2}]})

    def test_downsample_must_divide_resolution(self):
        arch = {"stages": [{"downsample": 3, "channels": 4, "res_blocks": 1}]}
        with pytest.raises(ConfigError, match="downsample"):
            unet_flops_breakdown(arch, 16)

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_arch_config(tmp_path / "nope.json")

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{не json")
        with pytest.raises(ConfigError, match="JSON"):
            load_arch_config(p)


class TestPgm:
    def test_roundtrip_within_half_quantum(self, tmp_path):
        rng = np.random.default_rng(5)
        img = rng.uniform(-1, 1, (32, 32))
        path = tmp_path / "img.pgm"
        write_pgm(path, img)
        back = read_pgm(path)
        assert np.abs(img - back).max() <= (2.0 / 255.0) / 2 + 1e-12

    def test_requantization_fixed_point(self, tmp_path):
        rng = np.random.default_rng(6)
        img = rng.uniform(-1, 1, (16, 16))
        p1, p2 = tmp_path / "a.pgm", tmp_path / "b.pgm"
        write_pgm(p1, img)
        once = read_pgm(p1)
        write_pgm(p2, once)
        np.testing.assert_array_equal(read_pgm(p2), once)

    def test_ascii_and_binary_agree(self, tmp_path):
        rng = np.random.default_rng(7)
        img = rng.uniform(-1, 1, (8, 12))
        write_pgm(tmp_path / "b.pgm", img, binary=True)
        write_pgm(tmp_path / "a.pgm", img, binary=False)
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), read_pgm(tmp_path / "b.pgm"))

    def test_heatmap_range(self, tmp_path):
        scores = np.linspace(0, 1, 64).reshape(8, 8)
        path = tmp_path / "heat.pgm"
        write_pgm(path, scores, vmin=0.0, vmax=1.0)
        back = read_pgm(path, vmin=0.0, vmax=1.0)
        assert back.min() == 0.0 and back.max() == 1.0

    def test_out_of_range_clamped(self, tmp_path):
        img = np.array([[-5.0, 5.0]])
        path = tmp_path / "c.pgm"
        write_pgm(path, img)
        np.testing.assert_array_equal(read_pgm(path), [[-1.0, 1.0]])

    def test_header_comments_skipped(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P2\n# a comment\n2 1\n# another\n255\n0 255\n")
        np.testing.assert_array_equal(read_pgm(path), [[-1.0, 1.0]])

    def test_no_temp_file_left(self, tmp_path):
        write_pgm(tmp_path / "x.pgm", np.zeros((4, 4)))
        assert [p.name for p in tmp_path.iterdir()] == ["x.pgm"]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P6\n1 1\n255\n\x00")
        with pytest.raises(ImageFormatError, match="magic"):
            read_pgm(path)

    def test_truncated_raster(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x00\x01")
        with pytest.raises(ImageFormatError, match="truncated"):
            read_pgm(path)

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "wide.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(ImageFormatError, match="maxval"):
            read_pgm(path)

    def test_non_image_shape_rejected(self, tmp_path):
        with pytest.raises(ContractError):
            write_pgm(tmp_path / "x.pgm", np.zeros((2, 2, 2)))
