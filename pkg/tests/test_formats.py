"""File formats: PGM/PPM, raw float images, fields, and checkpoints."""

import numpy as np
import pytest

from warpreg.formats import (
    CKPT_VERSION,
    FormatError,
    load_checkpoint,
    read_dvf2,
    read_imgf,
    read_pgm,
    read_ppm,
    save_checkpoint,
    write_dvf2,
    write_imgf,
    write_pgm,
    write_ppm,
)
from warpreg.model import Checkpoint, ModelConfig, ModelParams, scaled_channels
from warpreg.tensor import ShapeError


def tiny_checkpoint(seed=0, levels=2):
    config = ModelConfig(levels=levels, channels=scaled_channels(0.125))
    params = ModelParams.init(config, rng=np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for p in params.trainable():
        p.value += 0.1 * rng.normal(size=p.value.shape)
    return Checkpoint(config=config, params=params)


class TestImgf:
    def test_layout_arithmetic(self, tmp_path):
        # 2x2 single-channel image: 16-byte header + 4 * 4 payload bytes
        path = tmp_path / "img.imgf"
        write_imgf(path, np.array([[0.0, 0.5], [1.0, 0.25]]))
        assert path.stat().st_size == 16 + 16

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(3, 5, 7)).astype(np.float32).astype(np.float64)
        path = tmp_path / "img.imgf"
        write_imgf(path, values)
        np.testing.assert_array_equal(read_imgf(path), values)

    def test_write_deterministic(self, tmp_path):
        rng = np.random.default_rng(1)
        values = rng.normal(size=(1, 6, 6))
        a, b = tmp_path / "a.imgf", tmp_path / "b.imgf"
        write_imgf(a, values)
        write_imgf(b, values)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "img.imgf"
        write_imgf(path, np.zeros((1, 2, 2)))
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="bad magic"):
            read_imgf(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "img.imgf"
        write_imgf(path, np.zeros((1, 4, 4)))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError, match="truncated"):
            read_imgf(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "img.imgf"
        write_imgf(path, np.zeros((1, 2, 2)))
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(FormatError, match="trailing"):
            read_imgf(path)

    def test_rank_checked_on_write(self, tmp_path):
        with pytest.raises(ShapeError, match="C, H, W"):
            write_imgf(tmp_path / "img.imgf", np.zeros((1, 1, 2, 2)))


class TestDvf2:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        u = rng.normal(size=(2, 6, 4)).astype(np.float32).astype(np.float64)
        path = tmp_path / "u.dvf2"
        write_dvf2(path, u)
        np.testing.assert_array_equal(read_dvf2(path), u)

    def test_interleaved_layout(self, tmp_path):
        # payload stores (dy, dx) per pixel, row-major
        u = np.zeros((2, 1, 2), dtype=np.float64)
        u[0, 0] = [1.0, 3.0]
        u[1, 0] = [2.0, 4.0]
        path = tmp_path / "u.dvf2"
        write_dvf2(path, u)
        payload = np.frombuffer(path.read_bytes()[12:], dtype="<f4")
        np.testing.assert_array_equal(payload, [1.0, 2.0, 3.0, 4.0])

    def test_channel_count_enforced(self, tmp_path):
        with pytest.raises(ShapeError, match="2 channels"):
            write_dvf2(tmp_path / "u.dvf2", np.zeros((3, 4, 4)))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "u.dvf2"
        write_dvf2(path, np.zeros((2, 2, 2)))
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="bad magic"):
            read_dvf2(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "u.dvf2"
        write_dvf2(path, np.zeros((2, 3, 3)))
        path.write_bytes(path.read_bytes()[:20])
        with pytest.raises(FormatError, match="truncated"):
            read_dvf2(path)


class TestPnm:
    def test_pgm_round_trip_quantized(self, tmp_path):
        values = np.linspace(0.0, 1.0, 16).reshape(1, 4, 4)
        path = tmp_path / "img.pgm"
        write_pgm(path, values)
        back = read_pgm(path)
        assert back.shape == (1, 4, 4)
        assert np.abs(back - values).max() <= 0.5 / 255.0 + 1e-12

    def test_pgm_clips_out_of_range(self, tmp_path):
        path = tmp_path / "img.pgm"
        write_pgm(path, np.array([[-1.0, 2.0]]))
        np.testing.assert_array_equal(read_pgm(path), [[[0.0, 1.0]]])

    def test_pgm_comment_skipped(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_bytes(b"P5\n# a comment\n2 1\n255\n\x00\xff")
        np.testing.assert_array_equal(read_pgm(path), [[[0.0, 1.0]]])

    def test_pgm_bad_magic(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(FormatError, match="bad magic"):
            read_pgm(path)

    def test_pgm_wrong_maxval(self, tmp_path):
        path = tmp_path / "img.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(FormatError, match="maxval"):
            read_pgm(path)

    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        rgb = np.round(rng.uniform(size=(3, 3, 2)) * 255.0) / 255.0
        path = tmp_path / "img.ppm"
        write_ppm(path, rgb)
        np.testing.assert_allclose(read_ppm(path), rgb, rtol=0, atol=1e-12)

    def test_ppm_channel_check(self, tmp_path):
        with pytest.raises(ShapeError, match="3 channels"):
            write_ppm(tmp_path / "img.ppm", np.zeros((2, 2, 2)))


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        ckpt = tiny_checkpoint()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, ckpt)
        back = load_checkpoint(path)
        assert back.config == ckpt.config
        for (n1, p1), (n2, p2) in zip(
            ckpt.params.named_params(), back.params.named_params()
        ):
            assert n1 == n2
            # storage is f32: the reload equals the f32 quantization
            np.testing.assert_array_equal(
                p2.value, p1.value.astype(np.float32).astype(np.float64)
            )
        for (n1, b1), (n2, b2) in zip(
            ckpt.params.named_buffers(), back.params.named_buffers()
        ):
            assert n1 == n2
            np.testing.assert_array_equal(
                b2, b1.astype(np.float32).astype(np.float64)
            )

    def test_double_save_byte_identical(self, tmp_path):
        ckpt = tiny_checkpoint(seed=4)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, ckpt)
        save_checkpoint(b, ckpt)
        assert a.read_bytes() == b.read_bytes()

    def test_save_load_save_byte_identical(self, tmp_path):
        ckpt = tiny_checkpoint(seed=5)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, ckpt)
        save_checkpoint(b, load_checkpoint(a))
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, tiny_checkpoint())
        data = bytearray(path.read_bytes())
        data[:4] = b"JUNK"
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="bad magic"):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        import struct

        path = tmp_path / "model.ckpt"
        save_checkpoint(path, tiny_checkpoint())
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", CKPT_VERSION + 1)
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="version"):
            load_checkpoint(path)

    def test_truncated_record(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, tiny_checkpoint())
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, tiny_checkpoint())
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_checkpoint(path)

    def test_config_preserved(self, tmp_path):
        config = ModelConfig(
            levels=3,
            channels=scaled_channels(0.25),
            image_warp_kernel="catmull_rom",
            dvf_kernel="bilinear",
        )
        params = ModelParams.init(config, rng=np.random.default_rng(6))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, Checkpoint(config=config, params=params))
        back = load_checkpoint(path)
        assert back.config == config
