import numpy as np
import pytest
from PIL import Image

from mixgan.data import load_image_dir
from mixgan.exceptions import ArgumentError, IoError, ShapeError, StageError
from mixgan.generate import (
    export_images,
    export_pairs,
    generate_content,
    generate_mixture,
    generate_pairs,
    sample_latent,
    tile,
)


def test_sample_latent_moments():
    z = sample_latent(100_000, 8, seed=0).data
    assert z.dtype == np.float32 and z.shape == (100_000, 8)
    assert np.all(np.abs(z.mean(axis=0)) < 0.02)
    assert np.all(np.abs(z.var(axis=0) - 1.0) < 0.02)


def test_sample_latent_seeded():
    a, b = sample_latent(5, 3, 4), sample_latent(5, 3, 4)
    assert np.array_equal(a.data, b.data) and a.seed == 4
    assert not np.array_equal(a.data, sample_latent(5, 3, 5).data)


@pytest.mark.parametrize("n", [0, -1, 2.5])
def test_sample_latent_rejects(n):
    with pytest.raises(ArgumentError):
        sample_latent(n, 4, 0)


class TestGenerate:
    def test_content_shapes_and_bound(self, tiny_content_ckpt):
        z = sample_latent(6, 4, 0).data
        out = generate_content(tiny_content_ckpt, z)
        assert out.shape == (6, 1, 16, 16)
        assert np.abs(out.data).max() <= 1.0

    def test_identical_rows(self, tiny_mixture_ckpt):
        z = np.repeat(sample_latent(1, 4, 3).data, 4, axis=0)
        for fn in (generate_content, generate_mixture):
            out = fn(tiny_mixture_ckpt, z).data
            assert all(np.array_equal(out[0], out[i]) for i in range(1, 4))

    def test_batch_size_independent(self, tiny_mixture_ckpt):
        z = sample_latent(8, 4, 1).data
        full = generate_mixture(tiny_mixture_ckpt, z).data
        np.testing.assert_allclose(generate_mixture(tiny_mixture_ckpt, z[:3]).data, full[:3], atol=1e-6)

    def test_mixture_shape(self, tiny_mixture_ckpt):
        c, m = generate_pairs(tiny_mixture_ckpt, sample_latent(5, 4, 0).data)
        assert c.shape == (5, 1, 16, 16) and m.shape == (5, 3, 16, 16)
        assert np.abs(m.data).max() <= 1.0

    def test_content_stage_has_no_mixture(self, tiny_content_ckpt):
        with pytest.raises(StageError):
            generate_mixture(tiny_content_ckpt, sample_latent(2, 4, 0).data)

    def test_latent_mismatch(self, tiny_content_ckpt):
        with pytest.raises(ShapeError):
            generate_content(tiny_content_ckpt, np.zeros((2, 5), np.float32))

    def test_frozen_content_decoder_bit_identical(self, tiny_content_ckpt, tiny_mixture_ckpt):
        z = sample_latent(16, 4, 2).data
        a = generate_content(tiny_content_ckpt, z).data
        b = generate_content(tiny_mixture_ckpt, z).data
        assert a.tobytes() == b.tobytes()

    def test_pure(self, tiny_mixture_ckpt):
        z = sample_latent(4, 4, 9).data
        first = generate_mixture(tiny_mixture_ckpt, z).data.copy()
        generate_content(tiny_mixture_ckpt, sample_latent(4, 4, 10).data)
        assert np.array_equal(generate_mixture(tiny_mixture_ckpt, z).data, first)


class TestExport:
    def test_all_minus_one_is_zero_bytes(self, tmp_path):
        export_images(-np.ones((4, 1, 5, 5), np.float32), tmp_path / "z.png")
        pixels = np.asarray(Image.open(tmp_path / "z.png"))
        assert pixels.dtype == np.uint8 and not pixels.any()

    def test_grid_size(self, tmp_path):
        rng = np.random.default_rng(0)
        batch = rng.uniform(-1, 1, (9, 3, 7, 7)).astype(np.float32)
        files = export_images(batch, tmp_path / "g.png", layout=(3, 3))
        assert files == [tmp_path / "g.png"]
        with Image.open(files[0]) as img:
            assert img.size == (21, 21) and img.mode == "RGB"

    def test_byte_mapping(self, tmp_path):
        values = np.array([-1.0, -0.5, 0.0, 0.3, 1.0], np.float32).reshape(5, 1, 1, 1)
        export_images(values, tmp_path / "m.png", layout=(1, 5))
        got = np.asarray(Image.open(tmp_path / "m.png"))[0]
        assert got.tolist() == [0, 64, 128, 166, 255]

    def test_round_trip_quantization(self, tmp_path):
        rng = np.random.default_rng(1)
        batch = rng.uniform(-1, 1, (3, 3, 8, 8)).astype(np.float32)
        export_images(batch, tmp_path / "grid.png", individual=True)
        (tmp_path / "grid.png").unlink()
        back = load_image_dir(tmp_path, 8)
        assert np.abs(back.data - batch).max() <= 1 / 127.5 + 1e-6

    def test_individual_names(self, tmp_path):
        files = export_images(np.zeros((11, 1, 4, 4), np.float32), tmp_path / "s.png", individual=True)
        assert files[1].name == "s_00.png" and files[-1].name == "s_10.png"

    def test_missing_directory(self, tmp_path):
        with pytest.raises(IoError):
            export_images(np.zeros((1, 1, 4, 4), np.float32), tmp_path / "nope" / "x.png")

    def test_layout_too_small(self):
        with pytest.raises(ArgumentError):
            tile(np.zeros((5, 1, 2, 2), np.float32), rows=2, cols=2)

    def test_tile_row_major(self):
        data = np.arange(4, dtype=np.float32).reshape(4, 1, 1, 1) / 4
        canvas = tile(data, rows=2, cols=2)
        assert canvas[0].tolist() == [[0.0, 0.25], [0.5, 0.75]]

    def test_pairs_layout(self, tmp_path):
        c = -np.ones((4, 1, 3, 3), np.float32)
        m = np.ones((4, 3, 3, 3), np.float32)
        export_pairs(c, m, tmp_path / "p.png")
        pixels = np.asarray(Image.open(tmp_path / "p.png"))
        assert pixels.shape == (12, 6, 3)
        assert not pixels[:6].any() and (pixels[6:] == 255).all()

    def test_pairs_length_mismatch(self, tmp_path):
        with pytest.raises(ArgumentError):
            export_pairs(np.zeros((2, 1, 3, 3), np.float32), np.zeros((3, 3, 3, 3), np.float32), tmp_path / "p.png")
