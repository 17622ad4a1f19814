import numpy as np
import pytest

from instafield.images import (read_label_pgm, read_ppm, write_label_pgm,
                               write_ppm)


class TestPpm:
    def test_roundtrip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((9, 7, 3))
        write_ppm(tmp_path / "a.ppm", img)
        back = read_ppm(tmp_path / "a.ppm")
        assert back.shape == img.shape
        # 8-bit sRGB quantization: linear error below ~1/128 everywhere
        assert np.max(np.abs(back - img)) < 0.01

    def test_clamps_out_of_range(self, tmp_path):
        img = np.array([[[-0.5, 0.5, 1.5]]])
        write_ppm(tmp_path / "b.ppm", img)
        back = read_ppm(tmp_path / "b.ppm")
        assert np.isclose(back[0, 0, 0], 0.0)
        assert np.isclose(back[0, 0, 2], 1.0)

    def test_header_is_binary_p6(self, tmp_path):
        write_ppm(tmp_path / "c.ppm", np.zeros((2, 3, 3)))
        data = (tmp_path / "c.ppm").read_bytes()
        assert data.startswith(b"P6\n3 2\n255\n")
        assert len(data) == len(b"P6\n3 2\n255\n") + 2 * 3 * 3

    def test_reader_skips_comments(self, tmp_path):
        payload = bytes(range(18))
        (tmp_path / "d.ppm").write_bytes(
            b"P6\n# a comment\n3 2\n# another\n255\n" + payload)
        img = read_ppm(tmp_path / "d.ppm")
        assert img.shape == (2, 3, 3)

    def test_rejects_wrong_magic(self, tmp_path):
        (tmp_path / "e.ppm").write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(ValueError):
            read_ppm(tmp_path / "e.ppm")

    def test_rejects_wrong_shape(self, tmp_path):
        with pytest.raises(ValueError):
            write_ppm(tmp_path / "f.ppm", np.zeros((2, 2)))


class TestLabelPgm:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        ids = rng.integers(0, 65536, size=(6, 5)).astype(np.uint16)
        write_label_pgm(tmp_path / "a.pgm", ids)
        back = read_label_pgm(tmp_path / "a.pgm")
        assert back.dtype == np.uint16
        assert np.array_equal(back, ids)

    def test_payload_is_big_endian(self, tmp_path):
        ids = np.array([[0x0102]], dtype=np.uint16)
        write_label_pgm(tmp_path / "b.pgm", ids)
        data = (tmp_path / "b.pgm").read_bytes()
        assert data.endswith(b"\x01\x02")
        assert data.startswith(b"P5\n1 1\n65535\n")

    def test_class_sidecar(self, tmp_path):
        ids = np.array([[1, 2]], dtype=np.uint16)
        write_label_pgm(tmp_path / "c.pgm", ids, id_to_class={1: 3, 2: 1})
        assert (tmp_path / "c.pgm.json").exists()
        back, classes = read_label_pgm(tmp_path / "c.pgm", with_classes=True)
        assert classes == {1: 3, 2: 1}

    def test_missing_sidecar_gives_empty_map(self, tmp_path):
        write_label_pgm(tmp_path / "d.pgm", np.zeros((2, 2), np.uint16))
        _, classes = read_label_pgm(tmp_path / "d.pgm", with_classes=True)
        assert classes == {}

    def test_rejects_8bit_pgm(self, tmp_path):
        (tmp_path / "e.pgm").write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(ValueError):
            read_label_pgm(tmp_path / "e.pgm")

    def test_sentinel_survives(self, tmp_path):
        ids = np.full((3, 3), 65535, dtype=np.uint16)
        write_label_pgm(tmp_path / "f.pgm", ids)
        assert np.all(read_label_pgm(tmp_path / "f.pgm") == 65535)
