"""Unit tests for the converter.

IDX outputs are parsed here with struct/numpy directly (the package has
no tripath dependency); the cross-package readback check lives in
test_acceptance.py.
"""

import struct

import numpy as np
import pytest
from scipy.io import savemat

from usps_converter.convert import (EXAMPLES_PER_CLASS, MatFormatError,
                                    convert, main)

from synth import build_cells


def read_images(path):
    blob = path.read_bytes()
    magic, n, rows, cols = struct.unpack(">IIII", blob[:16])
    assert magic == 0x00000803
    pixels = np.frombuffer(blob[16:], dtype=np.uint8)
    assert pixels.size == n * rows * cols
    return pixels.reshape(n, rows, cols), rows, cols


def read_labels(path):
    blob = path.read_bytes()
    magic, n = struct.unpack(">II", blob[:8])
    assert magic == 0x00000801
    labels = np.frombuffer(blob[8:], dtype=np.uint8)
    assert labels.size == n
    return labels


@pytest.fixture()
def outputs(tmp_path):
    return tmp_path / "images.idx", tmp_path / "labels.idx"


class TestSelectors:
    def test_alpha_default(self, container, outputs):
        img_path, lab_path = outputs
        count, rows, cols = convert(container, img_path, lab_path)
        assert (count, rows, cols) == (26 * 39, 20, 16)
        images, rows, cols = read_images(img_path)
        labels = read_labels(lab_path)
        assert images.shape == (1014, 20, 16)
        assert sorted(set(labels)) == list(range(26))
        counts = np.bincount(labels, minlength=26)
        assert (counts == EXAMPLES_PER_CLASS).all()

    def test_digits(self, container, outputs):
        img_path, lab_path = outputs
        count, _, _ = convert(container, img_path, lab_path, "digits")
        assert count == 390
        labels = read_labels(lab_path)
        assert sorted(set(labels)) == list(range(10))

    def test_all(self, container, outputs):
        img_path, lab_path = outputs
        count, _, _ = convert(container, img_path, lab_path, "all")
        assert count == 36 * 39
        assert sorted(set(read_labels(lab_path))) == list(range(36))

    def test_unknown_selector(self, container, outputs):
        with pytest.raises(ValueError, match="selector"):
            convert(container, *outputs, "vowels")


class TestLayout:
    def test_class_major_order(self, container, outputs):
        img_path, lab_path = outputs
        convert(container, img_path, lab_path)
        labels = read_labels(lab_path)
        assert (np.diff(labels.astype(int)) >= 0).all()
        assert (labels == np.repeat(np.arange(26), EXAMPLES_PER_CLASS)).all()

    def test_pixels_are_0_or_255(self, container, outputs):
        img_path, lab_path = outputs
        convert(container, img_path, lab_path)
        images, _, _ = read_images(img_path)
        assert set(np.unique(images)) <= {0, 255}

    def test_images_match_cells(self, container, container_cells, outputs):
        img_path, lab_path = outputs
        convert(container, img_path, lab_path, "all")
        images, _, _ = read_images(img_path)
        i = 0
        for c in range(36):
            for j in range(EXAMPLES_PER_CLASS):
                assert (images[i] == container_cells[c, j] * 255).all(), \
                    (c, j)
                i += 1

    def test_rerun_byte_identical(self, container, tmp_path):
        paths = [(tmp_path / f"i{k}.idx", tmp_path / f"l{k}.idx")
                 for k in range(2)]
        for img_path, lab_path in paths:
            convert(container, img_path, lab_path)
        assert paths[0][0].read_bytes() == paths[1][0].read_bytes()
        assert paths[0][1].read_bytes() == paths[1][1].read_bytes()


class TestMalformedInput:
    def test_missing_dat(self, tmp_path, outputs):
        bad = tmp_path / "bad.mat"
        savemat(bad, {"notdat": np.zeros((2, 2))})
        with pytest.raises(MatFormatError, match="missing variable 'dat'"):
            convert(bad, *outputs)

    def test_wrong_grid_shape(self, tmp_path, outputs):
        cells = build_cells()[:, :10]
        bad = tmp_path / "bad.mat"
        savemat(bad, {"dat": cells})
        with pytest.raises(MatFormatError, match="shape"):
            convert(bad, *outputs)

    def test_wrong_cell_shape(self, tmp_path, outputs):
        cells = build_cells()
        cells[3, 7] = np.zeros((8, 8), dtype=np.uint8)
        bad = tmp_path / "bad.mat"
        savemat(bad, {"dat": cells})
        with pytest.raises(MatFormatError, match=r"cell \(3,7\)"):
            convert(bad, *outputs)

    def test_nonbinary_pixels(self, tmp_path, outputs):
        cells = build_cells()
        cells[0, 0] = cells[0, 0] * 7
        bad = tmp_path / "bad.mat"
        savemat(bad, {"dat": cells})
        with pytest.raises(MatFormatError, match="outside"):
            convert(bad, *outputs)

    def test_not_a_mat_file(self, tmp_path, outputs):
        bad = tmp_path / "bad.mat"
        bad.write_text("this is not a MAT container")
        with pytest.raises(MatFormatError, match="not a MAT container"):
            convert(bad, *outputs)


class TestCli:
    def test_happy_path(self, container, outputs, capsys):
        img_path, lab_path = outputs
        rc = main([str(container), str(img_path), str(lab_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "1014 images (20x16)" in out
        assert img_path.exists() and lab_path.exists()

    def test_classes_flag(self, container, outputs):
        img_path, lab_path = outputs
        rc = main([str(container), str(img_path), str(lab_path),
                   "--classes", "digits"])
        assert rc == 0
        assert read_labels(lab_path).max() == 9

    def test_bad_selector_usage(self, container, outputs):
        with pytest.raises(SystemExit) as exc:
            main([str(container), str(outputs[0]), str(outputs[1]),
                  "--classes", "vowels"])
        assert exc.value.code == 2

    def test_missing_input(self, tmp_path, outputs, capsys):
        rc = main([str(tmp_path / "absent.mat"), str(outputs[0]),
                   str(outputs[1])])
        assert rc == 3
        assert "convert_alphadigits:" in capsys.readouterr().err

    def test_malformed_input(self, tmp_path, outputs, capsys):
        bad = tmp_path / "bad.mat"
        savemat(bad, {"dat": np.zeros((3, 3))})
        rc = main([str(bad), str(outputs[0]), str(outputs[1])])
        assert rc == 3
        assert "shape" in capsys.readouterr().err
