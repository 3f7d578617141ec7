import struct

import numpy as np
import pytest

from deepcluster.dataio import (Dataset, FormatError, load_assignments, load_csv_matrix, load_dataset,
                                load_idx, load_pnm, parse_pnm, write_assignments, write_csv_matrix,
                                write_idx_images, write_idx_labels, write_pnm)


def _idx_images(path, pixels, magic=0x803, extra=b""):
    n, h, w = pixels.shape
    path.write_bytes(struct.pack(">IIII", magic, n, h, w) + pixels.astype(np.uint8).tobytes() + extra)
    return path


def test_idx_2x2_pixels(tmp_path):
    p = _idx_images(tmp_path / "img", np.array([[[0, 255], [128, 64]]]))
    ds = load_idx(p)
    assert ds.images.shape == (1, 1, 2, 2)
    np.testing.assert_allclose(ds.images[0, 0], [[0.0, 1.0], [128 / 255, 64 / 255]], rtol=1e-7)


def test_idx_with_labels(tmp_path):
    img = _idx_images(tmp_path / "img", np.zeros((3, 2, 2)))
    lab = tmp_path / "lab"
    lab.write_bytes(struct.pack(">II", 0x801, 3) + bytes([4, 0, 9]))
    ds = load_idx(img, lab)
    assert ds.labels.tolist() == [4, 0, 9]
    assert ds.ids.tolist() == [0, 1, 2]


def test_idx_bad_magic(tmp_path):
    with pytest.raises(FormatError, match="bad magic"):
        load_idx(_idx_images(tmp_path / "img", np.zeros((1, 2, 2)), magic=0x801))


def test_idx_truncated(tmp_path):
    p = tmp_path / "img"
    p.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(5))
    with pytest.raises(FormatError, match="truncated"):
        load_idx(p)


def test_idx_trailing_bytes(tmp_path):
    with pytest.raises(FormatError, match="byte count mismatch"):
        load_idx(_idx_images(tmp_path / "img", np.zeros((1, 2, 2)), extra=b"\0"))


def test_idx_round_trip(tmp_path, rng):
    pix = rng.integers(0, 256, (4, 5, 3))
    write_idx_images(tmp_path / "a", pix / 255.0)
    write_idx_labels(tmp_path / "b", [1, 2, 3, 4])
    ds = load_dataset(tmp_path / "a", tmp_path / "b")
    np.testing.assert_array_equal(np.rint(ds.images[:, 0] * 255), pix)
    assert ds.labels.tolist() == [1, 2, 3, 4]


def test_pgm_pixels():
    raw = b"P5\n2 2\n255\n" + bytes([0, 128, 255, 0])
    np.testing.assert_allclose(parse_pnm(raw)[0], [[0.0, 128 / 255], [1.0, 0.0]], rtol=1e-7)


def test_pgm_comments_and_maxval():
    raw = b"P5 # a comment\n# another\n1 1\n# x\n15\n" + bytes([15])
    assert parse_pnm(raw)[0, 0, 0] == 1.0


def test_ppm_channels():
    raw = b"P6\n1 1\n255\n" + bytes([255, 0, 51])
    np.testing.assert_allclose(parse_pnm(raw)[:, 0, 0], [1.0, 0.0, 0.2], rtol=1e-7)


@pytest.mark.parametrize("raw,msg", [
    (b"P2\n1 1\n255\n0", "unsupported PNM magic"),
    (b"P5\n2 2\n255\n" + bytes(3), "truncated"),
    (b"P5\n1 1\n65535\n" + bytes(2), "maxval"),
])
def test_pnm_errors(raw, msg):
    with pytest.raises(FormatError, match=msg):
        parse_pnm(raw)


def test_pnm_directory_round_trip(tmp_path, rng):
    imgs = np.rint(rng.random((3, 1, 4, 4)) * 255) / 255
    for i, im in enumerate(imgs):
        write_pnm(tmp_path / f"{i:03d}.pgm", im)
    ds = load_dataset(tmp_path)
    np.testing.assert_allclose(ds.images, imgs, atol=1e-6)
    np.testing.assert_allclose(load_pnm(tmp_path / "000.pgm"), imgs[0], atol=1e-6)


def test_csv_matrix(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("1,2.5\n-3,4e2\n")
    np.testing.assert_array_equal(load_csv_matrix(p), [[1, 2.5], [-3, 400]])


@pytest.mark.parametrize("text,msg", [("", "empty input"), ("1,2\n3\n", "ragged row at line 2"),
                                      ("1,x\n", "unparsable cell")])
def test_csv_errors(tmp_path, text, msg):
    p = tmp_path / "m.csv"
    p.write_text(text)
    with pytest.raises(FormatError, match=msg):
        load_csv_matrix(p)


def test_csv_header_skipped(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("a,b\n1,2\n")
    assert load_csv_matrix(p, header=True).tolist() == [[1, 2]]


def test_csv_round_trip(tmp_path, rng):
    x = rng.standard_normal((4, 3)).astype(np.float32)
    write_csv_matrix(tmp_path / "m.csv", x)
    np.testing.assert_array_equal(load_csv_matrix(tmp_path / "m.csv"), x)


def test_assignments_round_trip(tmp_path):
    write_assignments(tmp_path / "a.csv", [2, 0, 1], ids=[5, 3, 4])
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "id,cluster"
    assert load_assignments(tmp_path / "a.csv").tolist() == [0, 1, 2]


def test_dataset_is_read_only():
    ds = Dataset(np.zeros((2, 1, 3, 3)), [0, 1])
    with pytest.raises(ValueError):
        ds.images[0, 0, 0, 0] = 1.0
    assert ds.without_labels().labels is None


def test_dataset_label_length_checked():
    with pytest.raises(FormatError):
        Dataset(np.zeros((2, 1, 3, 3)), [0])
