import numpy as np
import pytest

from greyzone.pgmio import read_pgm, read_ppm, write_pgm, write_ppm


def test_pgm8_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.integers(0, 256, (13, 7)).astype(np.uint8)
    p = tmp_path / "a.pgm"
    write_pgm(p, arr, 255)
    back, maxval = read_pgm(p)
    assert maxval == 255
    assert (back == arr).all()
    # write -> read -> write is byte-identical
    first = p.read_bytes()
    write_pgm(p, back, maxval)
    assert p.read_bytes() == first


def test_pgm16_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    arr = rng.integers(0, 65536, (5, 9)).astype(np.uint16)
    p = tmp_path / "b.pgm"
    write_pgm(p, arr, 65535)
    back, maxval = read_pgm(p)
    assert maxval == 65535
    assert (back == arr).all()
    first = p.read_bytes()
    write_pgm(p, back, maxval)
    assert p.read_bytes() == first


def test_pgm16_is_big_endian(tmp_path):
    p = tmp_path / "c.pgm"
    write_pgm(p, np.array([[0x0102]]), 65535)
    body = p.read_bytes().split(b"\n", 3)[3]
    assert body == b"\x01\x02"


def test_pgm_reader_skips_comments(tmp_path):
    p = tmp_path / "d.pgm"
    p.write_bytes(b"P5\n# comment line\n2 1\n# another\n255\n\x07\x09")
    arr, maxval = read_pgm(p)
    assert arr.tolist() == [[7, 9]]


def test_pgm_rejects_bad_magic_and_range(tmp_path):
    p = tmp_path / "e.pgm"
    p.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        read_pgm(p)
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "f.pgm", np.array([[300]]), 255)


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    rgb = rng.integers(0, 256, (4, 6, 3)).astype(np.uint8)
    p = tmp_path / "g.ppm"
    write_ppm(p, rgb)
    assert (read_ppm(p) == rgb).all()


def test_no_tmp_file_left_behind(tmp_path):
    write_pgm(tmp_path / "h.pgm", np.zeros((2, 2)), 255)
    assert [f.name for f in tmp_path.iterdir()] == ["h.pgm"]
