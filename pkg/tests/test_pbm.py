import numpy as np
import pytest

from masks.generators import generate
from masks.mask import Mask, MaskInvariantError, MaskParseError, MaskType
from masks.pbm import HEADER_COMMENT, load_mask, parse_mask, save_mask


def random_mask(rng):
    h, w = int(rng.integers(2, 40)), int(rng.integers(2, 40))
    bits = (rng.random((h, w)) < 0.5).astype(np.uint8)
    bits[0, 0], bits[-1, -1] = 1, 0
    return Mask(bits)


def test_roundtrip_random_masks(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / 'mask.pbm'
    for _ in range(1000):
        mask = random_mask(rng)
        save_mask(mask, path)
        assert load_mask(path) == mask


def test_roundtrip_generated_mask(tmp_path):
    mask = generate(MaskType.THIN_STROKES, 64, 64, 3)
    save_mask(mask, tmp_path / 'thin.pbm')
    assert load_mask(tmp_path / 'thin.pbm') == mask


def test_file_layout(tmp_path):
    mask = Mask(np.array([[1, 0, 1], [0, 0, 1]], dtype=np.uint8))
    save_mask(mask, tmp_path / 'small.pbm')
    data = (tmp_path / 'small.pbm').read_bytes()
    assert data.startswith(b'P4\n' + HEADER_COMMENT + b'\n3 2\n')
    assert data.endswith(bytes([0b10100000, 0b00100000]))


def test_truncated_file(tmp_path):
    mask = generate(MaskType.EXPAND, 32, 32, 0)
    save_mask(mask, tmp_path / 'mask.pbm')
    data = (tmp_path / 'mask.pbm').read_bytes()
    (tmp_path / 'short.pbm').write_bytes(data[:-5])
    with pytest.raises(MaskParseError) as e:
        load_mask(tmp_path / 'short.pbm')
    assert e.value.offset == len(data) - 5


def test_bad_magic_and_header():
    with pytest.raises(MaskParseError) as e:
        parse_mask(b'P1\n2 2\n0 1 1 0')
    assert e.value.offset == 0
    with pytest.raises(MaskParseError):
        parse_mask(b'P4\n# comment\nx 2\n\x00\x00')
    with pytest.raises(MaskParseError):
        parse_mask(b'P4\n2')


def test_all_ones_file_is_degenerate():
    with pytest.raises(MaskInvariantError):
        parse_mask(b'P4\n16 16\n' + b'\xff' * 32)


def test_comments_are_skipped():
    mask = parse_mask(b'P4 # a\n# b\n2 1\n' + bytes([0b01000000]))
    assert mask.bits.tolist() == [[0, 1]]
