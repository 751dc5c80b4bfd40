"""Binary portable-bitmap (P4) mask files.

Bits are stored as written by `save_mask`: a set bit is a masked pixel
(1 = masked, 0 = keep), which the header comment records. Rows are padded
to whole bytes, most significant bit first.
"""
import os

import numpy as np

from masks.mask import Mask, MaskParseError


HEADER_COMMENT = b'# glama-lab mask: 1=masked 0=keep'
WHITESPACE = b' \t\n\r\x0b\x0c'


def save_mask(mask, path):
    header = b'P4\n' + HEADER_COMMENT + b'\n' + f'{mask.width} {mask.height}\n'.encode('ascii')
    payload = np.packbits(mask.bits.astype(bool), axis=1).tobytes()
    tmp_path = f'{path}.tmp'
    with open(tmp_path, mode='wb') as f:
        f.write(header)
        f.write(payload)
    os.replace(tmp_path, path)


def _skip_whitespace_and_comments(data, pos):
    while pos < len(data):
        if data[pos] in WHITESPACE:
            pos += 1
        elif data[pos:pos + 1] == b'#':
            end = data.find(b'\n', pos)
            pos = len(data) if end == -1 else end + 1
        else:
            break
    return pos


def _read_int(data, pos):
    pos = _skip_whitespace_and_comments(data, pos)
    start = pos
    while pos < len(data) and chr(data[pos]).isdigit():
        pos += 1
    if pos == start:
        raise MaskParseError('expected an integer in the header', start)
    return int(data[start:pos]), pos


def parse_mask(data):
    """Decodes P4 bytes into a Mask.

    Raises:
        MaskParseError: malformed or truncated data, with the byte offset.
        MaskInvariantError: the decoded bits form a degenerate mask.
    """
    if data[:2] != b'P4':
        raise MaskParseError(f'bad magic number {data[:2]!r}, expected P4', 0)

    width, pos = _read_int(data, 2)
    height, pos = _read_int(data, pos)
    if width < 1 or height < 1:
        raise MaskParseError(f'invalid dimensions {width}x{height}', pos)
    if pos >= len(data) or data[pos] not in WHITESPACE:
        raise MaskParseError('expected a single whitespace byte after the header', pos)
    pos += 1

    row_bytes = (width + 7) // 8
    expected = row_bytes * height
    available = len(data) - pos
    if available < expected:
        raise MaskParseError(f'truncated pixel data: expected {expected} bytes, '
                             f'found {available}', len(data))

    packed = np.frombuffer(data, dtype=np.uint8, count=expected, offset=pos)
    bits = np.unpackbits(packed.reshape(height, row_bytes), axis=1)[:, :width]
    return Mask(bits)


def load_mask(path):
    with open(path, mode='rb') as f:
        data = f.read()
    try:
        return parse_mask(data)
    except MaskParseError as e:
        raise MaskParseError(f'{path}: {e.reason}', e.offset) from e
