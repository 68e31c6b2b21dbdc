"""Binary PPM (P6, maxval 255) images as channel-planar float tensors."""
import io

import numpy as np
from PIL import Image

MAX_VALUE = 255


class ImageFormatError(ValueError):
    """Raised for unsupported or malformed image files."""


def _header_tokens(data):
    """The four header tokens and the offset of the first pixel byte."""
    tokens = []
    cursor = 0
    while len(tokens) < 4:
        if cursor >= len(data):
            raise ImageFormatError('truncated PPM header')
        byte = data[cursor:cursor + 1]
        if byte == b'#':
            end = data.find(b'\n', cursor)
            cursor = len(data) if end < 0 else end + 1
        elif byte.isspace():
            cursor += 1
        else:
            start = cursor
            while cursor < len(data) and not data[cursor:cursor + 1].isspace():
                cursor += 1
            tokens.append(data[start:cursor])
    # exactly one whitespace byte separates maxval from the pixels
    return tokens, cursor + 1


def parse_header(data):
    tokens, offset = _header_tokens(data)
    if tokens[0] != b'P6':
        raise ImageFormatError(f'unsupported image format {tokens[0][:8]!r}: only binary PPM (P6) is read')
    try:
        width, height, maxval = (int(token) for token in tokens[1:])
    except ValueError:
        raise ImageFormatError('PPM header extents are not integers')
    if width <= 0 or height <= 0:
        raise ImageFormatError(f'PPM image has extent 0 ({width}x{height})')
    if maxval != MAX_VALUE:
        raise ImageFormatError(f'PPM maxval must be {MAX_VALUE}, got {maxval}')
    return width, height, offset


def decode_ppm(data):
    """(3, H, W) float32 tensor in [0, 1] from P6 bytes."""
    width, height, offset = parse_header(data)
    expected = 3 * width * height
    pixels = data[offset:offset + expected]
    if len(pixels) < expected:
        raise ImageFormatError(f'short PPM pixel data: expected {expected} bytes, got {len(pixels)}')
    image = Image.frombytes('RGB', (width, height), pixels)
    return (np.asarray(image, dtype=np.float32) / MAX_VALUE).transpose(2, 0, 1).copy()


def read_ppm(path):
    with open(path, 'rb') as handle:
        return decode_ppm(handle.read())


def read_ppm_size(path):
    """(width, height) from the header alone."""
    with open(path, 'rb') as handle:
        width, height, _ = parse_header(handle.read(1024))
    return width, height


def encode_ppm(image):
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ImageFormatError(f'expected a (3, H, W) image, got shape {image.shape}')
    pixels = np.rint(np.clip(image, 0, 1) * MAX_VALUE).astype(np.uint8).transpose(1, 2, 0)
    buffer = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels)).save(buffer, format='PPM')
    return buffer.getvalue()


def write_ppm(path, image):
    with open(path, 'wb') as handle:
        handle.write(encode_ppm(image))
