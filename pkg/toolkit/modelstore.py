"""
DTM1 model files.

Layout: the magic "DTM1", a little-endian u32 header length, a JSON header
{"config": ..., "weights": [names]}, then one DTT record per weight in
header order.
"""
import io
import logging
import struct

from rest_framework.exceptions import ParseError
from rest_framework.parsers import JSONParser
from rest_framework.renderers import JSONRenderer

from dtop.config import ConfigError
from dtop.serializers import flatten_errors
from pooling.model import DToPModel

from .serializers import ModelConfigSerializer
from .tensorio import TensorFormatError, decode_tensor, encode_tensor

logger = logging.getLogger(__name__)

MAGIC = b'DTM1'


def encode_model(model):
    state = model.state()
    header = JSONRenderer().render({
        'config': model.config.to_dict(),
        'weights': [name for name, _ in state],
    })
    parts = [MAGIC, struct.pack('<I', len(header)), header]
    parts.extend(encode_tensor(array) for _, array in state)
    return b''.join(parts)


def config_from_document(document):
    serializer = ModelConfigSerializer(data=document)
    if not serializer.is_valid():
        raise ConfigError('; '.join(flatten_errors(serializer.errors)))
    return serializer.to_config()


def decode_model(data):
    if len(data) < 8:
        raise TensorFormatError('offset 0: truncated model header')
    if data[:4] != MAGIC:
        raise TensorFormatError(f'offset 0: bad magic {bytes(data[:4])!r}, expected {MAGIC!r}')
    (length,) = struct.unpack_from('<I', data, 4)
    if len(data) < 8 + length:
        raise TensorFormatError(f'offset 8: truncated model header, need {length} bytes')
    try:
        header = JSONParser().parse(io.BytesIO(data[8:8 + length]))
    except ParseError as exc:
        raise TensorFormatError(f'offset 8: model header is not JSON ({exc.detail})')
    if not isinstance(header, dict) or set(header) != {'config', 'weights'}:
        raise TensorFormatError('offset 8: model header must hold exactly "config" and "weights"')

    model = DToPModel.skeleton(config_from_document(header['config']))
    cursor = 8 + length
    state = {}
    for name in header['weights']:
        state[name], cursor = decode_tensor(data, cursor)
    if cursor != len(data):
        raise TensorFormatError(f'offset {cursor}: {len(data) - cursor} trailing bytes after weights')
    model.load_state(state)
    return model


def save_model(path, model):
    data = encode_model(model)
    with open(path, 'wb') as handle:
        handle.write(data)
    logger.info('wrote model %s (%d weights, %d bytes)', path, len(model.state()), len(data))


def load_model(path):
    with open(path, 'rb') as handle:
        return decode_model(handle.read())
