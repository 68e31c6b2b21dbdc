"""JSON documents, descriptor databases, image folders and CSV reports."""
import csv
import io
import logging
from pathlib import Path

from rest_framework.exceptions import ParseError
from rest_framework.parsers import JSONParser
from rest_framework.renderers import JSONRenderer

from dtop.config import ConfigError
from dtop.serializers import flatten_errors
from retrieval.search import DescriptorIndex
from retrieval.serializers import GroundTruthSerializer

from .modelstore import config_from_document
from .tensorio import read_tensor_file, write_tensor_file

logger = logging.getLogger(__name__)

IMAGE_SUFFIX = '.ppm'


class DocumentFormatError(ValueError):
    """Raised when a JSON document cannot be parsed."""


class DataFileError(ValueError):
    """Raised for well-formed files whose content is unusable."""


def read_json(path):
    with open(path, 'rb') as handle:
        try:
            return JSONParser().parse(handle)
        except ParseError as exc:
            raise DocumentFormatError(f'{path}: not a JSON document ({exc.detail})')


def write_json(path, data):
    rendered = JSONRenderer().render(data, renderer_context={'indent': 2})
    with open(path, 'wb') as handle:
        handle.write(rendered + b'\n')


def read_config(path):
    document = read_json(path)
    if not isinstance(document, dict):
        raise ConfigError('configuration must be a JSON object')
    return config_from_document(document)


def write_config(path, config):
    write_json(path, config.to_dict())


def read_ground_truth(path):
    serializer = GroundTruthSerializer(data=read_json(path))
    if not serializer.is_valid():
        raise DataFileError(f'{path}: ' + '; '.join(flatten_errors(serializer.errors)))
    return serializer.to_ground_truth()


def read_labels(path):
    """{image id: class} mapping."""
    labels = read_json(path)
    if not isinstance(labels, dict) or not all(isinstance(v, (str, int)) for v in labels.values()):
        raise DataFileError(f'{path}: labels must be an object mapping image id to class')
    return {str(key): str(value) for key, value in labels.items()}


# ---------------------------------------------------------------------
# Descriptor databases: <base>.dtt (n x N) + <base>.json (id array)
# ---------------------------------------------------------------------

def database_paths(base):
    base = Path(base)
    return base.with_name(base.name + '.dtt'), base.with_name(base.name + '.json')


def write_descriptor_db(base, ids, matrix):
    tensor_path, ids_path = database_paths(base)
    write_tensor_file(tensor_path, matrix)
    write_json(ids_path, list(ids))
    logger.info('wrote %d descriptors to %s', len(ids), tensor_path)


def read_descriptor_db(base):
    tensor_path, ids_path = database_paths(base)
    matrix = read_tensor_file(tensor_path)
    ids = read_json(ids_path)
    if not isinstance(ids, list) or not all(isinstance(i, str) for i in ids):
        raise DataFileError(f'{ids_path}: expected a JSON array of id strings')
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise DataFileError(
            f'{tensor_path}: shape {matrix.shape} does not match {len(ids)} ids in {ids_path}'
        )
    return DescriptorIndex(ids, matrix)


# ---------------------------------------------------------------------
# Image folders and reports
# ---------------------------------------------------------------------

def list_images(directory):
    """(image id, path) for every PPM in `directory`, sorted by id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f'{directory} is not a directory')
    found = sorted((path.stem, path) for path in directory.iterdir() if path.suffix == IMAGE_SUFFIX)
    if not found:
        raise DataFileError(f'{directory} holds no {IMAGE_SUFFIX} images')
    return found


def format_float(value):
    return f'{float(value):.9g}'


def write_csv(path, rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerows(rows)
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        handle.write(buffer.getvalue())
