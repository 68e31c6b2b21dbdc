"""Shared plumbing for the toolkit's management commands."""
import logging

import numpy as np
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from descriptors.pipeline import extract_many
from descriptors.whitening import WhiteningTransform, whiten_rows
from dtop.config import FUSION_METHODS, ConfigError, ModelConfig
from retrieval.metrics import crop_query

from .fileio import DataFileError, DocumentFormatError, read_config
from .images import ImageFormatError, read_ppm
from .tensorio import TensorFormatError, read_tensor_file

logger = logging.getLogger(__name__)

FORMAT_ERRORS = (TensorFormatError, ImageFormatError, DocumentFormatError)


class ToolkitCommand(BaseCommand):
    """
    Base for every toolkit command.

    Subclasses implement `run(**options)`; failures are reported through
    `CommandError` with a prefix naming the kind of problem, which makes
    the process exit with status 1.
    """

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except CommandError:
            raise
        except FileNotFoundError as exc:
            raise CommandError(f'missing file: {exc.filename or exc}')
        except ConfigError as exc:
            raise CommandError(f'config error: {exc}')
        except FORMAT_ERRORS as exc:
            raise CommandError(f'format error: {exc}')
        except NotImplementedError as exc:
            raise CommandError(f'config error: {exc}')
        except (DataFileError, ValueError) as exc:
            raise CommandError(f'data error: {exc}')

    def run(self, **options):
        raise NotImplementedError('subclasses of ToolkitCommand must provide a run() method')

    # -----------------------------------------------------------------
    # Argument groups
    # -----------------------------------------------------------------

    def add_threads_argument(self, parser):
        parser.add_argument(
            '--threads', type=int, default=settings.DTOP['THREADS'],
            help='Worker threads; outputs do not depend on this.',
        )

    def add_scales_argument(self, parser):
        parser.add_argument('--scales', type=float, nargs='+', help='Override pipeline.scales.')

    def add_config_arguments(self, parser):
        parser.add_argument('--config', help='JSON configuration document.')
        parser.add_argument('--seed', type=int, help='Override the configuration seed.')
        parser.add_argument('--fusion', choices=FUSION_METHODS, help='Override head.fusion.method.')
        parser.add_argument('--k', type=int, help='Override head.k.')
        self.add_scales_argument(parser)

    def load_config(self, options):
        config = read_config(options['config']) if options.get('config') else ModelConfig()
        return config.with_overrides(
            seed=options.get('seed'),
            k=options.get('k'),
            fusion=options.get('fusion'),
            scales=options.get('scales'),
        )

    def scales_for(self, model, options):
        return tuple(options.get('scales') or model.config.pipeline.scales)

    def whitening_for(self, config, path):
        """The stored transform at `path`, unless the config turns whitening off."""
        if not path:
            return None
        if not config.pipeline.whitening:
            logger.warning('pipeline.whitening is false; ignoring %s', path)
            return None
        return WhiteningTransform.from_tensor(read_tensor_file(path))

    def describe_images(self, model, images, options, boxes=None):
        """(ids, descriptor matrix) for (id, path) pairs, cropped to `boxes` where given."""
        boxes = boxes or {}

        def loader(image_id, path):
            return lambda: crop_query(read_ppm(path), boxes.get(image_id))

        descriptors = extract_many(
            [(image_id, loader(image_id, path)) for image_id, path in images],
            model, self.scales_for(model, options), options['threads'],
        )
        ids = [d.image_id for d in descriptors]
        matrix = np.stack([d.values for d in descriptors])
        transform = self.whitening_for(model.config, options.get('whitening'))
        if transform is not None:
            matrix = whiten_rows(matrix, transform)
        return ids, matrix

    def report(self, message):
        self.stdout.write(message)
