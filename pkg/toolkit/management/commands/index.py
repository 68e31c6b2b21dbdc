from descriptors.whitening import WhiteningTransform, learn_whitening, matching_pairs, whiten_rows
from kernels.ops import l2_normalize_rows
from toolkit.commands import ToolkitCommand
from toolkit.fileio import DataFileError, read_descriptor_db, read_labels, write_descriptor_db
from toolkit.tensorio import read_tensor_file, write_tensor_file


class Command(ToolkitCommand):
    help = (
        'Build a search index from a descriptor database, optionally learning '
        'supervised whitening from image labels.'
    )

    def add_arguments(self, parser):
        parser.add_argument('--descriptors', required=True, help='Descriptor database basename.')
        parser.add_argument('--out', required=True, help='Index basename.')
        source = parser.add_mutually_exclusive_group()
        source.add_argument('--labels', help='JSON object mapping image id to class; learns whitening.')
        source.add_argument('--whitening', help='Existing whitening tensor to apply.')
        parser.add_argument('--whitening-out', help='Where to store the learned whitening tensor.')

    def run(self, **options):
        database = read_descriptor_db(options['descriptors'])
        matrix = database.matrix

        if options['labels']:
            if not options['whitening_out']:
                raise DataFileError('--labels needs --whitening-out to store the learned transform')
            labels = read_labels(options['labels'])
            missing = [image_id for image_id in database.ids if image_id not in labels]
            if missing:
                raise DataFileError(f'no label for {len(missing)} images (first: {missing[0]})')
            transform = learn_whitening(matrix, matching_pairs([labels[i] for i in database.ids]))
            write_tensor_file(options['whitening_out'], transform.to_tensor())
            matrix = whiten_rows(matrix, transform)
        elif options['whitening']:
            matrix = whiten_rows(matrix, WhiteningTransform.from_tensor(read_tensor_file(options['whitening'])))
        else:
            matrix = l2_normalize_rows(matrix)

        write_descriptor_db(options['out'], database.ids, matrix)
        self.report(f'{options["out"]}: {len(database)} entries')
