from toolkit.commands import ToolkitCommand
from toolkit.fileio import list_images, read_ground_truth, write_descriptor_db
from toolkit.modelstore import load_model


class Command(ToolkitCommand):
    help = 'Extract multi-scale descriptors for every PPM image in a folder.'

    def add_arguments(self, parser):
        parser.add_argument('--model', required=True, help='Model file (DTM1).')
        parser.add_argument('--images', required=True, help='Folder of .ppm images.')
        parser.add_argument('--out', required=True, help='Descriptor database basename.')
        parser.add_argument('--ground-truth', help='Crop query images to their ground-truth boxes.')
        parser.add_argument('--no-crop', action='store_true', help='Keep query images uncropped.')
        parser.add_argument('--whitening', help='Whitening tensor to apply.')
        self.add_scales_argument(parser)
        self.add_threads_argument(parser)

    def run(self, **options):
        model = load_model(options['model'])
        boxes = {}
        if options['ground_truth'] and not options['no_crop']:
            boxes = {q.id: q.bbox for q in read_ground_truth(options['ground_truth']) if q.bbox is not None}
        ids, matrix = self.describe_images(model, list_images(options['images']), options, boxes)
        write_descriptor_db(options['out'], ids, matrix)
        self.report(f'{options["out"]}: {len(ids)} descriptors of size {matrix.shape[1]}')
