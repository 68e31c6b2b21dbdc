from pathlib import Path

from analysis.cka import cka_heatmap
from toolkit.commands import ToolkitCommand
from toolkit.fileio import format_float, list_images, write_csv
from toolkit.images import read_ppm
from toolkit.modelstore import load_model
from toolkit.tensorio import write_tensor_file


class Command(ToolkitCommand):
    help = 'Linear CKA between every pair of encoder layers over a folder of images.'

    def add_arguments(self, parser):
        parser.add_argument('--model', required=True, help='Model file (DTM1).')
        parser.add_argument('--images', required=True, help='Folder of .ppm images.')
        parser.add_argument('--out', required=True, help='Output basename (.dtt, .txt, .csv).')
        parser.add_argument('--patch-only', action='store_true', help='Pool patch tokens only, without [CLS].')
        parser.add_argument('--batch-size', type=int, help='Average CKA over minibatches of this size.')
        self.add_threads_argument(parser)

    def run(self, **options):
        model = load_model(options['model'])
        images = [read_ppm(path) for _, path in list_images(options['images'])]
        heatmap = cka_heatmap(
            model, images, patch_only=options['patch_only'],
            batch_size=options['batch_size'], threads=options['threads'],
        )

        base = Path(options['out'])
        write_tensor_file(base.with_name(base.name + '.dtt'), heatmap.matrix)
        base.with_name(base.name + '.txt').write_text(''.join(f'{label}\n' for label in heatmap.labels))
        rows = [('',) + heatmap.labels]
        rows.extend(
            (label,) + tuple(format_float(v) for v in row)
            for label, row in zip(heatmap.labels, heatmap.matrix)
        )
        write_csv(base.with_name(base.name + '.csv'), rows)
        self.report(f'{base}: {heatmap.depth}x{heatmap.depth} CKA over {len(images)} images')
