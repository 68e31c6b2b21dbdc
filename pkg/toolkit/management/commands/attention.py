from pathlib import Path

from descriptors.pipeline import resize_image, scaled_size
from encoder.transformer import cls_attention_map
from toolkit.commands import ToolkitCommand
from toolkit.fileio import format_float, write_csv
from toolkit.images import read_ppm
from toolkit.modelstore import load_model
from toolkit.tensorio import write_tensor_file


class Command(ToolkitCommand):
    help = 'Head-averaged [CLS] attention over the patch grid for one image.'

    def add_arguments(self, parser):
        parser.add_argument('--model', required=True, help='Model file (DTM1).')
        parser.add_argument('--image', required=True, help='A .ppm image.')
        parser.add_argument('--layer', type=int, help='Encoder layer, 1-based (default: last).')
        parser.add_argument('--out', required=True, help='Output basename (.dtt, .csv).')

    def run(self, **options):
        model = load_model(options['model'])
        image = read_ppm(options['image'])
        _, height, width = image.shape
        target_w, target_h = scaled_size(width, height, 1.0, model.ratio)
        outputs = model.encode_image(resize_image(image, target_w, target_h))
        layer = outputs.depth if options['layer'] is None else options['layer']
        attention = cls_attention_map(outputs, layer)

        base = Path(options['out'])
        write_tensor_file(base.with_name(base.name + '.dtt'), attention)
        write_csv(base.with_name(base.name + '.csv'), [[format_float(v) for v in row] for row in attention])
        self.report(f'{base}: layer {layer}, {outputs.h}x{outputs.w} attention map')
