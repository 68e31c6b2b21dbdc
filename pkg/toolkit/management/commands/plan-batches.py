from sampler.batching import plan_batches
from toolkit.commands import ToolkitCommand
from toolkit.fileio import list_images, write_json
from toolkit.images import read_ppm_size


class Command(ToolkitCommand):
    help = 'Plan training mini-batches (group-size or fixed-size) for a folder of images.'

    def add_arguments(self, parser):
        parser.add_argument('--images', required=True, help='Folder of .ppm images.')
        parser.add_argument('--out', required=True, help='JSON batch plan to write.')
        parser.add_argument('--config', help='JSON configuration document.')
        parser.add_argument('--seed', type=int, help='Override the configuration seed.')

    def run(self, **options):
        config = self.load_config(options)
        metas = [(image_id, *read_ppm_size(path)) for image_id, path in list_images(options['images'])]
        batches = plan_batches(metas, config.sampler, config.seed)
        write_json(options['out'], [batch.to_dict() for batch in batches])
        self.report(f'{options["out"]}: {len(batches)} {config.sampler.mode}-size batches for {len(metas)} images')
