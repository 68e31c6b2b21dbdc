from pooling.model import DToPModel
from toolkit.commands import ToolkitCommand
from toolkit.modelstore import save_model


class Command(ToolkitCommand):
    help = 'Write a model file with seeded random weights for a configuration.'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--out', required=True, help='Model file to write.')

    def run(self, **options):
        config = self.load_config(options)
        model = DToPModel.initialize(config)
        save_model(options['out'], model)
        self.report(f'{options["out"]}: {len(model.state())} weight tensors, {model.out_dim}-dim descriptors')
