from retrieval.metrics import PROTOCOLS, evaluate
from toolkit.commands import ToolkitCommand
from toolkit.fileio import (
    DataFileError,
    format_float,
    list_images,
    read_descriptor_db,
    read_ground_truth,
    write_csv,
)
from toolkit.modelstore import load_model


class Command(ToolkitCommand):
    help = 'Score the index on a ground-truth file: per-query AP, mAP and mP@10.'

    def add_arguments(self, parser):
        parser.add_argument('--index', required=True, help='Index basename.')
        parser.add_argument('--ground-truth', required=True, help='Ground-truth JSON.')
        parser.add_argument('--protocol', choices=PROTOCOLS, default='medium')
        parser.add_argument('--out', required=True, help='CSV report to write.')
        queries = parser.add_mutually_exclusive_group(required=True)
        queries.add_argument('--queries', help='Precomputed query descriptor basename.')
        queries.add_argument('--query-images', help='Folder of query .ppm images to describe.')
        parser.add_argument('--model', help='Model file, needed with --query-images.')
        parser.add_argument('--no-crop', action='store_true', help='Do not crop queries to their boxes.')
        parser.add_argument('--whitening', help='Whitening tensor applied to described queries.')
        self.add_scales_argument(parser)
        self.add_threads_argument(parser)

    def run(self, **options):
        index = read_descriptor_db(options['index'])
        truth = read_ground_truth(options['ground_truth'])

        if options['queries']:
            database = read_descriptor_db(options['queries'])
            queries = dict(zip(database.ids, database.matrix))
        else:
            if not options['model']:
                raise DataFileError('--query-images needs --model')
            queries = self.describe_queries(truth, options)

        result = evaluate(index, queries, truth, options['protocol'], options['threads'])
        rows = [('query_id', 'ap')]
        rows.extend((query_id, format_float(ap)) for query_id, ap in result.per_query)
        rows.append(('mAP', format_float(result.mean_ap)))
        rows.append(('mP@10', format_float(result.mean_precision)))
        write_csv(options['out'], rows)
        self.report(
            f'{options["protocol"]}: mAP {result.mean_ap:.4f}, mP@10 {result.mean_precision:.4f} '
            f'({result.evaluated} queries)'
        )

    def describe_queries(self, truth, options):
        model = load_model(options['model'])
        available = dict(list_images(options['query_images']))
        wanted = [query.id for query in truth]
        missing = [query_id for query_id in wanted if query_id not in available]
        if missing:
            raise DataFileError(f'no query image for {", ".join(missing[:5])}')
        boxes = {} if options['no_crop'] else {q.id: q.bbox for q in truth if q.bbox is not None}
        ids, matrix = self.describe_images(
            model, [(query_id, available[query_id]) for query_id in wanted], options, boxes
        )
        return dict(zip(ids, matrix))
