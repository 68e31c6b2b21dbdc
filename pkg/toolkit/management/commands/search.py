from toolkit.commands import ToolkitCommand
from toolkit.fileio import format_float, read_descriptor_db, write_csv


class Command(ToolkitCommand):
    help = 'Rank the index against every query descriptor and write query_id,rank,db_id,similarity rows.'

    def add_arguments(self, parser):
        parser.add_argument('--index', required=True, help='Index basename.')
        parser.add_argument('--queries', required=True, help='Query descriptor basename.')
        parser.add_argument('--out', required=True, help='CSV file to write.')
        parser.add_argument('--top', type=int, help='Keep only the first N results per query.')

    def run(self, **options):
        index = read_descriptor_db(options['index'])
        queries = read_descriptor_db(options['queries'])
        rows = [('query_id', 'rank', 'db_id', 'similarity')]
        for query_id, values in zip(queries.ids, queries.matrix):
            ranked = index.search(values)
            if options['top']:
                ranked = ranked.top(options['top'])
            rows.extend(
                (query_id, rank, db_id, format_float(similarity))
                for rank, (db_id, similarity) in enumerate(zip(ranked.ids, ranked.similarities))
            )
        write_csv(options['out'], rows)
        self.report(f'{options["out"]}: {len(queries)} queries against {len(index)} entries')
