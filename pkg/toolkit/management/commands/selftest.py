from django.core.management.base import CommandError

from toolkit.commands import ToolkitCommand
from toolkit.oracles import run_selftest


class Command(ToolkitCommand):
    help = 'Run the brute-force oracle suite and print pass/fail counts.'

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=0)

    def run(self, **options):
        results = run_selftest(options['seed'])
        for result in results:
            status = 'PASS' if result.passed else 'FAIL'
            detail = f' ({result.detail})' if result.detail else ''
            self.report(f'{status} {result.name}{detail} [{result.seconds:.2f}s]')
        failed = sum(not r.passed for r in results)
        self.report(f'{len(results) - failed} passed, {failed} failed')
        if failed:
            raise CommandError(f'selftest: {failed} check(s) failed')
