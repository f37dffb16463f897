"""
`python manage.py sbo <subcommand> [flags]`: runs `SboCommandView` on the argument vector
"""
import argparse
import logging

from django.core.management.base import BaseCommand, CommandError

from ...commands import SboCommandView
from ...errors import SboError

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = "stereotypicality-based obfuscation toolkit; try 'sbo help'"

    def add_arguments(self, parser):
        parser.add_argument('argv', nargs=argparse.REMAINDER)

    def handle(self, *args, **options):
        argv = list(args) + list(options.get('argv') or [])
        try:
            response = SboCommandView(argv).dispatch()
        except (SboError, FileNotFoundError) as e:
            raise CommandError("{}: {}".format(type(e).__name__, e))
        self.stdout.write(response.as_json() if '--json' in argv else str(response))
        if not response.ok: raise CommandError("'{}' failed".format(argv[0] if argv else 'help'))
