import csv
import io
import json
import logging

from scheduling.management.base import ExperimentCommand
from scheduling.models import ExperimentRun

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    """
    Export the experiment ledger to CSV

    CSV includes: run_id, created_at, command, instance_digest, seed, trials,
    algorithm, objective, verified, exit_code, report
    """
    help = 'Write every recorded run as CSV, newest first'

    def add_arguments(self, parser):
        parser.add_argument('--out', help='CSV file (default stdout)')

    def handle(self, *args, **options):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')

        writer.writerow([
            'Run ID',
            'Created At',
            'Command',
            'Instance Digest',
            'Seed',
            'Trials',
            'Algorithm',
            'Objective',
            'Verified',
            'Exit Code',
            'Report',
        ])

        runs = ExperimentRun.objects.all().order_by('-created_at', '-id')
        for run in runs:
            writer.writerow([
                run.id,
                run.created_at.isoformat(),
                run.command,
                run.instance_digest,
                '' if run.seed is None else run.seed,
                '' if run.trials is None else run.trials,
                run.algorithm,
                '' if run.objective is None else run.objective,
                '' if run.verified is None else run.verified,
                run.exit_code,
                json.dumps(run.report, sort_keys=True),
            ])

        logger.info(f"Exported {runs.count()} runs")
        self.emit(buffer.getvalue(), options.get('out'))
