import logging

from django.core.management.base import CommandError

from scheduling.exceptions import EnumerationLimitError
from scheduling.forms import VerifyForm
from scheduling.instances import brute_force_opt
from scheduling.management.base import EXIT_INPUT, EXIT_VIOLATION, ExperimentCommand
from scheduling.models import ExperimentRun
from scheduling.negcorr_rounding import from_fractional
from scheduling.schemas import ExperimentConfig
from scheduling.verification import (
    VerificationReport,
    correlation_report_from_samples,
    ratio_report,
    render_report,
    sample_assignments,
)

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    help = 'Estimate marginals, correlations and cost ratios of the rounding by Monte Carlo'
    form_class = VerifyForm

    def add_arguments(self, parser):
        parser.add_argument('instance', nargs='?', help='Instance JSON file')
        parser.add_argument('solution', nargs='?', help='SDP solution JSON file')
        parser.add_argument('--bipartite', help='Rounding instance file (as written by generate fourjob)')
        parser.add_argument('--trials', type=int)
        parser.add_argument('--seed', type=int)
        parser.add_argument('--threads', type=int, help='Worker processes sharing the trials')
        parser.add_argument('--algorithm', help='negcorr (default) or independent')
        parser.add_argument('--format', help='json (default), table or csv')
        parser.add_argument('--oracle', action='store_true', help='Also compare against the brute-force optimum')
        parser.add_argument('--out', help='Report file (default stdout)')
        parser.add_argument('--record', action='store_true', help='Store a row in the experiment ledger')
        self.add_config_argument(parser)

    def handle(self, *args, **options):
        data, _ = self.clean_options(options)
        inst = data['instance']
        sol = data['solution']
        b = data['bipartite']
        paths = data['paths']

        if b is None:
            b = from_fractional(inst, sol.x)
        elif inst is not None and (b.machines, b.jobs) != (inst.machines, inst.jobs):
            raise CommandError(
                f"Rounding instance is {b.machines}x{b.jobs} but the instance is {inst.machines}x{inst.jobs}",
                returncode=EXIT_INPUT,
            )

        opt = None
        if data.get('oracle') and inst is not None:
            try:
                opt, _ = brute_force_opt(inst, workers=data['threads'])
            except EnumerationLimitError as exc:
                raise CommandError(str(exc), returncode=EXIT_INPUT)

        config = ExperimentConfig(
            command='verify', algorithm=data['algorithm'], seed=data['seed'], trials=data['trials'],
            threads=data['threads'], format=data['format'], out=data.get('out') or None, **paths,
        )
        assignments = sample_assignments(b, data['trials'], data['seed'], data['algorithm'], data['threads'])
        correlation = correlation_report_from_samples(b, assignments, data['seed'], data['algorithm'])
        ratio = None
        if inst is not None:
            ratio = ratio_report(
                inst, sol, b, data['trials'], data['seed'], data['algorithm'],
                opt=opt, assignments=assignments,
            )

        violations = correlation.violations + (ratio.violations if ratio else 0)
        report = VerificationReport(
            config=config.model_dump(), correlation=correlation, ratio=ratio, verified=violations == 0,
        )
        self.emit(render_report(report, data['format']), data.get('out'))

        exit_code = 0 if report.verified else EXIT_VIOLATION
        if data.get('record') and inst is not None:
            ExperimentRun.record(
                config, inst,
                objective=ratio.mean_cost,
                verified=report.verified,
                exit_code=exit_code,
                summary={'violations': violations, 'ratio_sdp': ratio.ratio_sdp},
            )
        elif data.get('record'):
            logger.warning("--record needs an instance; the ledger row was skipped")

        if exit_code:
            raise CommandError(f"{violations} verification violations", returncode=exit_code)
        logger.info(f"Verified: no violations over {data['trials']} trials")
