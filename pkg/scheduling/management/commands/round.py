import logging

from scheduling.forms import RoundForm
from scheduling.instances import schedule_cost
from scheduling.management.base import ExperimentCommand
from scheduling.models import ExperimentRun
from scheduling.negcorr_rounding import ROUNDERS, from_fractional
from scheduling.schemas import ExperimentConfig, ScheduleFile, dump_model, write_trace

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    help = 'Round a fractional solution to a schedule once'
    form_class = RoundForm

    def add_arguments(self, parser):
        parser.add_argument('instance', help='Instance JSON file')
        parser.add_argument('solution', help='Solution JSON file from solve')
        parser.add_argument('--seed', type=int)
        parser.add_argument('--algorithm', help='negcorr (default) or independent')
        parser.add_argument('--out', help='Schedule file (default stdout)')
        parser.add_argument('--trace', help='Write the rounding event log as JSON lines')
        parser.add_argument('--record', action='store_true', help='Store a row in the experiment ledger')
        self.add_config_argument(parser)

    def handle(self, *args, **options):
        data, raw = self.clean_options(options)
        inst = data['instance']
        sol = data['solution']
        algorithm = data['algorithm']

        b = from_fractional(inst, sol.x)
        if algorithm == 'negcorr':
            outcome = ROUNDERS['negcorr'](b, data['seed'], trace=bool(data.get('trace')))
        else:
            outcome = ROUNDERS['independent'](b, data['seed'])
        schedule = outcome.schedule()
        cost = schedule_cost(inst, schedule)
        logger.info(f"Rounded with {algorithm} (seed {data['seed']}): cost {cost:g}")

        config = ExperimentConfig(
            command='round', instance=raw['instance'], solution=raw['solution'],
            algorithm=algorithm, seed=data['seed'], out=data.get('out') or None,
        )
        result = ScheduleFile(
            assignment=list(schedule.assignment), cost=cost, algorithm=algorithm, seed=data['seed'], config=config,
        )
        self.emit(dump_model(result), data.get('out'))
        if data.get('out'):
            self.stdout.write(f"cost {cost:.10g}")
        if outcome.trace is not None:
            write_trace(data['trace'], outcome.trace)

        if data.get('record'):
            ExperimentRun.record(config, inst, objective=cost)
