import logging

from django.core.management.base import CommandError

from scheduling.forms import SolveForm
from scheduling.management.base import EXIT_NOT_CONVERGED, ExperimentCommand
from scheduling.models import ExperimentRun
from scheduling.relaxations import CpConfig, SolverConfig, audit_sdp_solution, solve_cp, solve_sdp
from scheduling.schemas import ExperimentConfig, dump_model, solution_file

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    help = 'Solve the SDP or CP relaxation of an instance'
    form_class = SolveForm

    def add_arguments(self, parser):
        parser.add_argument('instance', help='Instance JSON file')
        parser.add_argument('--relaxation', help='sdp (default) or cp')
        parser.add_argument('--sdp-tol', type=float)
        parser.add_argument('--sdp-max-iters', type=int)
        parser.add_argument('--sdp-rho', type=float)
        parser.add_argument('--cp-max-iters', type=int)
        parser.add_argument('--threads', type=int, help='Worker threads for the per-machine projections')
        parser.add_argument('--out', help='Solution file; without it the solution JSON goes to stdout')
        parser.add_argument('--record', action='store_true', help='Store a row in the experiment ledger')
        self.add_config_argument(parser)

    def handle(self, *args, **options):
        data, raw = self.clean_options(options)
        inst = data['instance']

        if data['relaxation'] == 'sdp':
            solver = {'tol': data['sdp_tol'], 'max_iters': data['sdp_max_iters'], 'rho': data['sdp_rho']}
            sol = solve_sdp(inst, SolverConfig(threads=data['threads'], **solver))
            objective = sol.objective
            if sol.converged:
                problems = audit_sdp_solution(inst, sol)
                for problem in problems:
                    logger.warning(f"Audit: {problem}")
        else:
            solver = {'max_iters': data['cp_max_iters']}
            sol = solve_cp(inst, CpConfig(**solver))
            objective = sol.value

        self.emit(dump_model(solution_file(sol)), data.get('out'))
        if data.get('out'):
            self.stdout.write(f"objective {objective:.10g}")

        exit_code = 0 if sol.converged else EXIT_NOT_CONVERGED
        if data.get('record'):
            config = ExperimentConfig(
                command='solve', instance=raw['instance'], relaxation=data['relaxation'],
                threads=data['threads'], solver=solver, out=data.get('out') or None,
            )
            ExperimentRun.record(config, inst, objective=objective, exit_code=exit_code)

        if exit_code:
            raise CommandError(
                f"{data['relaxation'].upper()} solver did not converge; best iterate written",
                returncode=exit_code,
            )
