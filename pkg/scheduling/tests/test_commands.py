"""
Command tests for scheduling app

Tests the management commands including:
- generate for every family, determinism and missing parameters
- solve for both relaxations, output files and exit codes
- round with integral solutions, seeds, traces and the ledger
- verify on rounding instances and solved instances, formats and exit codes
- byte-identical re-runs and thread-count independence
- --config files and export_runs
"""

import csv
import io
import json
import tempfile
from pathlib import Path
from unittest.mock import patch

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase, tag

from scheduling.instances import Instance, Schedule, dump_instance, gap_instance, load_instance
from scheduling.models import ExperimentRun
from scheduling.relaxations import FractionalAssignment, MomentMatrix, SdpSolution, moment_from_integral
from scheduling.schemas import BipartiteFile, ScheduleFile, SolutionFile, dump_model, read_trace, solution_file


class CommandTestCase(TestCase):
    """Temporary directory and command helpers"""

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)

    def path(self, name):
        return str(self.tmp / name)

    def write(self, name, text):
        Path(self.path(name)).write_text(text)
        return self.path(name)

    def run_command(self, *args, **options):
        out = io.StringIO()
        call_command(*args, stdout=out, **options)
        return out.getvalue()

    def integral_files(self):
        """gap(2) and its optimal integral SDP point on disk"""
        inst = gap_instance(2)
        sol = moment_from_integral(inst, Schedule(assignment=(0, 0, 1)))
        return self.write('gap2.json', dump_instance(inst)), self.write('gap2.sol.json', dump_model(solution_file(sol)))

    def mixed_files(self):
        """gap(2) with its last job split evenly between machines 1 and 2"""
        inst = gap_instance(2)
        a = moment_from_integral(inst, Schedule(assignment=(0, 0, 1)))
        b = moment_from_integral(inst, Schedule(assignment=(0, 0, 2)))
        moments = tuple(
            MomentMatrix(i, (ma.entries + mb.entries) / 2) for i, (ma, mb) in enumerate(zip(a.moments, b.moments))
        )
        x = FractionalAssignment.from_matrix(inst, (a.x.x + b.x.x) / 2)
        sol = SdpSolution(x=x, moments=moments, objective=7.0, stats=a.stats)
        return self.write('gap2.json', dump_instance(inst)), self.write('mixed.sol.json', dump_model(solution_file(sol)))


class GenerateCommandTests(CommandTestCase):
    """Tests for generate"""

    def test_gap_to_stdout(self):
        """Test gap writes the instance JSON to stdout"""
        output = self.run_command('generate', 'gap', k=5)
        self.assertEqual(Instance.model_validate_json(output), gap_instance(5))

    def test_random_deterministic(self):
        """Test the same seed writes the same file"""
        first = self.run_command('generate', 'random', seed=7, n=5, m=3)
        second = self.run_command('generate', 'random', seed=7, n=5, m=3)
        self.assertEqual(first, second)

    def test_out_file(self):
        """Test --out writes the file instead of stdout"""
        output = self.run_command('generate', 'poisson', m=3, out=self.path('p3.json'))
        self.assertEqual(output, '')
        self.assertEqual(load_instance(self.path('p3.json')).machines, 3)

    def test_fourjob_writes_rounding_instance(self):
        """Test fourjob writes a rounding instance file"""
        output = self.run_command('generate', 'fourjob')
        data = BipartiteFile.model_validate_json(output)
        self.assertEqual(len(data.edges), 8)
        self.assertEqual(data.groups[0], [[0, 2], [1, 3]])

    def test_missing_parameter_exit_two(self):
        """Test a missing generator parameter is an input error"""
        with self.assertRaises(CommandError) as ctx:
            self.run_command('generate', 'gap')
        self.assertEqual(ctx.exception.returncode, 2)


class SolveCommandTests(CommandTestCase):
    """Tests for solve"""

    def test_single_job_objective(self):
        """Test a single job's objective is w * p"""
        path = self.write('one.json', dump_instance(Instance(machines=1, jobs=1, weights=(3,), ptimes=((2,),))))
        output = self.run_command('solve', path, out=self.path('one.sol.json'))
        self.assertTrue(output.startswith('objective '))
        self.assertAlmostEqual(float(output.split()[1]), 6.0, places=6)
        data = SolutionFile.model_validate_json(Path(self.path('one.sol.json')).read_text())
        self.assertEqual(data.relaxation, 'sdp')
        self.assertTrue(data.converged)

    def test_solution_to_stdout(self):
        """Test without --out the solution JSON goes to stdout"""
        path = self.write('one.json', dump_instance(Instance(machines=1, jobs=1, weights=(1,), ptimes=((1,),))))
        data = SolutionFile.model_validate_json(self.run_command('solve', path))
        self.assertAlmostEqual(data.objective, 1.0, places=6)

    def test_cp_gap_value(self):
        """Test the CP solution file of gap(20) is at most 420.1 and converged"""
        path = self.write('gap20.json', dump_instance(gap_instance(20)))
        self.run_command('solve', path, relaxation='cp', cp_max_iters=2000, out=self.path('cp.json'))
        data = SolutionFile.model_validate_json(Path(self.path('cp.json')).read_text())
        self.assertEqual(data.relaxation, 'cp')
        self.assertTrue(data.converged)
        self.assertIsNone(data.moments)
        self.assertLessEqual(data.objective, 420.1)

    def test_not_converged_exit_three(self):
        """Test an exhausted iteration budget exits 3 after writing the best iterate"""
        path = self.write('gap3.json', dump_instance(gap_instance(3)))
        with self.assertRaises(CommandError) as ctx:
            self.run_command('solve', path, sdp_max_iters=2, out=self.path('gap3.sol.json'))
        self.assertEqual(ctx.exception.returncode, 3)
        data = SolutionFile.model_validate_json(Path(self.path('gap3.sol.json')).read_text())
        self.assertFalse(data.converged)

    def test_same_flags_byte_identical(self):
        """Test re-running solve with the same flags writes the same bytes"""
        path = self.write('gap3.json', dump_instance(gap_instance(3)))
        self.assertEqual(self.run_command('solve', path), self.run_command('solve', path))

    def test_threads_keep_objective(self):
        """Test four threads give the single-thread objective"""
        path = self.write('gap3.json', dump_instance(gap_instance(3)))
        one = SolutionFile.model_validate_json(self.run_command('solve', path, threads=1))
        four = SolutionFile.model_validate_json(self.run_command('solve', path, threads=4))
        self.assertAlmostEqual(one.objective, four.objective, delta=1e-9)

    def test_malformed_instance_exit_two(self):
        """Test a malformed instance file is an input error"""
        path = self.write('bad.json', '{"machines": 1}')
        with self.assertRaises(CommandError) as ctx:
            self.run_command('solve', path)
        self.assertEqual(ctx.exception.returncode, 2)

    def test_record_creates_run(self):
        """Test --record stores a ledger row"""
        path = self.write('one.json', dump_instance(Instance(machines=1, jobs=1, weights=(3,), ptimes=((2,),))))
        self.run_command('solve', path, out=self.path('one.sol.json'), record=True)
        run = ExperimentRun.objects.get()
        self.assertEqual(run.command, 'solve')
        self.assertEqual(run.algorithm, 'sdp')


class RoundCommandTests(CommandTestCase):
    """Tests for round"""

    def test_integral_solution_round_trips(self):
        """Test an integral solution gives its own schedule"""
        instance, solution = self.integral_files()
        data = ScheduleFile.model_validate_json(self.run_command('round', instance, solution, seed=3))
        self.assertEqual(data.assignment, [0, 0, 1])
        self.assertEqual(data.cost, 7.0)
        self.assertEqual(data.config.seed, 3)
        self.assertEqual(data.config.solution, solution)

    def test_same_seed_same_schedule(self):
        """Test rounding a fractional solution is deterministic given the seed"""
        instance, solution = self.mixed_files()
        first = self.run_command('round', instance, solution, seed=11)
        second = self.run_command('round', instance, solution, seed=11)
        self.assertEqual(first, second)
        data = ScheduleFile.model_validate_json(first)
        self.assertIn(data.assignment[2], (1, 2))
        self.assertEqual(data.cost, 7.0)

    def test_trace_written(self):
        """Test --trace writes a replayable event log"""
        instance, solution = self.integral_files()
        self.run_command('round', instance, solution, seed=0, trace=self.path('trace.jsonl'), out=self.path('s.json'))
        events = read_trace(self.path('trace.jsonl'))
        self.assertEqual(events[0].phase, 1)
        self.assertEqual(events[-1].phase, 3)

    def test_missing_seed_exit_two(self):
        """Test rounding without a seed is an input error"""
        instance, solution = self.integral_files()
        with self.assertRaises(CommandError) as ctx:
            self.run_command('round', instance, solution)
        self.assertEqual(ctx.exception.returncode, 2)

    def test_record_creates_run(self):
        """Test --record stores the cost"""
        instance, solution = self.integral_files()
        self.run_command('round', instance, solution, seed=1, out=self.path('s.json'), record=True)
        run = ExperimentRun.objects.get()
        self.assertEqual(run.objective, 7.0)
        self.assertEqual(run.seed, 1)


class VerifyCommandTests(CommandTestCase):
    """Tests for verify"""

    def test_fourjob_verifies(self):
        """Test the four-job example verifies with exit 0"""
        self.run_command('generate', 'fourjob', out=self.path('fourjob.json'))
        output = self.run_command('verify', bipartite=self.path('fourjob.json'), trials=4000, seed=1)
        report = json.loads(output)
        self.assertTrue(report['verified'])
        self.assertIsNone(report['ratio'])
        self.assertEqual(report['config']['bipartite'], self.path('fourjob.json'))

    def test_solved_instance_verifies(self):
        """Test an optimal integral solution verifies against the oracle"""
        instance, solution = self.integral_files()
        output = self.run_command('verify', instance, solution, trials=1000, seed=0, oracle=True)
        report = json.loads(output)
        self.assertTrue(report['verified'])
        self.assertEqual(report['ratio']['brute_force_opt'], 7.0)

    def test_csv_format(self):
        """Test --format csv writes a header and rows"""
        instance, solution = self.integral_files()
        output = self.run_command('verify', instance, solution, trials=1000, seed=0, format='csv')
        rows = list(csv.reader(io.StringIO(output)))
        self.assertEqual(rows[0][0], 'kind')
        self.assertGreater(len(rows), 1)

    def test_same_flags_byte_identical(self):
        """Test re-running verify with the same seed and flags writes the same bytes"""
        self.run_command('generate', 'fourjob', out=self.path('fourjob.json'))
        first = self.run_command('verify', bipartite=self.path('fourjob.json'), trials=2000, seed=4)
        second = self.run_command('verify', bipartite=self.path('fourjob.json'), trials=2000, seed=4)
        self.assertEqual(first, second)

    def test_threads_keep_report(self):
        """Test four worker processes give the single-process report"""
        instance, solution = self.mixed_files()
        one = json.loads(self.run_command('verify', instance, solution, trials=2000, seed=4, threads=1))
        four = json.loads(self.run_command('verify', instance, solution, trials=2000, seed=4, threads=4))
        self.assertEqual(one['config'].pop('threads'), 1)
        self.assertEqual(four['config'].pop('threads'), 4)
        self.assertEqual(one, four)

    @tag('slow')
    def test_poisson_sdp_solution_verifies(self):
        """Test verify exits 0 on poisson(50) rounded from its SDP solution"""
        self.run_command('generate', 'poisson', m=50, out=self.path('p50.json'))
        try:
            self.run_command('solve', self.path('p50.json'), out=self.path('p50.sol.json'))
        except CommandError as exc:
            self.assertEqual(exc.returncode, 3)
        output = self.run_command('verify', self.path('p50.json'), self.path('p50.sol.json'), trials=10_000, seed=1)
        report = json.loads(output)
        self.assertTrue(report['verified'])
        self.assertEqual(report['ratio']['problems'], [])

    def test_zero_trials_exit_two(self):
        """Test trials=0 is a usage error"""
        instance, solution = self.integral_files()
        with self.assertRaises(CommandError) as ctx:
            self.run_command('verify', instance, solution, trials=0, seed=0)
        self.assertEqual(ctx.exception.returncode, 2)

    def test_violation_exit_four(self):
        """Test a flagged report exits 4"""
        instance, solution = self.integral_files()
        with patch('scheduling.management.commands.verify.ratio_report') as mock_ratio:
            mock_ratio.return_value.violations = 1
            mock_ratio.return_value.mean_cost = 7.0
            mock_ratio.return_value.ratio_sdp = 1.0
            with patch('scheduling.management.commands.verify.VerificationReport') as mock_report:
                mock_report.return_value.verified = False
                with patch('scheduling.management.commands.verify.render_report', return_value='{}\n'):
                    with self.assertRaises(CommandError) as ctx:
                        self.run_command('verify', instance, solution, trials=1000, seed=0)
        self.assertEqual(ctx.exception.returncode, 4)

    def test_mismatched_bipartite_exit_two(self):
        """Test a rounding instance of the wrong size is an input error"""
        instance, solution = self.integral_files()
        self.run_command('generate', 'fourjob', out=self.path('fourjob.json'))
        with self.assertRaises(CommandError) as ctx:
            self.run_command('verify', instance, solution, bipartite=self.path('fourjob.json'), trials=1000, seed=0)
        self.assertEqual(ctx.exception.returncode, 2)

    def test_oracle_cap_exit_two(self):
        """Test an oracle run beyond the enumeration cap is an input error"""
        instance, solution = self.integral_files()
        with self.settings(BRUTE_FORCE_CAP=2):
            with self.assertRaises(CommandError) as ctx:
                self.run_command('verify', instance, solution, trials=1000, seed=0, oracle=True)
        self.assertEqual(ctx.exception.returncode, 2)


class ConfigFileTests(CommandTestCase):
    """Tests for --config"""

    def test_config_supplies_options(self):
        """Test option values can come from a config file"""
        config = self.write('cfg.json', json.dumps({'k': 4}))
        output = self.run_command('generate', 'gap', config=config)
        self.assertEqual(Instance.model_validate_json(output), gap_instance(4))

    def test_flags_win(self):
        """Test explicit flags override the config file"""
        config = self.write('cfg.json', json.dumps({'k': 4}))
        output = self.run_command('generate', 'gap', k=2, config=config)
        self.assertEqual(Instance.model_validate_json(output), gap_instance(2))

    def test_unknown_key_exit_two(self):
        """Test unknown config keys are rejected"""
        config = self.write('cfg.json', json.dumps({'k': 4, 'colour': 'red'}))
        with self.assertRaises(CommandError) as ctx:
            self.run_command('generate', 'gap', config=config)
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('colour', str(ctx.exception))


class ExportRunsTests(CommandTestCase):
    """Tests for export_runs"""

    def test_export_csv(self):
        """Test every recorded run appears newest first"""
        instance, solution = self.integral_files()
        self.run_command('round', instance, solution, seed=1, out=self.path('a.json'), record=True)
        self.run_command('round', instance, solution, seed=2, out=self.path('b.json'), record=True)
        rows = list(csv.reader(io.StringIO(self.run_command('export_runs'))))
        self.assertEqual(rows[0][0], 'Run ID')
        self.assertEqual(len(rows), 3)
        self.assertEqual(rows[1][4], '2')
        self.assertEqual(rows[2][4], '1')

    def test_export_empty_ledger(self):
        """Test an empty ledger gives only the header"""
        rows = list(csv.reader(io.StringIO(self.run_command('export_runs'))))
        self.assertEqual(len(rows), 1)
