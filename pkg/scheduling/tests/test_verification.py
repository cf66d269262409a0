"""
Verification tests for scheduling app

Tests the statistical and closed-form checks including:
- The Monte Carlo engine (determinism, worker independence, perfect assignments)
- Correlation reports for both rounding algorithms
- Exact and sampled expected costs
- Prefix inequality, upper bound and lower-bound sandwich audits
- Ratio reports and their rendering
- The minimum trial count and the 4-sigma row threshold
- Full-scale acceptance runs over the standard suite (tagged slow)
"""

import csv
import io
import json

import numpy as np
from django.test import SimpleTestCase, tag

from scheduling.instances import (
    Instance,
    Schedule,
    brute_force_opt,
    class_instance,
    gap_instance,
    poisson_instance,
    schedule_cost,
)
from scheduling.negcorr_rounding import BipartiteRoundingInstance, four_job_instance, from_fractional
from scheduling.relaxations import (
    MomentMatrix,
    SdpSolution,
    SolverStats,
    claim_point,
    independent_moments,
    moment_from_integral,
    sdp_objective,
    solve_sdp,
)
from scheduling.suite import standard_suite
from scheduling.verification import (
    APPROX_GAIN,
    FLAG_SIGMAS,
    MIN_TRIALS,
    RATIO_TARGET,
    Z_95,
    VerificationReport,
    _prefix_margins,
    assignment_costs,
    correlation_report_from_samples,
    estimate_correlations,
    expected_cost_independent,
    expected_cost_monte_carlo,
    is_perfect_assignment,
    lower_bound_sandwich,
    prefix_inequality_report,
    ratio_report,
    render_report,
    sample_assignments,
    telescoped_lower_bound,
    upper_bound_audit,
)


def unit_four_job():
    """Scheduling instance matching the four-job rounding example, unit p and w"""
    return Instance(machines=2, jobs=4, weights=(1, 1, 1, 1), ptimes=((1, 1, 1, 1), (1, 1, 1, 1)))


def independent_solution(inst):
    """SDP point of independent rounding from the uniform assignment"""
    x = claim_point(inst)
    blocks = independent_moments(inst, x)
    moments = tuple(MomentMatrix(machine=i, entries=blocks[i]) for i in range(inst.machines))
    stats = SolverStats(
        iterations=0, primal_residual=0.0, dual_residual=0.0, rho=0.0, converged=True, min_eigenvalue=0.0,
    )
    sol = SdpSolution(x=x, moments=moments, objective=0.0, stats=stats)
    return SdpSolution(x=x, moments=moments, objective=sdp_objective(inst, sol), stats=stats)


class SamplingTests(SimpleTestCase):
    """Tests for sample_assignments"""

    def test_deterministic_given_seed(self):
        """Test the same seed and trials give the same samples"""
        b = four_job_instance()
        np.testing.assert_array_equal(sample_assignments(b, 200, 4), sample_assignments(b, 200, 4))

    def test_workers_do_not_change_samples(self):
        """Test splitting trials over processes keeps trial order and values"""
        b = four_job_instance()
        np.testing.assert_array_equal(
            sample_assignments(b, 300, 2, workers=1),
            sample_assignments(b, 300, 2, workers=2),
        )

    def test_every_sample_is_a_perfect_assignment(self):
        """Test each trial assigns every job to one of its machines"""
        b = four_job_instance()
        self.assertTrue(is_perfect_assignment(b, sample_assignments(b, 500, 1)))

    def test_unknown_algorithm_raises(self):
        """Test only known rounding algorithms are accepted"""
        with self.assertRaises(ValueError):
            sample_assignments(four_job_instance(), 10, 0, algorithm='greedy')


class CorrelationTests(SimpleTestCase):
    """Tests for estimate_correlations"""

    def test_negcorr_four_job_no_violations(self):
        """Test the four-job example shows no marginal, weak or strong flags"""
        report = estimate_correlations(four_job_instance(), 4000, seed=11)
        self.assertTrue(report.perfect_assignment)
        self.assertEqual(report.marginal_violations, 0)
        self.assertEqual(report.weak_violations, 0)
        self.assertEqual(report.strong_violations, 0)
        self.assertEqual(report.violations, 0)
        self.assertEqual(len(report.edges), 8)
        self.assertEqual(len(report.pairs), 12)

    def test_negcorr_same_group_pairs_anticorrelated(self):
        """Test same-group joints stay below (1 - zeta) / 4 plus noise"""
        report = estimate_correlations(four_job_instance(), 4000, seed=12)
        for pair in report.pairs:
            if pair.same_group:
                self.assertLessEqual(pair.joint, (107 / 108) * 0.25 + 4 * pair.stderr + 1e-12)

    def test_independent_joint_near_product(self):
        """Test independent rounding gives same-group joints near 1/4"""
        report = estimate_correlations(four_job_instance(), 4000, seed=13, algorithm='independent')
        self.assertEqual(report.strong_violations, 0)
        for pair in report.pairs:
            self.assertLess(abs(pair.joint - 0.25), 4 * np.sqrt(0.25 * 0.75 / 4000))

    def test_integral_values_are_exact(self):
        """Test integral y gives marginals of exactly 0 or 1"""
        b = BipartiteRoundingInstance(1, 2, [(0, 0, 1.0), (0, 1, 1.0)])
        report = estimate_correlations(b, 1000, seed=0)
        self.assertEqual([edge.frequency for edge in report.edges], [1.0, 1.0])
        self.assertEqual(report.pairs[0].joint, 1.0)
        self.assertEqual(report.violations, 0)

    def test_rows_shape(self):
        """Test flattened rows match the header width"""
        report = estimate_correlations(four_job_instance(), 1000, seed=0)
        header, rows = report.rows()
        self.assertEqual(len(rows), 8 + 12)
        self.assertTrue(all(len(row) == len(header) for row in rows))


class ExpectedCostTests(SimpleTestCase):
    """Tests for the exact and sampled expected costs"""

    def test_poisson_two_closed_form(self):
        """Test poisson(2) at x = 1/2 has expected cost 2.5"""
        inst = poisson_instance(2)
        self.assertAlmostEqual(expected_cost_independent(inst, claim_point(inst)), 2.5)

    def test_poisson_ratio(self):
        """Test poisson(m) loses exactly 3/2 - 1/(2m) against the optimum"""
        for m in (2, 10, 50):
            with self.subTest(m=m):
                inst = poisson_instance(m)
                value = expected_cost_independent(inst, claim_point(inst)) / m
                self.assertAlmostEqual(value, 1.5 - 1 / (2 * m), delta=1e-12)

    def test_integral_x_gives_schedule_cost(self):
        """Test an integral x has the schedule's cost as expectation"""
        inst = gap_instance(3)
        schedule = Schedule(assignment=(0, 0, 0, 1))
        x = moment_from_integral(inst, schedule).x
        self.assertAlmostEqual(expected_cost_independent(inst, x), schedule_cost(inst, schedule))

    def test_monte_carlo_matches_closed_form(self):
        """Test sampled independent rounding of poisson(10) matches the exact value"""
        inst = poisson_instance(10)
        b = from_fractional(inst, claim_point(inst))
        estimate = expected_cost_monte_carlo(inst, b, 3000, seed=5, algorithm='independent')
        self.assertLess(abs(estimate.mean - 14.5), 4 * estimate.stderr)

    def test_integral_monte_carlo_has_zero_width(self):
        """Test integral y gives the exact cost with a zero interval"""
        inst = gap_instance(2)
        schedule = Schedule(assignment=(0, 0, 1))
        b = from_fractional(inst, moment_from_integral(inst, schedule).x)
        estimate = expected_cost_monte_carlo(inst, b, 1000, seed=0)
        self.assertEqual(estimate.mean, schedule_cost(inst, schedule))
        self.assertEqual(estimate.ci, 0.0)

    def test_assignment_costs_match_schedule_cost(self):
        """Test vectorized costs agree with schedule_cost"""
        inst = unit_four_job()
        assignments = np.array([[0, 0, 1, 1], [0, 0, 0, 1], [1, 1, 1, 1]])
        expected = [schedule_cost(inst, Schedule(assignment=tuple(int(i) for i in row))) for row in assignments]
        np.testing.assert_allclose(assignment_costs(inst, assignments), expected)

    def test_negcorr_not_worse_than_independent(self):
        """Test the four-job example costs no more under negcorr than independently"""
        inst = unit_four_job()
        b = four_job_instance()
        negcorr = expected_cost_monte_carlo(inst, b, 4000, seed=3)
        independent = expected_cost_monte_carlo(inst, b, 4000, seed=3, algorithm='independent')
        self.assertLessEqual(negcorr.mean, independent.mean + negcorr.ci + independent.ci)


class PrefixAuditTests(SimpleTestCase):
    """Tests for the per-prefix audits"""

    def setUp(self):
        self.inst = gap_instance(2)
        self.sol = moment_from_integral(self.inst, Schedule(assignment=(0, 0, 1)))
        self.b = from_fractional(self.inst, self.sol.x)

    def test_integral_prefixes_within_bound(self):
        """Test an integral solution never exceeds (3/2 - c) times its prefix expression"""
        margins = prefix_inequality_report(self.inst, self.sol, self.b, 1000, seed=0)
        self.assertTrue(margins)
        for row in margins:
            self.assertFalse(row.violation)
            self.assertGreaterEqual(row.margin, 0.0)
            self.assertAlmostEqual(row.bound, RATIO_TARGET * row.estimate)

    def test_upper_bound_holds(self):
        """Test the grouped upper bound holds on the four-job example"""
        inst = unit_four_job()
        sol = independent_solution(inst)
        rows = upper_bound_audit(inst, sol, four_job_instance(), 3000, seed=2)
        self.assertFalse(any(row.violation for row in rows))

    def test_rows_flag_only_beyond_four_standard_errors(self):
        """Test a row 3 standard errors over its bound is reported but not flagged, and 5 is flagged"""
        inst = unit_four_job()
        assignments = sample_assignments(four_job_instance(), 2000, 5)
        plain = {(m.machine, m.prefix): m for m in _prefix_margins(inst, assignments, lambda i, n: 0.0)}
        self.assertTrue(all(m.stderr > 0 for m in plain.values()))

        def shifted(sigmas):
            def bound(i, n):
                row = plain[(i, n)]
                return row.estimate - sigmas * row.stderr
            return _prefix_margins(inst, assignments, bound)

        for row in shifted(3.0):
            self.assertLess(row.margin, -row.ci)
            self.assertAlmostEqual(row.ci, Z_95 * row.stderr)
            self.assertFalse(row.violation)
        self.assertTrue(all(row.violation for row in shifted(FLAG_SIGMAS + 1.0)))

    def test_upper_bound_holds_on_class_instance(self):
        """Test the grouped upper bound holds on every machine of class_instance(3, 100, 5, 5)"""
        inst = class_instance(3, 100, 5, 5)
        sol = independent_solution(inst)
        b = from_fractional(inst, sol.x)
        rows = upper_bound_audit(inst, sol, b, 1000, seed=4)
        self.assertEqual({row.machine for row in rows}, set(range(5)))
        self.assertFalse(any(row.violation for row in rows))

    def test_sandwich_integral(self):
        """Test integral moments sit exactly on LB(J)"""
        rows = lower_bound_sandwich(self.inst, self.sol, self.b)
        self.assertTrue(all(row.holds for row in rows))
        for row in rows:
            self.assertAlmostEqual(row.sdp_prefix, row.lb_full)

    def test_sandwich_independent_moments(self):
        """Test independent-rounding moments dominate every named bound"""
        inst = unit_four_job()
        rows = lower_bound_sandwich(inst, independent_solution(inst), four_job_instance())
        self.assertTrue(all(row.holds for row in rows))

    def test_telescoped_full_bound_of_integral_solution(self):
        """Test telescoping LB(J) over prefixes gives the integral cost back"""
        value = telescoped_lower_bound(self.inst, self.sol, self.b, 'full')
        self.assertAlmostEqual(value, self.sol.objective)
        self.assertLessEqual(telescoped_lower_bound(self.inst, self.sol, self.b, 'empty'), value + 1e-9)


class RatioReportTests(SimpleTestCase):
    """Tests for ratio_report and rendering"""

    def setUp(self):
        self.inst = gap_instance(2)
        self.sol = moment_from_integral(self.inst, Schedule(assignment=(0, 0, 1)))
        self.b = from_fractional(self.inst, self.sol.x)

    def test_integral_solution_report(self):
        """Test an optimal integral solution gives ratio 1 and no problems"""
        opt, _ = brute_force_opt(self.inst)
        report = ratio_report(self.inst, self.sol, self.b, 1000, seed=0, opt=opt)
        self.assertEqual(report.problems, [])
        self.assertAlmostEqual(report.ratio_sdp, 1.0)
        self.assertAlmostEqual(report.ratio_opt, 1.0)
        self.assertAlmostEqual(report.ratio_lb['full'], 1.0)
        self.assertEqual(report.approx_gain, APPROX_GAIN)

    def test_independent_report_skips_upper_bound(self):
        """Test the grouped upper bound is audited for negcorr only"""
        inst = unit_four_job()
        sol = independent_solution(inst)
        b = four_job_instance()
        negcorr = ratio_report(inst, sol, b, 1000, seed=0)
        independent = ratio_report(inst, sol, b, 1000, seed=0, algorithm='independent')
        self.assertTrue(negcorr.upper_bound)
        self.assertEqual(independent.upper_bound, [])
        self.assertTrue(independent.prefix_margins)

    def test_report_rendering(self):
        """Test json, table and csv renderings of a full report"""
        assignments = sample_assignments(self.b, 1000, 0)
        correlation = correlation_report_from_samples(self.b, assignments, 0, 'negcorr')
        ratio = ratio_report(self.inst, self.sol, self.b, 1000, seed=0, assignments=assignments)
        report = VerificationReport(config={'seed': 0}, correlation=correlation, ratio=ratio, verified=True)

        data = json.loads(render_report(report, 'json'))
        self.assertTrue(data['verified'])
        self.assertIn('ratio_sdp', data['ratio'])

        table = render_report(report, 'table')
        self.assertTrue(table.startswith('kind'))
        self.assertIn('mean_cost', table)

        rows = list(csv.reader(io.StringIO(render_report(report, 'csv'))))
        self.assertEqual(rows[0][0], 'kind')
        self.assertTrue(all(len(row) == len(rows[0]) for row in rows))

    def test_unknown_format_raises(self):
        """Test only json, table and csv are rendered"""
        correlation = estimate_correlations(self.b, 1000, 0)
        report = VerificationReport(config={}, correlation=correlation, verified=True)
        with self.assertRaises(ValueError):
            render_report(report, 'xml')


class TrialCountTests(SimpleTestCase):
    """Tests for the minimum trial count of the statistical checks"""

    def setUp(self):
        self.inst = gap_instance(2)
        self.sol = moment_from_integral(self.inst, Schedule(assignment=(0, 0, 1)))
        self.b = from_fractional(self.inst, self.sol.x)

    def test_below_minimum_raises(self):
        """Test every Monte Carlo check refuses fewer than 1000 trials"""
        trials = MIN_TRIALS - 1
        checks = [
            lambda: estimate_correlations(self.b, trials, 0),
            lambda: expected_cost_monte_carlo(self.inst, self.b, trials, 0),
            lambda: prefix_inequality_report(self.inst, self.sol, self.b, trials, 0),
            lambda: upper_bound_audit(self.inst, self.sol, self.b, trials, 0),
            lambda: ratio_report(self.inst, self.sol, self.b, trials, 0),
        ]
        for check in checks:
            with self.assertRaises(ValueError):
                check()

    def test_minimum_accepted(self):
        """Test exactly 1000 trials is enough"""
        self.assertEqual(MIN_TRIALS, 1000)
        self.assertEqual(expected_cost_monte_carlo(self.inst, self.b, MIN_TRIALS, 0).trials, MIN_TRIALS)


@tag('slow')
class AcceptanceTests(SimpleTestCase):
    """Full-scale acceptance runs"""

    TRIALS = 100_000

    def test_suite_correlations(self):
        """Test zero correlation flags over the whole suite"""
        for case in standard_suite():
            with self.subTest(case=case.name):
                sol = None if case.instance is None else solve_sdp(case.instance)
                report = estimate_correlations(case.rounding_instance(sol), self.TRIALS, seed=1)
                self.assertEqual(report.violations, 0)

    def test_suite_ratios(self):
        """Test mean cost within 3/2 of the SDP and above the optimum"""
        for case in standard_suite():
            if case.instance is None:
                continue
            with self.subTest(case=case.name):
                sol = solve_sdp(case.instance)
                b = case.rounding_instance(sol)
                opt, _ = brute_force_opt(case.instance)
                report = ratio_report(case.instance, sol, b, 10_000, seed=2, opt=opt)
                self.assertEqual(report.problems, [])

    def test_four_job_million_trials(self):
        """Test the four-job example at a million trials resolves the same-group gain below 0.249"""
        report = estimate_correlations(four_job_instance(), 1_000_000, seed=3)
        self.assertEqual(report.violations, 0)
        for pair in report.pairs:
            if pair.same_group:
                self.assertLessEqual(pair.joint, 0.249)

    def test_poisson_monte_carlo_within_three_sigma(self):
        """Test sampled independent rounding of poisson(m) matches the exact value within 3 sigma"""
        for m in (2, 10, 50):
            with self.subTest(m=m):
                inst = poisson_instance(m)
                b = from_fractional(inst, claim_point(inst))
                exact = expected_cost_independent(inst, claim_point(inst))
                estimate = expected_cost_monte_carlo(inst, b, self.TRIALS, seed=6, algorithm='independent')
                self.assertLess(abs(estimate.mean - exact), 3 * estimate.stderr)

    def test_workers_keep_aggregates(self):
        """Test four worker processes give the same correlation and cost aggregates as one"""
        inst = unit_four_job()
        b = four_job_instance()
        one = ratio_report(inst, independent_solution(inst), b, self.TRIALS, seed=8, workers=1)
        four = ratio_report(inst, independent_solution(inst), b, self.TRIALS, seed=8, workers=4)
        self.assertEqual(one.model_dump(), four.model_dump())
        self.assertEqual(
            estimate_correlations(b, self.TRIALS, seed=8, workers=1).model_dump(),
            estimate_correlations(b, self.TRIALS, seed=8, workers=4).model_dump(),
        )
