"""
Statistical and closed-form checks of the rounding guarantees

Every Monte Carlo estimate here is built on sample_assignments: trial t
runs the chosen rounding under rounding_rng(seed, t), so results depend only
on (seed, trials) and never on how many worker processes share the trials.

Flags use a 4-sigma threshold; confidence intervals are 95% normal
intervals. The approximation constant c = zeta / 20000 is far below what a
desk-scale Monte Carlo run can resolve, so the ratio checks test the 3/2
bound and the zeta-level correlation gain, and report c alongside.
"""
import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict

from .negcorr_rounding import ROUNDERS, ZETA
from .relaxations import assignment_matrix, machine_prefix_objective, named_lower_bounds, prefix_objectives
from .instances import smith_order

logger = logging.getLogger(__name__)

FLAG_SIGMAS = 4.0
Z_95 = 1.96
APPROX_GAIN = ZETA / 20000
RATIO_TARGET = 1.5 - APPROX_GAIN
SANDWICH_TOL = 1e-5
MIN_TRIALS = 1000

Algorithm = Literal['negcorr', 'independent']


# --- Monte Carlo engine


def check_trials(trials):
    if trials < MIN_TRIALS:
        raise ValueError(f"At least {MIN_TRIALS} trials are needed, got {trials}")


def _sample_chunk(b, seed, algorithm, start, stop):
    rounder = ROUNDERS[algorithm]
    out = np.empty((stop - start, b.jobs), dtype=np.int32)
    for row, trial in enumerate(range(start, stop)):
        out[row] = rounder(b, seed, stream=trial).machine_of
    return out


def sample_assignments(b, trials, seed, algorithm='negcorr', workers=1):
    """
    Round b `trials` times

    Trials are split into contiguous chunks, one per worker process, and
    reassembled in trial order.

    Returns:
        (trials, jobs) int array with the machine chosen for each job
    """
    if algorithm not in ROUNDERS:
        raise ValueError(f"Unknown rounding algorithm {algorithm!r}")
    workers = max(1, min(int(workers), trials))
    bounds = np.linspace(0, trials, workers + 1).astype(int)
    spans = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    logger.info(f"Sampling {trials} {algorithm} roundings (seed={seed}, workers={workers})")
    if workers == 1:
        chunks = [_sample_chunk(b, seed, algorithm, lo, hi) for lo, hi in spans]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sample_chunk, b, seed, algorithm, lo, hi) for lo, hi in spans]
            chunks = [future.result() for future in futures]
    return np.concatenate(chunks, axis=0) if chunks else np.empty((0, b.jobs), dtype=np.int32)


def edge_hits(b, assignments):
    """(trials, edges) bool: was edge e chosen in trial t"""
    machines = np.array([edge.machine for edge in b.edges])
    jobs = np.array([edge.job for edge in b.edges])
    return assignments[:, jobs] == machines[None, :]


def is_perfect_assignment(b, assignments):
    """Every job gets exactly one machine, and that machine is one of its edges"""
    hits = edge_hits(b, assignments)
    per_job = np.zeros((assignments.shape[0], b.jobs), dtype=int)
    for e, edge in enumerate(b.edges):
        per_job[:, edge.job] += hits[:, e]
    return bool(np.all(per_job == 1))


# --- Correlation report


class EdgeEstimate(BaseModel):
    edge: int
    machine: int
    job: int
    y: float
    frequency: float
    stderr: float
    violation: bool


class PairEstimate(BaseModel):
    machine: int
    edges: tuple[int, int]
    jobs: tuple[int, int]
    product: float
    joint: float
    stderr: float
    same_group: bool
    violation_weak: bool
    violation_strong: bool


class CorrelationReport(BaseModel):
    model_config = ConfigDict(extra='forbid')

    algorithm: Algorithm
    trials: int
    seed: int
    perfect_assignment: bool
    edges: list[EdgeEstimate]
    pairs: list[PairEstimate]
    marginal_violations: int
    weak_violations: int
    strong_violations: int

    @property
    def violations(self):
        count = self.marginal_violations + self.weak_violations + self.strong_violations
        return count + (0 if self.perfect_assignment else 1)

    def rows(self):
        header = ['kind', 'machine', 'edges', 'jobs', 'expected', 'estimate', 'stderr', 'same_group', 'flag']
        rows = []
        for est in self.edges:
            rows.append(['edge', est.machine, est.edge, est.job, est.y, est.frequency, est.stderr, '', est.violation])
        for pair in self.pairs:
            flag = 'strong' if pair.violation_strong else ('weak' if pair.violation_weak else '')
            rows.append([
                'pair', pair.machine, f"{pair.edges[0]}-{pair.edges[1]}", f"{pair.jobs[0]}-{pair.jobs[1]}",
                pair.product, pair.joint, pair.stderr, pair.same_group, flag,
            ])
        return header, rows


def correlation_report_from_samples(b, assignments, seed, algorithm):
    trials = assignments.shape[0]
    hits = edge_hits(b, assignments)
    frequency = hits.mean(axis=0)
    y = b.y

    edges = []
    marginal_violations = 0
    for e, edge in enumerate(b.edges):
        sigma = math.sqrt(y[e] * (1.0 - y[e]) / trials)
        violation = abs(frequency[e] - y[e]) > FLAG_SIGMAS * sigma + 1e-12
        marginal_violations += violation
        edges.append(EdgeEstimate(
            edge=e, machine=edge.machine, job=edge.job, y=float(y[e]),
            frequency=float(frequency[e]), stderr=sigma, violation=bool(violation),
        ))

    pairs = []
    weak = strong = 0
    for u in range(b.machines):
        ids = sorted(b.machine_edges[u])
        if len(ids) < 2:
            continue
        block = hits[:, ids].astype(float)
        joint = (block.T @ block) / trials
        for a in range(len(ids)):
            for c in range(a + 1, len(ids)):
                e, f = ids[a], ids[c]
                p_hat = float(joint[a, c])
                sigma = math.sqrt(p_hat * (1.0 - p_hat) / trials)
                product = float(y[e] * y[f])
                same_group = b.same_group(e, f)
                violation_weak = p_hat > product + FLAG_SIGMAS * sigma + 1e-12
                violation_strong = (
                    algorithm == 'negcorr' and same_group
                    and p_hat > (1.0 - ZETA) * product + FLAG_SIGMAS * sigma + 1e-12
                )
                weak += violation_weak
                strong += violation_strong
                pairs.append(PairEstimate(
                    machine=u, edges=(e, f), jobs=(b.edges[e].job, b.edges[f].job),
                    product=product, joint=p_hat, stderr=sigma, same_group=same_group,
                    violation_weak=bool(violation_weak), violation_strong=bool(violation_strong),
                ))

    report = CorrelationReport(
        algorithm=algorithm, trials=trials, seed=seed,
        perfect_assignment=is_perfect_assignment(b, assignments),
        edges=edges, pairs=pairs,
        marginal_violations=int(marginal_violations), weak_violations=int(weak), strong_violations=int(strong),
    )
    if report.violations:
        logger.warning(
            f"Correlation check flagged {report.marginal_violations} marginals, "
            f"{report.weak_violations} weak and {report.strong_violations} strong pair violations"
        )
    return report


def estimate_correlations(b, trials, seed, algorithm='negcorr', workers=1):
    """
    Marginals and same-machine pairwise joint frequencies over `trials` roundings

    Flags a marginal deviating from y_e by more than 4 sigma, a pair whose
    joint frequency exceeds y_e y_f + 4 sigma-hat (weak), and, for the
    negatively correlated rounding, a same-group pair exceeding
    (1 - zeta) y_e y_f + 4 sigma-hat (strong).
    """
    check_trials(trials)
    assignments = sample_assignments(b, trials, seed, algorithm, workers)
    return correlation_report_from_samples(b, assignments, seed, algorithm)


# --- Expected costs


class CostEstimate(BaseModel):
    mean: float
    ci: float
    stderr: float
    trials: int


def expected_cost_independent(inst, x):
    """
    Exact expected cost of rounding x independently across jobs

    sum over machines and jobs of w_j x_j (p_j + sum_{j' before j} p_j' x_j')
    """
    x = assignment_matrix(x)
    total = 0.0
    for i in range(inst.machines):
        order = np.array(smith_order(inst, i).order, dtype=int)
        if not order.size:
            continue
        px = inst.p[i, order] * x[i, order]
        before = np.cumsum(px) - px
        total += float(np.sum(inst.w[order] * x[i, order] * (inst.p[i, order] + before)))
    return total


def assignment_costs(inst, assignments):
    """Schedule cost of every sampled assignment"""
    costs = np.zeros(assignments.shape[0])
    for i in range(inst.machines):
        order = np.array(smith_order(inst, i).order, dtype=int)
        if not order.size:
            continue
        on = assignments[:, order] == i
        load = np.cumsum(on * inst.p[i, order], axis=1)
        costs += np.sum(on * load * inst.w[order], axis=1)
    return costs


def _estimate(samples):
    trials = samples.shape[0]
    mean = float(samples.mean())
    stderr = float(samples.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return CostEstimate(mean=mean, ci=Z_95 * stderr, stderr=stderr, trials=trials)


def expected_cost_monte_carlo(inst, b, trials, seed, algorithm='negcorr', workers=1, assignments=None):
    """Mean schedule cost over sampled roundings with its 95% interval half-width"""
    check_trials(trials)
    if assignments is None:
        assignments = sample_assignments(b, trials, seed, algorithm, workers)
    return _estimate(assignment_costs(inst, assignments))


# --- Per-prefix checks


class PrefixMargin(BaseModel):
    machine: int
    prefix: int
    estimate: float
    stderr: float
    ci: float
    bound: float
    margin: float
    violation: bool


def _prefix_samples(inst, i, assignments):
    """(trials, k) per-trial prefix sums of p_j X_j (p_1 X_1 + ... + p_j X_j) in Smith order"""
    order = np.array(smith_order(inst, i).order, dtype=int)
    on = assignments[:, order] == i
    px = on * inst.p[i, order]
    rows = px * np.cumsum(px, axis=1)
    return np.cumsum(rows, axis=1)


def _prefix_margins(inst, assignments, bound_fn):
    margins = []
    trials = assignments.shape[0]
    for i in range(inst.machines):
        samples = _prefix_samples(inst, i, assignments)
        means = samples.mean(axis=0)
        if trials > 1:
            stderr = samples.std(axis=0, ddof=1) / math.sqrt(trials)
        else:
            stderr = np.zeros_like(means)
        for r in range(samples.shape[1]):
            bound = bound_fn(i, r + 1)
            sigma = float(stderr[r])
            margin = bound - float(means[r])
            tolerance = 1e-9 * max(1.0, abs(bound))
            margins.append(PrefixMargin(
                machine=i, prefix=r + 1, estimate=float(means[r]), stderr=sigma, ci=Z_95 * sigma,
                bound=bound, margin=margin, violation=bool(margin < -FLAG_SIGMAS * sigma - tolerance),
            ))
    return margins


def prefix_inequality_report(inst, sol, b, trials, seed, algorithm='negcorr', workers=1, assignments=None):
    """
    Rounded prefix expression against (3/2 - c) times the SDP prefix expression

    One row per machine and prefix of its Smith order; a row is violated when
    the estimate exceeds the bound by more than 4 standard errors. The 95%
    interval is reported alongside.
    """
    check_trials(trials)
    if assignments is None:
        assignments = sample_assignments(b, trials, seed, algorithm, workers)
    prefixes = {mm.machine: prefix_objectives(inst, mm.machine, mm.entries) for mm in sol.moments}

    def bound(i, n_prefix):
        return RATIO_TARGET * float(prefixes[i][n_prefix - 1])

    return _prefix_margins(inst, assignments, bound)


def grouped_jobs(b, i, prefix_jobs):
    """Jobs of machine i's groups that lie entirely inside prefix_jobs"""
    prefix_jobs = set(prefix_jobs)
    grouped = set()
    for group in b.groups[i]:
        jobs = {b.edges[e].job for e in group}
        if jobs <= prefix_jobs:
            grouped |= jobs
    return grouped


def upper_bound_audit(inst, sol, b, trials, seed, algorithm='negcorr', workers=1, assignments=None):
    """
    Rounded prefix expression against (1 - zeta/200) Q + (zeta/200) Q_bar + L^2 / 2

    Q, L run over the prefix and Q_bar over its ungrouped jobs. Without
    grouped jobs the bound is Q + L^2 / 2, which independent rounding meets.
    """
    check_trials(trials)
    if assignments is None:
        assignments = sample_assignments(b, trials, seed, algorithm, workers)
    x = assignment_matrix(sol)

    def bound(i, n_prefix):
        prefix = smith_order(inst, i).order[:n_prefix]
        bounds = named_lower_bounds(inst, x, i, n_prefix, grouped_jobs(b, i, prefix))
        return (1.0 - ZETA / 200) * bounds.q + (ZETA / 200) * bounds.q_bar + 0.5 * bounds.l ** 2

    return _prefix_margins(inst, assignments, bound)


class SandwichRow(BaseModel):
    machine: int
    prefix: int
    sdp_prefix: float
    lb_empty: float
    lb_full: float
    lb_grouped: float
    slack: float
    holds: bool


def lower_bound_sandwich(inst, sol, b=None, tol=SANDWICH_TOL):
    """
    Each machine's SDP prefix expression against LB(empty), LB(J) and LB(G)

    A row holds when the prefix expression is at least the largest bound
    minus tol * (sum of the prefix's ptimes) ** 2.
    """
    rows = []
    for mm in sol.moments:
        i = mm.machine
        order = smith_order(inst, i).order
        for n_prefix in range(1, len(order) + 1):
            prefix = order[:n_prefix]
            grouped = grouped_jobs(b, i, prefix) if b is not None else set()
            bounds = named_lower_bounds(inst, sol, i, n_prefix, grouped)
            value = machine_prefix_objective(inst, i, mm.entries, n_prefix)
            scale = max(1.0, float(sum(inst.p[i, j] for j in prefix)) ** 2)
            slack = value - bounds.best
            rows.append(SandwichRow(
                machine=i, prefix=n_prefix, sdp_prefix=value,
                lb_empty=bounds.lb_empty, lb_full=bounds.lb_full, lb_grouped=bounds.lb_grouped,
                slack=slack, holds=bool(slack >= -tol * scale),
            ))
    return rows


def telescoped_lower_bound(inst, sol, b, which):
    """
    A lower bound on the SDP objective: sum over machines and prefixes of
    (beta_r - beta_{r+1}) * LB_r, with LB one of 'empty', 'full', 'grouped'
    """
    total = 0.0
    for i in range(inst.machines):
        order = [j for j in smith_order(inst, i).order if inst.p[i, j] > 0]
        beta = [inst.w[j] / inst.p[i, j] for j in order] + [0.0]
        full_order = smith_order(inst, i).order
        for r, j in enumerate(order):
            n_prefix = full_order.index(j) + 1
            prefix = full_order[:n_prefix]
            grouped = grouped_jobs(b, i, prefix) if b is not None else set()
            bounds = named_lower_bounds(inst, sol, i, n_prefix, grouped)
            value = {'empty': bounds.lb_empty, 'full': bounds.lb_full, 'grouped': bounds.lb_grouped}[which]
            total += (beta[r] - beta[r + 1]) * value
    return total


# --- Ratio report


class RatioReport(BaseModel):
    model_config = ConfigDict(extra='forbid')

    algorithm: Algorithm
    trials: int
    seed: int
    sdp_value: float | None
    cp_value: float | None = None
    brute_force_opt: float | None = None
    independent_expected: float
    mean_cost: float
    ci: float
    ratio_sdp: float | None
    ratio_opt: float | None
    ratio_lb: dict[str, float]
    approx_gain: float = APPROX_GAIN
    prefix_margins: list[PrefixMargin]
    upper_bound: list[PrefixMargin]
    sandwich: list[SandwichRow]
    problems: list[str]

    @property
    def violations(self):
        return len(self.problems)

    def rows(self):
        header = ['quantity', 'value']
        rows = [
            ['algorithm', self.algorithm],
            ['trials', self.trials],
            ['seed', self.seed],
            ['sdp_value', self.sdp_value],
            ['cp_value', self.cp_value],
            ['brute_force_opt', self.brute_force_opt],
            ['independent_expected', self.independent_expected],
            ['mean_cost', self.mean_cost],
            ['ci95', self.ci],
            ['ratio_sdp', self.ratio_sdp],
            ['ratio_opt', self.ratio_opt],
        ]
        rows += [[f"ratio_lb_{name}", value] for name, value in self.ratio_lb.items()]
        rows += [
            ['approx_gain', self.approx_gain],
            ['prefix_violations', sum(m.violation for m in self.prefix_margins)],
            ['upper_bound_violations', sum(m.violation for m in self.upper_bound)],
            ['sandwich_failures', sum(not row.holds for row in self.sandwich)],
        ]
        return header, rows


def ratio_report(inst, sol, b, trials, seed, algorithm='negcorr', workers=1, cp_value=None, opt=None, assignments=None):
    """
    Mean rounded cost against the SDP value, the oracle optimum and the
    telescoped lower bounds, plus the per-prefix audits

    Checks recorded in `problems`, each at 4 standard errors: mean <= 3/2 sdp,
    mean >= opt, and no prefix row above its bound. Every sandwich row must hold.
    The upper-bound audit only applies to the negatively correlated rounding.
    """
    check_trials(trials)
    if assignments is None:
        assignments = sample_assignments(b, trials, seed, algorithm, workers)
    estimate = expected_cost_monte_carlo(inst, b, trials, seed, algorithm, assignments=assignments)
    sdp_value = sol.objective
    ratio_lb = {}
    for which in ('empty', 'full', 'grouped'):
        denominator = telescoped_lower_bound(inst, sol, b, which)
        if denominator > 0:
            ratio_lb[which] = estimate.mean / denominator

    prefix_margins = prefix_inequality_report(inst, sol, b, trials, seed, assignments=assignments)
    upper = []
    if algorithm == 'negcorr':
        upper = upper_bound_audit(inst, sol, b, trials, seed, assignments=assignments)
    sandwich = lower_bound_sandwich(inst, sol, b)

    problems = []
    if estimate.mean > 1.5 * sdp_value + FLAG_SIGMAS * estimate.stderr + 1e-9 * max(1.0, sdp_value):
        problems.append(f"mean cost {estimate.mean:.6g} exceeds 3/2 x SDP value {sdp_value:.6g} beyond 4 standard errors")
    if opt is not None and estimate.mean < opt - FLAG_SIGMAS * estimate.stderr - 1e-9 * max(1.0, opt):
        problems.append(f"mean cost {estimate.mean:.6g} is below the optimum {opt:.6g} beyond 4 standard errors")
    for row in prefix_margins:
        if row.violation:
            problems.append(f"machine {row.machine} prefix {row.prefix}: estimate {row.estimate:.6g} above {row.bound:.6g}")
    for row in upper:
        if row.violation:
            problems.append(f"machine {row.machine} prefix {row.prefix}: upper bound {row.bound:.6g} exceeded")
    for row in sandwich:
        if not row.holds:
            problems.append(f"machine {row.machine} prefix {row.prefix}: SDP prefix below lower bound by {-row.slack:.3g}")

    report = RatioReport(
        algorithm=algorithm, trials=trials, seed=seed,
        sdp_value=sdp_value, cp_value=cp_value,
        brute_force_opt=None if opt is None else float(opt),
        independent_expected=expected_cost_independent(inst, sol),
        mean_cost=estimate.mean, ci=estimate.ci,
        ratio_sdp=estimate.mean / sdp_value if sdp_value > 0 else None,
        ratio_opt=estimate.mean / opt if opt else None,
        ratio_lb=ratio_lb,
        prefix_margins=prefix_margins, upper_bound=upper, sandwich=sandwich,
        problems=problems,
    )
    logger.info(f"Mean {algorithm} cost {estimate.mean:.6g} +/- {estimate.ci:.3g} against SDP {sdp_value:.6g}")
    return report


# --- Rendering


class VerificationReport(BaseModel):
    """Everything `verify` prints: the run's configuration and its reports"""
    model_config = ConfigDict(extra='forbid')

    config: dict
    correlation: CorrelationReport
    ratio: RatioReport | None = None
    verified: bool

    @property
    def violations(self):
        return self.correlation.violations + (self.ratio.violations if self.ratio else 0)

    def rows(self):
        header, rows = self.correlation.rows()
        if self.ratio is not None:
            ratio_header, ratio_rows = self.ratio.rows()
            rows = rows + [[name, '', '', '', '', value, '', '', ''] for name, value in ratio_rows]
        return header, rows


def _cell(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    if value is None:
        return '-'
    return str(value)


def render_table(header, rows):
    cells = [[_cell(v) for v in header]] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(row[k]) for row in cells) for k in range(len(header))]
    lines = ['  '.join(value.ljust(width) for value, width in zip(row, widths)).rstrip() for row in cells]
    return '\n'.join(lines) + '\n'


def render_csv(header, rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow(['' if v is None else v for v in row])
    return buffer.getvalue()


def render_report(report, fmt='json'):
    """JSON is the contract; table and csv are flattened views"""
    if fmt == 'json':
        return report.model_dump_json(indent=2) + '\n'
    header, rows = report.rows()
    if fmt == 'table':
        return render_table(header, rows)
    if fmt == 'csv':
        return render_csv(header, rows)
    raise ValueError(f"Unknown report format {fmt!r}")
