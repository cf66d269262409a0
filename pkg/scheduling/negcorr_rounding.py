"""
Bipartite rounding with strong negative correlation

Given a fractional assignment y of jobs (right side) to machines (left side)
and, per machine, disjoint groups of incident edges of mass at most one, the
rounding picks exactly one machine per job such that

- every edge is picked with probability y_e
- two edges on the same machine are never positively correlated
- two edges in the same group are picked together with probability at most
  (1 - 1/108) y_e y_e'

The algorithm runs in three phases. Phase 1 picks, per job, one random cell
of its edges (cells of mass about 1/6) to form the set R. Phase 2 repeatedly
moves mass along paths of four floating edges: two R-edges in one group and
one non-R edge at each of their jobs. Phase 3 rounds every job independently
from the resulting y.

Grouping for the scheduling application (job classes by powers of ten,
cells of mass at least 1/10) lives here too, along with the independent
rounding baseline.
"""
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict

from .exceptions import InvalidSolutionError, PipageInvariantError, UnscaledInstanceError
from .instances import Schedule, seeded_rng, smith_order
from .relaxations import assignment_matrix

logger = logging.getLogger(__name__)

TAU_CLAMP = 1e-12
ZETA = 1 / 108
CELL_MASS = 1 / 6
MAX_CELLS = 6
GROUP_MASS = 1 / 10
DEGREE_TOL = 1e-9


def rounding_rng(seed, stream=0):
    """Generator for rounding run `stream` under `seed`; trial t of a Monte Carlo run uses stream t"""
    return seeded_rng(seed, stream)


@dataclass(frozen=True)
class Edge:
    machine: int
    job: int
    y: float


class BipartiteRoundingInstance:
    """
    Machines U, jobs V, weighted edges and per-machine groups

    Edge ids are positions in `edges`. Groups are stored per machine as
    tuples of edge ids. Construction renormalizes every job's edges to total
    one.

    Raises:
        InvalidSolutionError: on a job without edges, an edge value outside
            (0, 1], a job total far from one, or a malformed group
    """

    def __init__(self, machines, jobs, edges, groups=None):
        edges = [Edge(int(u), int(v), float(y)) for u, v, y in edges]
        if machines < 1 or jobs < 1:
            raise InvalidSolutionError("A rounding instance needs at least one machine and one job")
        job_edges = [[] for _ in range(jobs)]
        machine_edges = [[] for _ in range(machines)]
        seen = set()
        for e, edge in enumerate(edges):
            if not (0 <= edge.machine < machines and 0 <= edge.job < jobs):
                raise InvalidSolutionError(f"Edge {e} joins unknown vertices ({edge.machine}, {edge.job})")
            if (edge.machine, edge.job) in seen:
                raise InvalidSolutionError(f"Edge {e} duplicates machine {edge.machine}, job {edge.job}")
            seen.add((edge.machine, edge.job))
            if not (0.0 < edge.y <= 1.0 + DEGREE_TOL):
                raise InvalidSolutionError(f"Edge {e} has value {edge.y}, expected a value in (0, 1]")
            job_edges[edge.job].append(e)
            machine_edges[edge.machine].append(e)

        for v, incident in enumerate(job_edges):
            if not incident:
                raise InvalidSolutionError(f"Job {v} has no edges")
            total = math.fsum(edges[e].y for e in incident)
            if abs(total - 1.0) > 1e-6:
                raise InvalidSolutionError(f"Job {v} has total value {total:.12g}, expected 1")
            for e in incident:
                edges[e] = Edge(edges[e].machine, edges[e].job, edges[e].y / total)

        groups = groups if groups is not None else [[] for _ in range(machines)]
        if len(groups) != machines:
            raise InvalidSolutionError(f"Expected groups for {machines} machines, got {len(groups)}")
        group_of = {}
        clean_groups = []
        for u, machine_groups in enumerate(groups):
            kept = []
            for l, group in enumerate(machine_groups):
                group = tuple(sorted(int(e) for e in group))
                for e in group:
                    if not 0 <= e < len(edges) or edges[e].machine != u:
                        raise InvalidSolutionError(f"Group {l} of machine {u} holds edge {e}, which is not incident to it")
                    if e in group_of:
                        raise InvalidSolutionError(f"Edge {e} belongs to more than one group")
                    group_of[e] = (u, l)
                mass = math.fsum(edges[e].y for e in group)
                if mass > 1.0 + DEGREE_TOL:
                    raise InvalidSolutionError(f"Group {l} of machine {u} has mass {mass:.12g} above 1")
                kept.append(group)
            clean_groups.append(tuple(kept))

        self.machines = machines
        self.jobs = jobs
        self.edges = tuple(edges)
        self.groups = tuple(clean_groups)
        self.group_of = group_of
        self.job_edges = tuple(tuple(sorted(ids, key=lambda e: edges[e].machine)) for ids in job_edges)
        self.machine_edges = tuple(tuple(sorted(ids, key=lambda e: edges[e].job)) for ids in machine_edges)

    @property
    def y(self):
        return np.array([edge.y for edge in self.edges])

    def edge_id(self, machine, job):
        for e in self.job_edges[job]:
            if self.edges[e].machine == machine:
                return e
        return None

    def same_group(self, e, f):
        return e in self.group_of and self.group_of.get(e) == self.group_of.get(f)

    def same_machine_pairs(self):
        """All pairs e < f of distinct edges on one machine, ordered by machine then ids"""
        pairs = []
        for u in range(self.machines):
            pairs.extend(combinations(sorted(self.machine_edges[u]), 2))
        return pairs

    def __repr__(self):
        return f"BipartiteRoundingInstance(machines={self.machines}, jobs={self.jobs}, edges={len(self.edges)})"


class TraceEvent(BaseModel):
    """One step of a rounding run, written as a JSON line"""
    model_config = ConfigDict(extra='forbid')

    phase: int
    step: int = 0
    candidate: tuple[int, int, int, int, int, int] | None = None
    edges: tuple[int, int, int, int] | None = None
    alpha: float | None = None
    beta: float | None = None
    branch: Literal['beta', 'alpha'] | None = None
    removed: tuple[int, ...] = ()
    selected: tuple[int, ...] = ()


@dataclass
class RoundingState:
    bipartite: BipartiteRoundingInstance
    y: list
    in_r: list
    phase: int = 1
    iterations: int = 0
    trace: list | None = None

    @property
    def r_size(self):
        return sum(self.in_r)

    def degree(self, v):
        return math.fsum(self.y[e] for e in self.bipartite.job_edges[v])


@dataclass(frozen=True)
class AssignmentOutcome:
    chosen: tuple
    machine_of: tuple
    trace: tuple | None = field(default=None, compare=False)

    def schedule(self):
        return Schedule(assignment=self.machine_of)


def _floating(value):
    return TAU_CLAMP < value < 1.0 - TAU_CLAMP


def _clamp(value):
    if value <= TAU_CLAMP:
        return 0.0
    if value >= 1.0 - TAU_CLAMP:
        return 1.0
    return value


def _cells(b, y, v):
    """Greedy partition of the edges at job v into cells of mass at least 1/6"""
    ordered = sorted(b.job_edges[v], key=lambda e: (-y[e], e))
    cells = []
    current = []
    mass = 0.0
    for e in ordered:
        current.append(e)
        mass += y[e]
        if mass >= CELL_MASS - TAU_CLAMP:
            cells.append(current)
            current = []
            mass = 0.0
    if current:
        cells.append(current)
    if len(cells) > MAX_CELLS:
        cells[MAX_CELLS - 1:] = [[e for cell in cells[MAX_CELLS - 1:] for e in cell]]
    return cells


def phase1_select_R(b, rng, trace=False):
    """Pick one cell per job uniformly at random; their union is R"""
    y = [edge.y for edge in b.edges]
    in_r = [False] * len(b.edges)
    for v in range(b.jobs):
        cells = _cells(b, y, v)
        for e in cells[int(rng.integers(len(cells)))]:
            in_r[e] = True
    state = RoundingState(bipartite=b, y=y, in_r=in_r, phase=2, trace=[] if trace else None)
    if trace:
        state.trace.append(TraceEvent(phase=1, selected=tuple(e for e, flag in enumerate(in_r) if flag)))
    return state


def _find_candidate(state):
    """
    Lexicographically first (u, l, v1, v2, u1, u2) with all four edges floating

    Returns:
        (candidate tuple, (e1, e2, f1, f2)) with e1 = {u,v1}, e2 = {u,v2} in R
        and f1 = {u1,v1}, f2 = {u2,v2} outside R; None when no path exists
    """
    b = state.bipartite
    y = state.y
    in_r = state.in_r
    for u in range(b.machines):
        for l, group in enumerate(b.groups[u]):
            members = [e for e in group if in_r[e] and _floating(y[e])]
            if len(members) < 2:
                continue
            members.sort(key=lambda e: b.edges[e].job)
            partner = {}
            for e in members:
                v = b.edges[e].job
                partner[e] = next(
                    (f for f in b.job_edges[v] if not in_r[f] and _floating(y[f]) and b.edges[f].machine != u),
                    None,
                )
            for e1, e2 in combinations(members, 2):
                f1, f2 = partner[e1], partner[e2]
                if f1 is None or f2 is None:
                    continue
                candidate = (u, l, b.edges[e1].job, b.edges[e2].job, b.edges[f1].machine, b.edges[f2].machine)
                return candidate, (e1, e2, f1, f2)
    return None


def phase2_pipage(state, rng):
    """
    Move mass along four-edge paths until no group holds two floating R-edges
    with floating partners outside R

    Every step keeps each job's total at one and fixes at least one edge at
    0 or 1, so at most |E| steps run.

    Raises:
        PipageInvariantError: if a step has alpha + beta = 0 or the step count
            exceeds the number of edges
    """
    b = state.bipartite
    y = state.y
    in_r = state.in_r
    limit = len(b.edges)

    while True:
        found = _find_candidate(state)
        if found is None:
            break
        if state.iterations >= limit:
            raise PipageInvariantError(f"Pipage rounding exceeded {limit} steps on {len(b.edges)} edges")
        candidate, (e1, e2, f1, f2) = found
        alpha = min(y[f1], 1.0 - y[e1], y[e2], 1.0 - y[f2])
        beta = min(1.0 - y[f1], y[e1], 1.0 - y[e2], y[f2])
        if alpha + beta <= 0.0:
            raise PipageInvariantError(
                f"Degenerate step at {candidate}: values {[y[e] for e in (e1, e2, f1, f2)]}"
            )
        if rng.random() < alpha / (alpha + beta):
            branch = 'beta'
            y[f1] += beta
            y[e2] += beta
            y[e1] -= beta
            y[f2] -= beta
        else:
            branch = 'alpha'
            y[f1] -= alpha
            y[e2] -= alpha
            y[e1] += alpha
            y[f2] += alpha
        for e in (e1, e2, f1, f2):
            y[e] = _clamp(y[e])

        removed = []
        for v in (candidate[2], candidate[3]):
            kept = [e for e in b.job_edges[v] if in_r[e]]
            if abs(math.fsum(y[e] for e in kept) - 1.0) <= TAU_CLAMP and len(kept) > 1:
                best = max(kept, key=lambda e: (y[e], -e))
                for e in kept:
                    if e != best:
                        in_r[e] = False
                        removed.append(e)

        state.iterations += 1
        if state.trace is not None:
            state.trace.append(TraceEvent(
                phase=2, step=state.iterations, candidate=candidate, edges=(e1, e2, f1, f2),
                alpha=alpha, beta=beta, branch=branch, removed=tuple(removed),
            ))

    conflicts = group_conflicts(state)
    if conflicts:
        logger.warning(f"Pipage rounding ended with {len(conflicts)} groups holding several positive R-edges")
    state.phase = 3
    return state


def group_conflicts(state):
    """Groups that still hold more than one R-edge with positive value"""
    b = state.bipartite
    conflicts = []
    for u in range(b.machines):
        for l, group in enumerate(b.groups[u]):
            live = [e for e in group if state.in_r[e] and state.y[e] > 0.0]
            if len(live) > 1:
                conflicts.append((u, l, tuple(live)))
    return conflicts


def _sample(b, y, rng):
    chosen = []
    machine_of = []
    for v in range(b.jobs):
        incident = b.job_edges[v]
        draw = rng.random()
        pick = None
        cumulative = 0.0
        for e in incident:
            cumulative += y[e]
            if draw < cumulative:
                pick = e
                break
        if pick is None:
            # draw landed in the rounding slack above the cumulative total
            pick = [e for e in incident if y[e] > 0.0][-1]
        chosen.append(pick)
        machine_of.append(b.edges[pick].machine)
    return tuple(chosen), tuple(machine_of)


def phase3_independent(state, rng):
    """Pick one edge per job with probability y_e, independently across jobs"""
    chosen, machine_of = _sample(state.bipartite, state.y, rng)
    trace = None
    if state.trace is not None:
        state.trace.append(TraceEvent(phase=3, selected=chosen))
        trace = tuple(state.trace)
    state.phase = 4
    return AssignmentOutcome(chosen=chosen, machine_of=machine_of, trace=trace)


def negcorr_round(b, seed, stream=0, trace=False):
    """
    Run all three phases under rounding_rng(seed, stream)

    Returns:
        AssignmentOutcome with one edge per job; carries the event trace when
        trace is true
    """
    rng = rounding_rng(seed, stream)
    state = phase1_select_R(b, rng, trace=trace)
    state = phase2_pipage(state, rng)
    return phase3_independent(state, rng)


def independent_round(b, seed, stream=0):
    """Baseline: phase 3 applied to the input values directly"""
    chosen, machine_of = _sample(b, [edge.y for edge in b.edges], rounding_rng(seed, stream))
    return AssignmentOutcome(chosen=chosen, machine_of=machine_of)


ROUNDERS = {
    'negcorr': negcorr_round,
    'independent': independent_round,
}


def replay_trace(b, events):
    """
    Re-apply a recorded trace and audit it

    Checks that every job keeps total value one, values stay in [0, 1], the
    total value is conserved, R never grows, and removed edges were in R.

    Returns:
        List of problems; empty when the trace is consistent
    """
    problems = []
    events = [e if isinstance(e, TraceEvent) else TraceEvent.model_validate(e) for e in events]
    if not events or events[0].phase != 1:
        return ["trace does not start with the R selection"]
    y = [edge.y for edge in b.edges]
    in_r = [False] * len(b.edges)
    for e in events[0].selected:
        in_r[e] = True
    total = math.fsum(y)
    r_size = sum(in_r)

    for event in events[1:]:
        if event.phase != 2:
            continue
        e1, e2, f1, f2 = event.edges
        amount = event.beta if event.branch == 'beta' else event.alpha
        sign = 1.0 if event.branch == 'beta' else -1.0
        if not all(_floating(y[e]) for e in event.edges):
            problems.append(f"step {event.step}: updates an edge that is already integral")
        y[f1] += sign * amount
        y[e2] += sign * amount
        y[e1] -= sign * amount
        y[f2] -= sign * amount
        for e in event.edges:
            y[e] = _clamp(y[e])
            if not 0.0 <= y[e] <= 1.0:
                problems.append(f"step {event.step}: edge {e} left [0, 1]")
        for e in event.removed:
            if not in_r[e]:
                problems.append(f"step {event.step}: removes edge {e}, which is not in R")
            in_r[e] = False
        if sum(in_r) > r_size:
            problems.append(f"step {event.step}: R grew")
        r_size = sum(in_r)
        for v in range(b.jobs):
            degree = math.fsum(y[e] for e in b.job_edges[v])
            if abs(degree - 1.0) > DEGREE_TOL:
                problems.append(f"step {event.step}: job {v} has total {degree:.12g}")
        if abs(math.fsum(y) - total) > DEGREE_TOL * len(y):
            problems.append(f"step {event.step}: total value changed")
    return problems


def four_job_instance():
    """
    Four jobs, two machines, every value 1/2

    Machine 0 groups jobs {0, 2} and {1, 3}; machine 1 groups jobs {0, 1}
    and {2, 3}.
    """
    edges = [(0, j, 0.5) for j in range(4)] + [(1, j, 0.5) for j in range(4)]
    groups = [
        [[0, 2], [1, 3]],
        [[4, 5], [6, 7]],
    ]
    return BipartiteRoundingInstance(machines=2, jobs=4, edges=edges, groups=groups)


def job_class(p):
    """k such that 10**(k-1) <= p < 10**k"""
    k = math.floor(math.log10(p)) + 1
    while 10.0 ** (k - 1) > p:
        k -= 1
    while p >= 10.0 ** k:
        k += 1
    return k


def build_groups(inst, x):
    """
    Rounding instance for a fractional schedule, with job-class groups

    Edges are the pairs with x_ij above the clamp tolerance. On each machine
    the jobs of positive size are split into classes by powers of ten; within
    a class, in Smith order, a job with x_ij >= 1/10 forms its own group and
    the others are collected greedily until the collection's mass reaches
    1/10. A final collection below 1/10 stays ungrouped, as do jobs of size 0.

    Raises:
        UnscaledInstanceError: unless the smallest positive ptime is 1
    """
    base = inst.min_positive_ptime
    if base is not None and base != 1:
        raise UnscaledInstanceError(
            f"Smallest positive processing time is {base}; rescale the instance (Instance.rescaled) first"
        )
    xm = np.asarray(assignment_matrix(x), dtype=float)
    keep = inst.allowed & (xm > TAU_CLAMP)
    ids = {}
    edges = []
    for i in range(inst.machines):
        for j in range(inst.jobs):
            if keep[i, j]:
                ids[(i, j)] = len(edges)
                edges.append((i, j, float(xm[i, j])))
    normalized = BipartiteRoundingInstance(inst.machines, inst.jobs, edges)
    y = [edge.y for edge in normalized.edges]

    groups = []
    for i in range(inst.machines):
        classes = {}
        for j in smith_order(inst, i).order:
            if not keep[i, j] or inst.p[i, j] == 0:
                continue
            classes.setdefault(job_class(inst.p[i, j]), []).append(ids[(i, j)])
        machine_groups = []
        for k in sorted(classes):
            bucket = []
            mass = 0.0
            for e in classes[k]:
                if y[e] >= GROUP_MASS:
                    machine_groups.append([e])
                    continue
                bucket.append(e)
                mass += y[e]
                if mass >= GROUP_MASS:
                    machine_groups.append(bucket)
                    bucket = []
                    mass = 0.0
        groups.append(machine_groups)

    b = BipartiteRoundingInstance(inst.machines, inst.jobs, [(e.machine, e.job, e.y) for e in normalized.edges], groups)
    grouped = sum(len(g) for machine_groups in b.groups for g in machine_groups)
    logger.info(f"Built {sum(len(g) for g in b.groups)} groups covering {grouped} of {len(b.edges)} edges")
    return b


def from_fractional(inst, x):
    """build_groups on the rescaled instance"""
    return build_groups(inst.rescaled(), x)
