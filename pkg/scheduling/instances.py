"""
Problem data for scheduling on unrelated machines

Instances, schedules, Smith ordering, exact cost evaluation, the instance
families used to exercise the relaxations, and a brute-force optimum for tiny
instances. Machines and jobs are 0-indexed throughout.
"""
import hashlib
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from django.conf import settings
from pydantic import BaseModel, ConfigDict, PrivateAttr, model_validator

from .exceptions import EnumerationLimitError, InfeasibleScheduleError, InvalidInstanceError

logger = logging.getLogger(__name__)

# Smart-mode union: JSON integers stay Python ints so integer data round-trips exactly
Number = int | float


def seeded_rng(seed, stream=0):
    """
    Counter-based generator for one reproducible random stream

    Philox keyed by the seed; the stream index occupies the top counter word,
    so streams (seed, 0), (seed, 1), ... never overlap.
    """
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(stream)]))


class Instance(BaseModel):
    """
    A scheduling instance

    ptimes[i][j] is the processing time of job j on machine i, or None when
    job j may not run on machine i.
    """
    model_config = ConfigDict(frozen=True, extra='forbid', allow_inf_nan=False)

    machines: int
    jobs: int
    weights: tuple[Number, ...]
    ptimes: tuple[tuple[Number | None, ...], ...]

    _p: np.ndarray = PrivateAttr()
    _allowed: np.ndarray = PrivateAttr()
    _w: np.ndarray = PrivateAttr()
    _smith: dict = PrivateAttr(default_factory=dict)

    @model_validator(mode='after')
    def check_invariants(self):
        if self.machines < 1 or self.jobs < 1:
            raise InvalidInstanceError("An instance needs at least one machine and one job")
        if len(self.weights) != self.jobs:
            raise InvalidInstanceError(f"Expected {self.jobs} weights, got {len(self.weights)}")
        if len(self.ptimes) != self.machines:
            raise InvalidInstanceError(f"Expected {self.machines} ptime rows, got {len(self.ptimes)}")
        for i, row in enumerate(self.ptimes):
            if len(row) != self.jobs:
                raise InvalidInstanceError(f"Ptime row {i} has {len(row)} entries, expected {self.jobs}")
            if any(p is not None and p < 0 for p in row):
                raise InvalidInstanceError(f"Ptime row {i} has a negative processing time")
        if any(w < 0 for w in self.weights):
            raise InvalidInstanceError("Weights must be nonnegative")
        for j in range(self.jobs):
            if all(self.ptimes[i][j] is None for i in range(self.machines)):
                raise InvalidInstanceError(f"Job {j} is forbidden on every machine")
        return self

    def model_post_init(self, __context):
        # ragged data is reported by check_invariants
        if len(self.ptimes) != self.machines or any(len(row) != self.jobs for row in self.ptimes):
            return
        allowed =np.array([[p is not None for p in row] for row in self.ptimes], dtype=bool)
        p = np.array([[0.0 if v is None else float(v) for v in row] for row in self.ptimes])
        w = np.array([float(v) for v in self.weights])
        for arr in (allowed, p, w):
            arr.setflags(write=False)
        self._allowed = allowed
        self._p = p
        self._w = w

    # Equality and hashing on the data only, never on the cached arrays
    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def _key(self):
        return (self.machines, self.jobs, self.weights, self.ptimes)

    @property
    def machine_count(self):
        return self.machines

    @property
    def job_count(self):
        return self.jobs

    @property
    def allowed(self):
        """Boolean (machines, jobs) mask of permitted pairs"""
        return self._allowed

    @property
    def p(self):
        """Processing times as floats, 0.0 on forbidden pairs (check `allowed`)"""
        return self._p

    @property
    def w(self):
        return self._w

    @property
    def is_integral(self):
        """True when every weight and every finite ptime is an integer"""
        values = list(self.weights) + [v for row in self.ptimes for v in row if v is not None]
        return all(isinstance(v, int) for v in values)

    @property
    def min_positive_ptime(self):
        positive = [v for row in self.ptimes for v in row if v is not None and v > 0]
        return min(positive) if positive else None

    def allowed_machines(self, j):
        return tuple(i for i in range(self.machines) if self.ptimes[i][j] is not None)

    def rescaled(self):
        """
        Copy with every ptime divided by the minimum positive ptime

        Scaling all processing times by one factor leaves Smith orders and
        optimal schedules unchanged; grouping expects this normalization.
        """
        base = self.min_positive_ptime
        if base is None or base == 1:
            return self
        rows = tuple(
            tuple(None if v is None else _divide(v, base) for v in row)
            for row in self.ptimes
        )
        return Instance(machines=self.machines, jobs=self.jobs, weights=self.weights, ptimes=rows)


def _divide(value, base):
    if isinstance(value, int) and isinstance(base, int) and value % base == 0:
        return value // base
    return value / base


@dataclass(frozen=True)
class Schedule:
    """Assignment of every job to one machine: assignment[j] = machine of job j"""
    assignment: tuple

    def jobs_on(self, machine):
        return tuple(j for j, i in enumerate(self.assignment) if i == machine)


@dataclass(frozen=True)
class SmithOrder:
    """Jobs with finite ptime on `machine`, in tie-broken Smith order"""
    machine: int
    order: tuple


def smith_order(inst, i):
    """
    Smith order of the jobs permitted on machine i

    Jobs with p_ij = 0 come first by ascending index; the rest are sorted by
    non-increasing w_j / p_ij with ties broken by ascending index. Ratios are
    compared exactly.
    """
    if not 0 <= i < inst.machines:
        raise IndexError(f"Machine {i} is not in range 0..{inst.machines - 1}")
    cached = inst._smith.get(i)
    if cached is not None:
        return cached

    def key(j):
        p = inst.ptimes[i][j]
        if p == 0:
            return (0, 0, j)
        return (1, -(Fraction(inst.weights[j]) / Fraction(p)), j)

    jobs = [j for j in range(inst.jobs) if inst.ptimes[i][j] is not None]
    result = SmithOrder(machine=i, order=tuple(sorted(jobs, key=key)))
    inst._smith[i] = result
    return result


def check_schedule(inst, s):
    """Raise InfeasibleScheduleError unless s assigns every job to a permitted machine"""
    if len(s.assignment) != inst.jobs:
        raise InfeasibleScheduleError(
            f"Schedule covers {len(s.assignment)} jobs but the instance has {inst.jobs}"
        )
    for j, i in enumerate(s.assignment):
        if not 0 <= i < inst.machines:
            raise InfeasibleScheduleError(f"Job {j} is assigned to unknown machine {i}")
        if inst.ptimes[i][j] is None:
            raise InfeasibleScheduleError(f"Job {j} is assigned to machine {i}, where it is forbidden")


def _machine_cost(inst, i, jobs):
    """Weighted completion time of `jobs` on machine i in Smith order, in the input's number type"""
    chosen = set(jobs)
    elapsed = 0
    total = 0
    for j in smith_order(inst, i).order:
        if j in chosen:
            elapsed += inst.ptimes[i][j]
            total += inst.weights[j] * elapsed
    return total


def schedule_cost(inst, s):
    """
    Total weighted completion time of schedule s

    Each machine processes its jobs in Smith order, which is optimal for a
    single machine.

    Raises:
        InfeasibleScheduleError: if s uses a forbidden pair
    """
    check_schedule(inst, s)
    return float(sum(_machine_cost(inst, i, s.jobs_on(i)) for i in range(inst.machines)))


def brute_force_opt(inst, cap=None, workers=1):
    """
    Exact optimum by enumerating every feasible assignment

    Args:
        inst: Instance to solve
        cap: refuse when machines ** jobs exceeds this (default settings.BRUTE_FORCE_CAP)
        workers: threads sharing the enumeration, split on the first job's machine

    Returns:
        (cost, Schedule) with the lexicographically least optimal assignment.
        The cost is an exact int for integral instances.

    Raises:
        EnumerationLimitError: if the enumeration is larger than the cap
    """
    cap = settings.BRUTE_FORCE_CAP if cap is None else cap
    required = inst.machines ** inst.jobs
    if required > cap:
        raise EnumerationLimitError(required, cap)

    exact = inst.is_integral
    choices = [inst.allowed_machines(j) for j in range(inst.jobs)]

    @lru_cache(maxsize=None)
    def machine_cost(i, jobs):
        cost = _machine_cost(inst, i, jobs)
        return cost if exact else float(cost)

    def search(first_machine):
        best = None
        for rest in itertools.product(*choices[1:]):
            assignment = (first_machine,) + rest
            buckets = [[] for _ in range(inst.machines)]
            for j, i in enumerate(assignment):
                buckets[i].append(j)
            cost = sum(machine_cost(i, tuple(jobs)) for i, jobs in enumerate(buckets) if jobs)
            if best is None or cost < best[0]:
                best = (cost, assignment)
        return best

    if workers > 1 and len(choices[0]) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(search, choices[0]))
    else:
        partials = [search(i) for i in choices[0]]

    cost, assignment = min(partials)
    logger.info(f"Brute force enumerated {required} assignments, optimum {cost}")
    return cost, Schedule(assignment=assignment)


def gap_instance(k):
    """
    Integrality-gap family for the convex program

    k unit jobs that only fit machine 0, and one job of size k**2 that fits
    machines 1..k but not machine 0. All weights are 1.
    """
    if k < 1:
        raise InvalidInstanceError("k must be at least 1")
    m = k + 1
    rows = [tuple([1] * k + [None])]
    rows += [tuple([None] * k + [k * k]) for _ in range(1, m)]
    return Instance(machines=m, jobs=k + 1, weights=tuple([1] * (k + 1)), ptimes=tuple(rows))


def poisson_instance(m):
    """m unit jobs on m machines; independent rounding of x = 1/m loses a factor 3/2 - 1/(2m)"""
    if m < 1:
        raise InvalidInstanceError("m must be at least 1")
    return Instance(
        machines=m,
        jobs=m,
        weights=tuple([1] * m),
        ptimes=tuple(tuple([1] * m) for _ in range(m)),
    )


def class_instance(num_classes, scale, jobs_per_class, machines):
    """
    Job classes with very different Smith ratios

    Class k (1..num_classes) holds jobs_per_class jobs of weight scale**k and
    size scale**-k, identical on every machine. Sizes are multiplied by
    scale**num_classes so the smallest one is 1.
    """
    if scale <= 1:
        raise InvalidInstanceError("scale must exceed 1")
    if num_classes < 1 or jobs_per_class < 1 or machines < 1:
        raise InvalidInstanceError("num_classes, jobs_per_class and machines must be positive")
    weights = []
    sizes = []
    for k in range(1, num_classes + 1):
        weights += [scale ** k] * jobs_per_class
        sizes += [scale ** (num_classes - k)] * jobs_per_class
    return Instance(
        machines=machines,
        jobs=len(weights),
        weights=tuple(weights),
        ptimes=tuple(tuple(sizes) for _ in range(machines)),
    )


def _draw(rng, bounds):
    low, high = bounds
    if isinstance(low, int) and isinstance(high, int):
        return int(rng.integers(low, high + 1))
    return float(rng.uniform(low, high))


def random_instance(seed, n, m, forbidden_prob=0.0, ptime_range=(1, 100), weight_range=(1, 10)):
    """
    Random instance, deterministic given the seed

    Each pair is forbidden independently with probability forbidden_prob; a
    job left with no permitted machine has its row of the mask redrawn.
    Integer ranges give integer data.
    """
    if n < 1 or m < 1:
        raise InvalidInstanceError("n and m must be positive")
    if not 0 <= forbidden_prob < 1:
        raise InvalidInstanceError("forbidden_prob must lie in [0, 1)")
    for name, (low, high) in (('ptime_range', ptime_range), ('weight_range', weight_range)):
        if low <= 0 or high < low:
            raise InvalidInstanceError(f"{name} must be a positive interval, got [{low}, {high}]")

    rng = seeded_rng(seed)
    columns = []
    for _ in range(n):
        mask = rng.random(m) >= forbidden_prob
        while not mask.any():
            mask = rng.random(m) >= forbidden_prob
        columns.append([_draw(rng, ptime_range) if ok else None for ok in mask])
    weights = tuple(_draw(rng, weight_range) for _ in range(n))
    rows = tuple(tuple(columns[j][i] for j in range(n)) for i in range(m))
    return Instance(machines=m, jobs=n, weights=weights, ptimes=rows)


def dump_instance(inst):
    """Canonical JSON text: machines, jobs, weights, ptimes (null = forbidden)"""
    return inst.model_dump_json()


def load_instance(path):
    return Instance.model_validate_json(Path(path).read_text())


def instance_digest(inst):
    return hashlib.sha256(dump_instance(inst).encode('utf-8')).hexdigest()
