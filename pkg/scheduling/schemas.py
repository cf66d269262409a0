"""
JSON file contracts of the command-line surface

Instance files are the Instance model itself (see instances.py). This
module adds solution, schedule and rounding-instance files, the experiment
configuration echoed into outputs, and the conversions between files and
the in-memory types.
"""
import json
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .exceptions import InvalidSolutionError
from .negcorr_rounding import BipartiteRoundingInstance, TraceEvent
from .relaxations import (
    CpSolution,
    CpStats,
    FractionalAssignment,
    MomentMatrix,
    SdpSolution,
    SolverStats,
    sdp_objective,
)


class ExperimentConfig(BaseModel):
    """
    Everything that determines a command's output

    Echoed into the JSON outputs of round and verify and stored with each
    ledger row.
    """
    model_config = ConfigDict(extra='forbid')

    command: Literal['generate', 'solve', 'round', 'verify']
    instance: str | None = None
    generator: str | None = None
    params: dict = Field(default_factory=dict)
    solution: str | None = None
    bipartite: str | None = None
    relaxation: Literal['sdp', 'cp'] | None = None
    algorithm: Literal['negcorr', 'independent'] | None = None
    seed: int | None = None
    trials: int | None = None
    threads: int = 1
    solver: dict = Field(default_factory=dict)
    format: Literal['json', 'table', 'csv'] = 'json'
    out: str | None = None

    @model_validator(mode='after')
    def check_seed(self):
        if self.command in ('round', 'verify') and self.seed is None:
            raise ValueError(f"{self.command} needs a seed")
        return self


class SolutionFile(BaseModel):
    model_config = ConfigDict(extra='forbid', allow_inf_nan=False)

    relaxation: Literal['sdp', 'cp']
    objective: float
    converged: bool
    x: list[list[float]]
    moments: list[list[list[float]]] | None = None
    stats: dict[str, float | int | bool] = Field(default_factory=dict)

    @model_validator(mode='after')
    def check_moments(self):
        if self.relaxation == 'sdp' and self.moments is None:
            raise ValueError("An SDP solution needs its moment matrices")
        return self


class ScheduleFile(BaseModel):
    model_config = ConfigDict(extra='forbid')

    assignment: list[int]
    cost: float
    algorithm: Literal['negcorr', 'independent']
    seed: int
    config: ExperimentConfig


class BipartiteFile(BaseModel):
    """Edges as [machine, job, y]; groups per machine as lists of edge ids"""
    model_config = ConfigDict(extra='forbid', allow_inf_nan=False)

    machines: int = Field(ge=1)
    jobs: int = Field(ge=1)
    edges: list[tuple[int, int, float]]
    groups: list[list[list[int]]]

    @classmethod
    def from_bipartite(cls, b):
        return cls(
            machines=b.machines,
            jobs=b.jobs,
            edges=[(edge.machine, edge.job, edge.y) for edge in b.edges],
            groups=[[list(group) for group in machine_groups] for machine_groups in b.groups],
        )

    def to_bipartite(self):
        return BipartiteRoundingInstance(self.machines, self.jobs, self.edges, self.groups)


def dump_model(model):
    return model.model_dump_json(indent=2) + '\n'


def load_bipartite(path):
    return BipartiteFile.model_validate_json(Path(path).read_text()).to_bipartite()


def solution_file(sol):
    """SolutionFile for an SdpSolution or CpSolution"""
    if isinstance(sol, SdpSolution):
        return SolutionFile(
            relaxation='sdp',
            objective=sol.objective,
            converged=sol.converged,
            x=sol.x.x.tolist(),
            moments=[mm.entries.tolist() for mm in sol.moments],
            stats={
                'iterations': sol.stats.iterations,
                'primal_residual': sol.stats.primal_residual,
                'dual_residual': sol.stats.dual_residual,
                'rho': sol.stats.rho,
                'min_eigenvalue': sol.stats.min_eigenvalue,
            },
        )
    return SolutionFile(
        relaxation='cp',
        objective=sol.value,
        converged=sol.converged,
        x=sol.x.x.tolist(),
        stats={'iterations': sol.stats.iterations},
    )


def load_solution(path, inst):
    """
    Read a solution file for `inst`

    Returns:
        SdpSolution or CpSolution; an SDP objective is recomputed from the
        moments

    Raises:
        InvalidSolutionError: if x or the moments do not fit the instance
    """
    data = SolutionFile.model_validate_json(Path(path).read_text())
    x = FractionalAssignment.from_matrix(inst, data.x)
    if data.relaxation == 'cp':
        stats = CpStats(iterations=int(data.stats.get('iterations', 0)), converged=data.converged)
        return CpSolution(value=data.objective, x=x, stats=stats)

    if len(data.moments) != inst.machines:
        raise InvalidSolutionError(f"Expected {inst.machines} moment matrices, got {len(data.moments)}")
    moments = []
    for i, block in enumerate(data.moments):
        entries = np.array(block, dtype=float)
        if entries.shape != (inst.jobs + 1, inst.jobs + 1):
            raise InvalidSolutionError(f"Moment matrix {i} has shape {entries.shape}")
        moments.append(MomentMatrix(machine=i, entries=entries))
    stats = SolverStats(
        iterations=int(data.stats.get('iterations', 0)),
        primal_residual=float(data.stats.get('primal_residual', 0.0)),
        dual_residual=float(data.stats.get('dual_residual', 0.0)),
        rho=float(data.stats.get('rho', 0.0)),
        converged=data.converged,
        min_eigenvalue=float(data.stats.get('min_eigenvalue', 0.0)),
    )
    sol = SdpSolution(x=x, moments=tuple(moments), objective=0.0, stats=stats)
    return SdpSolution(x=x, moments=sol.moments, objective=sdp_objective(inst, sol), stats=stats)


def read_trace(path):
    return [TraceEvent.model_validate_json(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_trace(path, events):
    Path(path).write_text(''.join(event.model_dump_json() + '\n' for event in events))


def read_options(path):
    """A --config file: a JSON object of option values"""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("A config file must hold a JSON object")
    return data
