"""
The standard instance suite the acceptance checks run over

The four-job rounding instance, 20 random instances with at most 10 jobs and
4 machines, the integrality gap instance with k=5, the Poisson instance with
two machines and a small job-class instance.
"""
import logging
from dataclasses import dataclass

from .instances import Instance, class_instance, gap_instance, poisson_instance, random_instance
from .negcorr_rounding import BipartiteRoundingInstance, four_job_instance, from_fractional

logger = logging.getLogger(__name__)

RANDOM_CASES = 20


@dataclass(frozen=True)
class SuiteCase:
    name: str
    instance: Instance | None = None
    bipartite: BipartiteRoundingInstance | None = None

    def rounding_instance(self, sol=None):
        """The case's own rounding instance, or the one built from a solution of its instance"""
        if self.bipartite is not None:
            return self.bipartite
        if sol is None:
            raise ValueError(f"Suite case {self.name} needs a fractional solution to build its rounding instance")
        return from_fractional(self.instance, sol.x)


def random_case(index):
    n = 2 + index % 9
    m = 1 + index % 4
    return SuiteCase(
        name=f"random_{index:02d}",
        instance=random_instance(index, n, m, forbidden_prob=0.2, ptime_range=(1, 20), weight_range=(1, 10)),
    )


def standard_suite(random_cases=RANDOM_CASES):
    cases = [SuiteCase(name='fourjob', bipartite=four_job_instance())]
    cases += [random_case(index) for index in range(random_cases)]
    cases += [
        SuiteCase(name='gap_k5', instance=gap_instance(5)),
        SuiteCase(name='poisson_m2', instance=poisson_instance(2)),
        SuiteCase(name='class_3x2', instance=class_instance(3, 10, 2, 2)),
    ]
    logger.debug(f"Standard suite: {len(cases)} cases")
    return cases
