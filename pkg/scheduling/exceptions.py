"""
Errors raised by the scheduling library

Management commands map these onto exit codes (see the command modules).
"""


class SchedulingError(Exception):
    """Base class for all library errors"""


class InvalidInstanceError(SchedulingError, ValueError):
    """Instance data violates a structural invariant"""


class InfeasibleScheduleError(SchedulingError):
    """A schedule places a job on a machine where it is forbidden"""


class EnumerationLimitError(SchedulingError):
    """Brute force would enumerate more assignments than the configured cap"""

    def __init__(self, required, cap):
        self.required = required
        self.cap = cap
        super().__init__(
            f"Brute force needs {required} assignments to enumerate, which exceeds the cap of {cap}"
        )


class NonSymmetricMatrixError(SchedulingError, ValueError):
    """Eigenvalue routines only accept symmetric input"""


class InvalidSolutionError(SchedulingError):
    """A fractional solution does not fit the instance it is used with"""


class UnscaledInstanceError(SchedulingError):
    """Grouping requires the minimum positive processing time to be 1"""


class PipageInvariantError(SchedulingError):
    """Phase 2 of the rounding reached a state its invariants rule out"""
