"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class RicciError(Exception):
    """Base class for every error raised by this package."""


class DegenerateMetricError(RicciError):
    def __init__(self, point, ratio=None):
        self.point = point
        self.ratio = ratio
        super().__init__(f"degenerate metric at {point!r} (eigenvalue ratio {ratio})")


class SingularEvaluationError(RicciError):
    def __init__(self, point, stratum=None):
        self.point = point
        self.stratum = stratum
        super().__init__(
            f"evaluation at {point!r} lies inside the exclusion radius of {stratum!r} "
            "and no analytic closure is available"
        )


class ChartDegeneracyError(RicciError):
    def __init__(self, point):
        self.point = point
        super().__init__(f"non-invertible transition Jacobian at {point!r}")


class ChartMismatchError(RicciError):
    pass


class IntegrandFailureError(RicciError):
    def __init__(self, point):
        self.point = point
        super().__init__(f"integrand returned a non-finite value at {point!r}")


class TamenessViolationError(RicciError):
    """The integrability diagnostic found diverging shell sums."""

    def __init__(self, verdict, message="connection is not tame on the test supports"):
        self.verdict = verdict
        super().__init__(message)


class OracleIneligibleError(RicciError):
    pass


class SliceTamenessError(RicciError):
    def __init__(self, time, verdict):
        self.time = time
        self.verdict = verdict
        super().__init__(f"metric slice at t={time} is not tame")


class ConfigError(RicciError):
    def __init__(self, key_path, message):
        self.key_path = key_path
        super().__init__(f"config error at '{key_path}': {message}")


class UnknownScenarioError(RicciError):
    pass
