"""Exception and warning types raised across panelvar."""


class PanelVarError(Exception):
    """Base class for all panelvar errors."""


class MissingDay(PanelVarError):
    def __init__(self, asset, day):
        self.asset = asset
        self.day = day
        super().__init__(f"asset {asset!r} has no observations on {day}")


class InsufficientObservations(PanelVarError):
    pass


class GridMismatch(PanelVarError):
    pass


class DegenerateVariance(PanelVarError):
    def __init__(self, asset, value):
        self.asset = asset
        self.value = value
        super().__init__(f"non-positive variance {value!r} for asset {asset!r}")


class RankDeficient(PanelVarError):
    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"design is rank deficient at column {column!r}")


class SolverFailure(PanelVarError):
    def __init__(self, gap, iterations):
        self.gap = gap
        self.iterations = iterations
        super().__init__(
            f"interior point did not converge after {iterations} iterations (gap={gap:.3e})"
        )


class BootstrapDegenerate(PanelVarError):
    pass


class AlignmentError(PanelVarError):
    pass


class NumericalPSDError(PanelVarError):
    pass


class CorrelationError(PanelVarError):
    pass


class IdenticalForecasts(PanelVarError):
    pass


class SingularXi(PanelVarError):
    pass


class DegenerateAsset(PanelVarError):
    pass


class TargetInfeasible(PanelVarError):
    pass


class CholeskyError(PanelVarError):
    pass


class ConfigError(PanelVarError):
    pass


class DegenerateCutoff(UserWarning):
    """Normal cut-off is zero at the median, so the parametric VaR collapses to 0."""


class SeparationFallback(UserWarning):
    """Logistic MLE hit (quasi-)separation; a ridge-penalised fit was used instead."""
