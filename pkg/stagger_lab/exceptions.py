# stagger_lab/exceptions.py

from typing import Any, Dict, Optional


class StaggerLabError(Exception):
    """Base exception for all stagger-lab errors."""

    module = "stagger_lab"

    def __init__(self, message: str = "", details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "module": self.module,
            "message": self.message,
            "details": self.details,
        }


class ValidationError(StaggerLabError):
    """Exception raised when an argument fails validation."""
    pass


class ConfigurationError(StaggerLabError):
    """Exception raised when there's a configuration error."""
    module = "conf"


# ====== panel_core ======

class PanelError(StaggerLabError):
    """Base exception for panel construction errors."""
    module = "panel_core"


class DuplicateCell(PanelError):
    """A (unit, time) pair appears more than once."""
    pass


class NonMonotoneTreatment(PanelError):
    """A treatment path is not absorbing or contradicts the unit's cohort."""
    pass


class EmptyPanel(PanelError):
    """No usable rows or units."""
    pass


# ====== regression_kit ======

class RegressionError(StaggerLabError):
    """Base exception for the numerical kernel."""
    module = "regression_kit"


class EmptyDesign(RegressionError):
    """Design matrix has no rows or no columns."""
    pass


class NoConvergence(RegressionError):
    """An iterative routine hit its iteration cap."""
    pass


class SingleClass(RegressionError):
    """Binary labels contain only one class."""
    pass


class Infeasible(RegressionError):
    """The linear program has no feasible point."""
    pass


class Unbounded(RegressionError):
    """The linear program objective is unbounded."""
    pass


# ====== twfe_design ======

class TwfeError(StaggerLabError):
    """Base exception for event-study design errors."""
    module = "twfe_design"


class EmptyWindow(TwfeError):
    """The event window has no horizon besides the baseline."""
    pass


class RankZeroDesign(TwfeError):
    """The residualised event-time design has rank zero."""
    pass


class DroppedColumn(TwfeError):
    """The requested horizon was dropped as collinear or unsupported."""
    pass


# ====== diagnostics ======

class DiagnosticsError(StaggerLabError):
    """Base exception for design diagnostics."""
    module = "diagnostics"


class DegenerateVariance(DiagnosticsError):
    """A diagnostic index is constant across replications."""
    pass


# ====== group_time ======

class GroupTimeError(StaggerLabError):
    """Base exception for group-time estimation."""
    module = "group_time"


class EmptyControlSet(GroupTimeError):
    """No comparison units for a cohort-time cell."""
    pass


class PropensityOverlapFailure(GroupTimeError):
    """Estimated propensity reached the overlap clip."""
    pass


class NoCohortsAtHorizon(GroupTimeError):
    """No cohort has an estimated cell at the requested horizon."""
    pass


class DisconnectedUntreatedSample(GroupTimeError):
    """Untreated cells do not identify every unit and period effect."""
    pass


class GapInPath(GroupTimeError):
    """Event-time path is not contiguous from zero."""
    pass


# ====== orthogonal_scores ======

class OrthogonalScoreError(StaggerLabError):
    """Base exception for Riesz and debiased-score estimation."""
    module = "orthogonal_scores"


class OverlapFailure(OrthogonalScoreError):
    """Representer odds are unbounded on the evaluation sample."""
    pass


class FoldCohortStarvation(OrthogonalScoreError):
    """A fold or its complement misses the treated or never-treated cohort."""
    pass


# ====== sensitivity ======

class SensitivityError(StaggerLabError):
    """Base exception for sensitivity analysis."""
    module = "sensitivity"


class TooFewPrePeriods(SensitivityError):
    """Calibration needs at least two pre-period coefficients."""
    pass


class NoFeasibleB(SensitivityError):
    """No grid value satisfies the holdout rule."""
    pass


class EmptyGrid(SensitivityError):
    """A grid argument is empty."""
    pass


class MissingBaseline(SensitivityError):
    """The (0, 0, 0) baseline cell is absent."""
    pass


# ====== montecarlo ======

class MonteCarloError(StaggerLabError):
    """Base exception for simulation designs."""
    module = "montecarlo"


class UnsupportedSpec(MonteCarloError):
    """The operation does not apply to this design."""
    pass


class InsufficientPrePeriods(MonteCarloError):
    """Not enough pre-treatment periods for the requested test."""
    pass


class CellFailed(MonteCarloError):
    """A grid cell produced no metrics."""
    pass


# ====== cli_reports ======

class PipelineError(StaggerLabError):
    """Base exception for command orchestration."""
    module = "cli_reports"


class ConfigInvalid(PipelineError):
    """The run configuration fails validation."""
    pass


class InputNotFound(PipelineError):
    """An input path does not exist."""
    pass
