# stagger_lab/constants.py

import math
from enum import Enum

# Adoption time of never-treated units. Compare with ``is_never`` rather than
# ``==`` so that not-yet-treated logic stays explicit.
NEVER = math.inf


def is_never(cohort) -> bool:
    return cohort == NEVER


class ChoiceEnum(str, Enum):
    """String-valued enum that parses its own values."""

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            choices = ", ".join(member.value for member in cls)
            raise ValueError(f"{value!r} is not one of: {choices}") from None

    def __str__(self):
        return self.value


class ControlKind(ChoiceEnum):
    """
    Enum for comparison groups of a cohort-time cell.
    """
    NEVER_TREATED = "never-treated"
    NOT_YET_TREATED = "not-yet-treated"


class AggregationKind(ChoiceEnum):
    """
    Enum for convex cohort weights at an event time.
    """
    SAMPLE_SHARE = "sample-share"
    POPULATION_SHARE = "population-share"
    EXPOSURE = "exposure"


class EstimatorKind(ChoiceEnum):
    """
    Enum for point estimators run by the pipeline and the harness.
    """
    TWFE = "twfe"
    GROUP_TIME = "group-time"
    DR_CROSSFIT = "dr-crossfit"
    IMPUTATION = "imputation"

    @classmethod
    def get_cell_estimators(cls):
        return [cls.GROUP_TIME, cls.DR_CROSSFIT]


class RestrictionKind(ChoiceEnum):
    """
    Enum for restriction classes over deviation paths.
    """
    CURVATURE_BOUNDED = "curvature-bounded"
    BIAS_BOUND_SCALAR = "bias-bound-scalar"


class ScoreKind(ChoiceEnum):
    """
    Enum for moment functions evaluated by the orthogonality check.
    """
    ORTHOGONAL = "orthogonal"
    PLUG_IN = "plug-in"


class OptimizationSense(ChoiceEnum):
    MIN = "min"
    MAX = "max"


class ConstraintSense(ChoiceEnum):
    LE = "<="
    EQ = "=="
    GE = ">="


class Design(ChoiceEnum):
    """
    Enum for simulation designs.
    """
    MC81_DGP1 = "mc81-dgp1"
    MC81_DGP2 = "mc81-dgp2"
    MC81_DGP3 = "mc81-dgp3"
    MC84_SMALL = "mc84-small"
    MC85_CONFOUNDED = "mc85-confounded"

    @classmethod
    def get_mc81_designs(cls):
        return [cls.MC81_DGP1, cls.MC81_DGP2, cls.MC81_DGP3]


class PlaceboVariant(ChoiceEnum):
    """
    Enum for pre-trend placebo tests.
    """
    MC84_MEANS = "mc84-means"
    MC81_WALD = "mc81-wald"


class Command(ChoiceEnum):
    """
    Enum for pipeline subcommands.
    """
    DIAGNOSE = "diagnose"
    ESTIMATE = "estimate"
    SENSITIVITY = "sensitivity"
    CALIBRATE = "calibrate"
    SIMULATE = "simulate"
    FRONTIER = "frontier"


# Critical value fixed for 95% intervals and the placebo rule.
Z_975 = 1.96

PLACEBO_ALPHAS = (0.10, 0.05, 0.01)
