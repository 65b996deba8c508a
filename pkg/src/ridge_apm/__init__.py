"""Ridge-regression adjusted plus-minus (APM) ratings for hockey shift logs."""

from .design import ColumnKind, DesignProblem, Partition, assemble, build_catalog, standardize
from .lambda_select import LambdaReport, SelectionConfig, select_lambda
from .rating import PlayerRating, ShootingPercentages, build_rating_table, compute_shooting_percentages
from .report import RunConfig, run_fit
from .shiftlog import ShiftRecord, Stat, parse_shift_log, partition, to_observations
from .solver import RidgeFit, SingularGramError, solve_ridge, standard_errors, vif

__version__ = "0.1.0"

__all__ = [
    "ColumnKind", "DesignProblem", "Partition", "assemble", "build_catalog", "standardize",
    "LambdaReport", "SelectionConfig", "select_lambda",
    "PlayerRating", "ShootingPercentages", "build_rating_table", "compute_shooting_percentages",
    "RunConfig", "run_fit",
    "ShiftRecord", "Stat", "parse_shift_log", "partition", "to_observations",
    "RidgeFit", "SingularGramError", "solve_ridge", "standard_errors", "vif",
]
