__version__ = "0.1.0"

from solitonforge.exceptions import SolitonError, DomainError, ConvergenceError, KahlerConeError, SolverError
from solitonforge.config import ExperimentConfig, Tolerances, WeightSpec
from solitonforge.models import Grid, RadialMetric, SolitonProfile, AleProfile, GluedData, NewtonReport, RunRecord
from solitonforge.radial_soliton import solve_profile
from solitonforge.ale_model import calabi_profile
from solitonforge.glue import build_glued, glued_grid
from solitonforge.soliton_newton import newton_solve
from solitonforge.experiment_runner import ExperimentRunner, run, emit

__all__ = [
    'SolitonError',
    'DomainError',
    'ConvergenceError',
    'KahlerConeError',
    'SolverError',
    'ExperimentConfig',
    'Tolerances',
    'WeightSpec',
    'Grid',
    'RadialMetric',
    'SolitonProfile',
    'AleProfile',
    'GluedData',
    'NewtonReport',
    'RunRecord',
    'solve_profile',
    'calabi_profile',
    'build_glued',
    'glued_grid',
    'newton_solve',
    'ExperimentRunner',
    'run',
    'emit',
]
