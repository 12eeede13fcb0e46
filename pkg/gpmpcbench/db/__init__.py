"""Results database entry point"""

from ._v1 import SimulationRun, TrialResult
from ._base import ResultsBase, open_database

from . import version, startup, runs
