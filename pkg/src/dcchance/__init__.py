"""Data-driven chance constrained programs solved as DC programs."""

from .model import (
    AffineMap, ChanceProblem, ConvexFunction, DcObjective, InstanceFormatError,
    InvalidInputError, Polyhedron, ScenarioModel, in_sample_probability, load_instance,
    save_instance,
)
from .quantile import DcSplit, compute_M, gh_values, kernel_weights, l1_weights, subgrad_H, top_sum
from .qpsolver import QpConfig, QuadraticProgram, qp_solve
from .reform import DcProgram, check_feasibility, reformulate_cardinality, reformulate_chance
from .pdca import SolverConfig, beta_schedule, kkt_report, pdca_solve
from .baselines import cvar_solve, saa_oracle
from .solve import solve_chance

__version__ = "0.1.0"
