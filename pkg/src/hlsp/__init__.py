"""Hierarchical least-squares programs solved by a null-space interior point.

A problem is a stack of prioritized least-squares levels under linear
equality and inequality constraints. Levels are resolved in order; each
one is solved by a primal-dual Newton method projected into the null
space of everything already decided, so lower levels cannot disturb
higher ones.
"""

from .cascade import (
    CascadeState,
    InvalidProblemError,
    LevelReport,
    NullSpaceChain,
    SolveReport,
    hybrid_solve,
    solve_hlsp,
)
from .config import SolverConfig
from .fileio import ProblemFormatError, load_problem, save_problem
from .newton import MethodNotApplicable, ls_form_recommended
from .oracle import (
    OracleBudgetExceeded,
    brute_force_cascade,
    cascade_objectives,
    lexicographic_lsq_equality,
)
from .problem import (
    ConstraintBlock,
    HlspProblem,
    Level,
    random_hlsp,
    tag_bound_rows,
    validate_problem,
)

__version__ = "0.1.0"

__all__ = [
    "CascadeState",
    "ConstraintBlock",
    "HlspProblem",
    "InvalidProblemError",
    "Level",
    "LevelReport",
    "MethodNotApplicable",
    "NullSpaceChain",
    "OracleBudgetExceeded",
    "ProblemFormatError",
    "SolveReport",
    "SolverConfig",
    "brute_force_cascade",
    "cascade_objectives",
    "hybrid_solve",
    "lexicographic_lsq_equality",
    "load_problem",
    "ls_form_recommended",
    "random_hlsp",
    "save_problem",
    "solve_hlsp",
    "tag_bound_rows",
    "validate_problem",
]
