"""Low-rank geometric mean metric learning on the Grassmann manifold."""

from .spd import (
    EigenPair,
    as_spd,
    health,
    riemannian_distance_sq,
    spd_logm,
    spd_power,
    sym_eig,
    weighted_geometric_mean,
)
from .grassmann import project_tangent, random_point, retract, tangent_inner, transport
from .solver import Problem, SolverOptions, SolverTrace, minimize
from .objective import (
    GRADIENT_SCALE,
    MetricModel,
    PairScatter,
    build_scatter,
    cost,
    egrad,
    gmml_closed_form,
    inner_solution,
    make_problem,
    project_scatter,
    trace_cost,
)

__version__ = "0.1.0"
