"""Indirect shooting for partially-affine optimal control with singular arcs.

Double precision is enabled in JAX on import.
"""

import jax

jax.config.update("jax_enable_x64", True)

from .exceptions import *  # noqa: E402,F401,F403
from .problem import (  # noqa: E402
    ControlDims,
    EndpointFunction,
    EndpointSpec,
    ProblemDef,
    VectorField,
    dynamics_eval,
    validate_problem,
)
from .hamiltonian import (  # noqa: E402
    HamiltonianDerivs,
    Multiplier,
    ddot_Hv,
    dot_Hv,
    hamiltonian,
    lie_bracket_x,
    udot_gamma,
)
from .elimination import EliminationResult, eliminate_controls, elimination_jacobian  # noqa: E402
from .benchmarks import Benchmark, catalog, instantiate, make_goh_probe  # noqa: E402
from .integrator import (  # noqa: E402
    Grid,
    Trajectory,
    integrate_extremal,
    integrate_linearized,
    integrate_state,
)
from .shooting import (  # noqa: E402
    ShootingSolver,
    ShootingVector,
    SolveReport,
    gauss_newton,
    observed_order,
    shooting_jacobian,
    shooting_residual,
)
from .goh import (  # noqa: E402
    Direction,
    GohMatrices,
    TransformedDirection,
    goh_matrices,
    goh_transform,
    map_ls_to_lqs,
    omega,
    omega_P,
    omega_P2,
)
from .ssc import (  # noqa: E402
    PointwiseReport,
    PositivityReport,
    SSCVerifier,
    pointwise_conditions,
    uniform_positivity,
)
from .report import read_report, write_report  # noqa: E402

__version__ = "0.1.0"
