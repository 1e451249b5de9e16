"""Desk-scale mean-field-game equilibrium solver.

Pipeline: controlled Fokker-Planck transport on a truncated grid,
occupation-measure best responses solved as linear programs, damped
fixed-point iteration over the population curve, and an exploitability
certificate for the returned equilibrium candidate.
"""

__version__ = "0.1.0"

from .best_response import (  # noqa: F401
    BestResponse,
    OccupationMeasure,
    evaluate_cost,
    feasibility_radius,
    project_markovian,
    resolve_and_compare,
    solve_lp,
)
from .catalog import CATALOG, example_catalog  # noqa: F401
from .coefficients import (  # noqa: F401
    CoefficientSet,
    ControlSet,
    LyapunovData,
    beta_vw,
    conjugate_fn,
    h_inverse,
    legendre,
)
from .equilibrium import (  # noqa: F401
    Certificate,
    EquilibriumResult,
    FixedPointConfig,
    apriori_sweep,
    certify,
    iterate,
    modulus_diagnostic,
)
from .errors import (  # noqa: F401
    BoundTooSmallError,
    DivergenceError,
    GridMismatchError,
    InfeasibleError,
    MFGError,
    NumericalError,
    SchemeError,
    StepSizeError,
    ValidationError,
)
from .fpk import (  # noqa: F401
    ControlField,
    DiscreteGenerator,
    SolveReport,
    apriori_monitor,
    build_generator,
    gronwall_monitor,
    solve_fpk,
    weak_residual,
)
from .grids import StateGrid, TimeGrid  # noqa: F401
from .hypotheses import CheckReport, HypothesisSuite, check_all  # noqa: F401
from .measures import (  # noqa: F401
    MeasureCurve,
    constant_curve,
    gaussian_law,
    mollify_curve,
    point_law,
    uniform_law,
)
from .particles import ParticleResult, simulate, superposition_gap  # noqa: F401
from .transport import (  # noqa: F401
    TransportPlan,
    kr_distance,
    kr_gap_curve,
    min_cost_plan,
    wasserstein_p,
    wasserstein_plan,
)
