"""Team-optimal and person-by-person-optimal strategies for distributed
stochastic differential systems, computed by forward Monte Carlo simulation,
regression-based adjoint estimation, and conditional Hamiltonian minimization.
"""

from .baselines import (
    DiscreteTreeProblem,
    RiccatiSolution,
    TreeStrategy,
    enumerate_team_optimum,
    riccati_from_family,
    solve_riccati,
    verify_discrete_smp,
)
from .bsde import AdjointEnsemble, check_q_identity, solve_adjoint
from .condexp import FeatureMap, RegressionFit, fit_predict, information_features
from .hamiltonian import (
    ConditionalHamiltonianTable,
    GapReport,
    RelaxedControl,
    conditional_hamiltonian,
    hamiltonian,
    minimize_conditional,
    stationarity_gap,
)
from .model import (
    InformationStructure,
    ModelError,
    ModelFamily,
    SubsystemSpec,
    TeamProblem,
    build_problem,
    full_information,
    validate_assumptions,
)
from .optimize import (
    IterationRecord,
    PbpConfig,
    check_sufficiency,
    evaluate_cost,
    gateaux_identity_check,
    person_by_person_solve,
)
from .sde import (
    PathEnsemble,
    SimulationDiverged,
    TimeGrid,
    VariationalEnsemble,
    relaxed_coefficient,
    simulate_forward,
    simulate_variational,
)
from .strategies import StrategyProfile, initial_profile

__version__ = "0.1.0"
