"""Equilibrium computation for congested networks with stochastic multipath routing.

Joint TCP-style rate control and Markovian routing settle into a unique
steady state that this package computes by minimizing a strictly convex dual
program in the link delays; a flow-level simulator of the corresponding
distributed protocol is validated against the exact solver.
"""

from .choice import DeterministicMin, Logit, check_choice_axioms, mc_oracle
from .equilibrium import (
    DualProgram,
    Equilibrium,
    NumSolution,
    SolverOptions,
    free_flow_tau0,
    phi_gradient,
    phi_objective,
    q_of_lambda,
    solve_mnum,
    solve_mte,
    solve_num_singlepath,
)
from .errors import (
    ConvergenceError,
    DomainError,
    LineSearchError,
    NetworkError,
    OracleUnavailableError,
)
from .network import (
    AffineLatency,
    Arc,
    MM1Latency,
    Network,
    PowerLawRate,
    Source,
    VegasRate,
    load_network,
    parse_network,
)
from .protocol import (
    ProtocolConfig,
    ProtocolResult,
    ProtocolState,
    estimate_tau0,
    protocol_residuals,
    router_update,
    run,
    source_update,
)
from .routing import (
    RoutingState,
    SupportDAG,
    TauSolution,
    aggregate_link_loads,
    build_supports,
    enumerate_paths,
    free_flow_distances,
    load_flows,
    path_logit_oracle,
    solve_tau,
)

__version__ = "0.1.0"
