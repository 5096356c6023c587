"""Coupled traffic-flow and route-choice dynamics on acyclic road networks.

Densities evolve under link outflow laws and routing ratios; ratios evolve
under replicator dynamics driven by perceived costs to destination.
"""

from .network import (
    UNBOUNDED,
    PathSet,
    RoutingState,
    TrafficNetwork,
    build_network,
    check_feasible_routing,
    enumerate_paths,
    min_cut_capacity,
)
from .dynamics import (
    LinkParams,
    OutflowLaw,
    RatePolicy,
    TravelCostLaw,
    appeal,
    appeals,
    outflow,
    perceived_costs,
    reaction_rate,
    routing_rhs,
    traffic_rhs,
    travel_cost,
)
from .simulate import IntegratorConfig, SystemState, Trajectory, batch_integrate, integrate, renormalize_routing
from .equilibrium import (
    NoEquilibrium,
    classify_fixed_point,
    construct_equilibrium,
    equilibrium_exists,
    invert_outflow,
    path_flows,
    wardrop_check,
)
from .passivity import (
    detect_oscillation,
    passivity_audit,
    routing_storage,
    stability_probe,
    traffic_storage,
    two_link_invariant,
)
from .scenario import Scenario, load_scenario, save_scenario
from .builtins import builtin, builtin_names

__version__ = "0.1.0"
