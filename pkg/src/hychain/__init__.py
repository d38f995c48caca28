"""hychain: chain control sets, hyperbolic splittings, shadowing, invariance entropy."""

__version__ = "0.1.0"

from .controls import (ControlFunction, ControlRange, convex_combination,
                       functionally_equal, random_piecewise, shift,
                       shrink_control_range, sup_norm_distance)
from .errors import (CenterDirectionError, EscapeError, InputRejectedError,
                     NewtonStagnationError, ToolkitError)
from .systems import (BoxDomain, ControlAffineSystem, Trajectory, TorusDomain,
                      eval_rhs, flow, integrate, make_system, variational_flow)
from .metric import (MetricConfig, TestFunctionFamily, delta_for_epsilon,
                     du_distance, make_test_family, sup_shift_distance,
                     tail_N_for_epsilon)
from .chains import (CellGraph, ChainControlSet, Equilibrium, LiftFiber, StateGrid,
                     build_transition_graph, chain_control_sets, equilibria, fiber,
                     isolated_check, make_grid)
from .splitting import (HyperbolicSplitting, estimate_splitting, principal_angle,
                        projection_commutation, unstable_log_determinant,
                        verify_rates)
from .shadowing import (PseudoOrbit, ShadowResult, fiber_transport, graph_verify,
                        homotopy_transport, is_pseudo_orbit, make_pseudo_orbit,
                        pseudo_from_orbit, shadow, uniqueness_check)
from .entropy import (AdmissiblePair, EntropyEstimate, SpanningCover, constant_pool,
                      entropy_sweep, exact_min_cover, greedy_cover, h_inv_direct,
                      h_inv_formula, make_admissible_pair, r_inv_estimate)

__all__ = [name for name in dir() if not name.startswith("_")]
