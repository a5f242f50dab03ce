"""Financial contagion on cross-holding networks and budgeted bailouts."""

from .network import (EconomicNetwork, EquilibriumState, Mode, SingularSystemError,
                      apply_intervention, book_values, dependency_matrix, market_values,
                      reverse_cascade, solve_equilibrium, validate_network)
from .influence import (EmptyFailedSetError, InfluenceInstance, ThresholdKind, ThresholdModel,
                        influence, reduce_to_influence, sample_thresholds)
from .infmax import (ALGORITHMS, InstanceTooLargeError, InterventionPlan, PlanKind,
                     brute_force_optimum, calc_frac_cascade, calc_int_cascade,
                     discount_frac, discount_frac_cost_adjusted, estimate_sigma,
                     gamma_minus, gamma_plus, greedy_frac, greedy_int)
from .scenarios import (GadgetSpec, ShockSpec, apply_shock, build_is_gadget,
                        build_max_shock_gadget, find_max_shock, importance_weighted_batch,
                        max_independent_set_size, sample_shocks)
from .ingest import FormatOptions, IOTable, IOTableError, build_network, load_io_table, parse_io_table
from .metrics import StressReport, budget_sweep, export_histograms, tvar, write_report

__version__ = "0.1.0"
