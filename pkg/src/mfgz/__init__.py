"""Numerical solvers for two-player zero-sum games with law-dependent dynamics.

The state follows a McKean-Vlasov type ODE whose drift sees the law of the
state; values are functions of probability measures, represented throughout
as weighted particle ensembles.  The package provides Wasserstein transport
tools, particle propagation, lower/upper Hamiltonians, a monotone
finite-difference solver for the lifted HJI equations, and backward dynamic
programming with a brute-force strategy-enumeration oracle.
"""

__version__ = "0.1.0"

from .accel import NUMBA_ENABLED, backend_name
from .measures import (Coupling, EmpiricalMeasure, MeasureError,
                       QuantizationSpec, measure_feature, optimal_coupling,
                       quantize, wasserstein)
from .expr import Expression, ExpressionError, parse_expression
from .game import (ControlPath, DiscreteStrategy, GameError, GameSpec,
                   TargetedEnsemble, TimeMesh, control_grid,
                   eval_f, eval_l, eval_terminal_cost, load_config)
from .dynamics import (IntegratorConfig, ParticleState, check_estimates,
                       check_flow_property, objective_value, propagate,
                       running_cost_accumulate)
from .hamilton import (HamiltonianEval, hamiltonian_lower, hamiltonian_upper,
                       isaacs_check, lifted_hamiltonian)
from .calculus import (MeasureFunctional, chain_rule_check, gradient_fd_check,
                       lifted_gradient, lifted_value)
from .hji import (CflViolation, NumericFailure, SchemeConfig, SpatialGrid,
                  ValueField, comparison_check, solve, step_backward,
                  terminal_field)
from .dpp import (DppConfig, GameValueReport, GridExcursionError,
                  brute_force_value, cross_validate_vs_hji, dpp_residual,
                  dpp_value)
