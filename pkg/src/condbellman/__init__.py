"""Conditional dynamic programming on finite scenario trees.

Backward recursions y_t(x) = max_{z in Theta_t(x)} u_t(x, y_{t+1}(v_t(x, z)), z)
over F_t-stable state and control sets, with the checks that make the
recursion well posed, a risk-sharing closed form and finite random sets.
"""
from .conditional import ConditionalValue, check_stability, concatenate, metric
from .controls import (BoxSet, ExplicitGridSet, RiskConstrainedSet, UpperLevelSet,
                       bounding_radius, check_c4_surrogate, discretize, is_feasible)
from .generators import (Additive, EntropicWealthDependent, ScalingFamily, TerminalExpUtility,
                         TerminalIdentity, WealthDynamics, check_generator_conditions,
                         estimate_K, evaluate_backward, evaluate_forward)
from .risk import ConditionalRiskMeasure, check_axioms
from .solver import (GridConfig, Problem, brute_force_value, extract_policy, refinement,
                     solve_backward, verify_k_bound)
from .tree import ScenarioTree, StagePartition, binomial, random_tree, trinomial

__version__ = "0.1.0"
