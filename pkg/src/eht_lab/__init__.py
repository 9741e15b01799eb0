"""Episodic hypothesis-testing learning in finite normal-form games.

Simulation of the epoch-based learning rule plus exact analysis of the
Markov chain it induces: consistent states, resistances, stochastic
potentials and the stochastically stable set.
"""
from .game_core import (
    Game,
    UtilityTransform,
    action_utilities_vs_belief,
    epsilon_ne_gap,
    expected_utility,
    smooth_best_response,
    transform_utility,
    u_bar,
)
from .belief_space import (
    BeliefProfile,
    CapacityError,
    DiscretizedSimplex,
    StateSpace,
    br_image,
    enumerate_simplex,
    enumerate_states,
    nearest_grid_belief,
    product_distribution,
)

__version__ = "0.1.0"
