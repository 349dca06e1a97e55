from mcpilco.envs.cartpole import CartPoleParams, cartpole_step, derivatives, energy
from mcpilco.envs.costs import (
    COST_RANGES, COSTS, cost_ballplate, cost_cartpole_abs, cost_furuta, cost_pilco,
    furuta_barrier, make_cost, tip_distance_sq,
)
from mcpilco.envs.exploration import exploration_random, exploration_sum_of_sines

__all__ = [
    "CartPoleParams", "cartpole_step", "derivatives", "energy", "COSTS", "COST_RANGES",
    "cost_cartpole_abs", "cost_pilco", "cost_furuta", "cost_ballplate", "furuta_barrier",
    "make_cost", "tip_distance_sq", "exploration_random", "exploration_sum_of_sines",
]
