from mcpilco.core import ad
from mcpilco.core.ad import NonFiniteError, Tape, UnsupportedPrimitiveError, Var, differentiate
from mcpilco.core.optim import AdamState, adam_step
from mcpilco.core.rng import Seed, as_seed, draw_standard_normal, draw_uniform
from mcpilco.core.types import State, as_control

__all__ = [
    "ad", "Tape", "Var", "differentiate", "NonFiniteError", "UnsupportedPrimitiveError",
    "AdamState", "adam_step", "Seed", "as_seed", "draw_standard_normal", "draw_uniform",
    "State", "as_control",
]
