"""Model-based policy search with GP dynamics and observer-in-the-loop particle rollouts."""

__version__ = "0.1.0"
