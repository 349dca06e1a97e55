"""Saturating cost functions on ``(q, qdot)`` batches; Var-aware."""

from __future__ import annotations

import math

from mcpilco.core import ad

_PI = math.pi


def _col(q, i):
    return q[..., i]


def cost_cartpole_abs(q, qdot, l_theta=3.0, l_p=1.0):
    """``1 - exp(-((|theta| - pi)/l_theta)^2 - (p/l_p)^2)``; ``q = [p, theta]``."""
    p, th = _col(q, 0), _col(q, 1)
    e = ((ad.abs(th) - _PI) / l_theta) ** 2 + (p / l_p) ** 2
    return 1.0 - ad.exp(-e)


def tip_distance_sq(q, length=0.5):
    p, th = _col(q, 0), _col(q, 1)
    return p * p + 2.0 * length * p * ad.sin(th) + 2.0 * length**2 * (1.0 + ad.cos(th))


def cost_pilco(q, qdot, length=0.5):
    """Tip-to-target distance cost ``1 - exp(-d^2 / (2 * 0.25^2))``."""
    return 1.0 - ad.exp(-0.5 * tip_distance_sq(q, length) / 0.25**2)


def furuta_barrier(theta_h):
    """Two sigmoids penalizing arm angles beyond +-3/4 pi."""
    lim = 0.75 * _PI
    return ad.sigmoid(10.0 * (-lim - theta_h)) + ad.sigmoid(10.0 * (theta_h - lim))


def cost_furuta(q, qdot):
    """``q = [theta_h, theta_v]``: arm at 0, pendulum at +-pi, plus the arm barrier."""
    th_h, th_v = _col(q, 0), _col(q, 1)
    e = (th_h / 2.0) ** 2 + ((ad.abs(th_v) - _PI) / 2.0) ** 2
    return 1.0 - ad.exp(-e) + furuta_barrier(th_h)


def cost_ballplate(q, qdot):
    """``q = [b_x, b_y, theta_1, theta_2]``: ball at the center of a level plate."""
    bx, by, t1, t2 = _col(q, 0), _col(q, 1), _col(q, 2), _col(q, 3)
    g = (bx / 0.15) ** 2 + (by / 0.15) ** 2 + t1 * t1 + t2 * t2
    return 1.0 - ad.exp(-g)


COSTS = {
    "cartpole_abs": cost_cartpole_abs,
    "pilco": cost_pilco,
    "furuta": cost_furuta,
    "ballplate": cost_ballplate,
}

# attainable range per variant, used by range checks
COST_RANGES = {
    "cartpole_abs": (0.0, 1.0),
    "pilco": (0.0, 1.0),
    "furuta": (0.0, 3.0),
    "ballplate": (0.0, 1.0),
}


def make_cost(variant: str, **consts):
    if variant not in COSTS:
        raise ValueError(f"unknown cost variant '{variant}'")
    fn = COSTS[variant]
    if not consts:
        return fn

    def cost(q, qdot):
        return fn(q, qdot, **consts)
    cost.__name__ = f"{variant}_cost"
    return cost
