"""Ground-truth cart-pole plant.

The pole is a point mass at the tip of a massless rod. ``theta = 0`` hangs
straight down, the tip sits at ``(p + L sin(theta), -L cos(theta))`` and the
upright target is ``(0, L)``. The cart feels viscous friction ``-b * pdot``.
State layout: ``q = [p, theta]``, ``qdot = [pdot, thetadot]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CartPoleParams:
    cart_mass: float = 0.5
    pole_mass: float = 0.5
    length: float = 0.5
    friction: float = 0.1
    gravity: float = 9.81
    substep: float = 1e-3
    Ts: float = 1.0 / 30.0
    process_noise_std: float = 0.0

    def __post_init__(self):
        for name in ("cart_mass", "pole_mass", "length", "gravity", "substep", "Ts"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.friction < 0 or self.process_noise_std < 0:
            raise ValueError("friction and process noise must be non-negative")
        if self.substep > self.Ts:
            raise ValueError("substep must not exceed the control period")

    @property
    def n_substeps(self) -> int:
        return max(1, math.ceil(self.Ts / self.substep - 1e-9))


def derivatives(params: CartPoleParams, x: np.ndarray, force) -> np.ndarray:
    """Time derivative of ``x = [p, theta, pdot, thetadot]`` (batched along axis 0)."""
    p, th, pd, thd = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    m, mc, L, g = params.pole_mass, params.cart_mass, params.length, params.gravity
    s, c = np.sin(th), np.cos(th)
    pdd = (force - params.friction * pd + m * s * (L * thd**2 + g * c)) / (mc + m * s * s)
    thdd = -(c * pdd + g * s) / L
    return np.stack([pd, thd, pdd, thdd], axis=-1)


def energy(params: CartPoleParams, x: np.ndarray):
    p, th, pd, thd = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    m, mc, L, g = params.pole_mass, params.cart_mass, params.length, params.gravity
    kinetic = 0.5 * (mc + m) * pd**2 + m * L * np.cos(th) * pd * thd + 0.5 * m * L**2 * thd**2
    return kinetic - m * g * L * np.cos(th)


def cartpole_step(params: CartPoleParams, x, force, rng: np.random.Generator | None = None):
    """Advance ``[p, theta, pdot, thetadot]`` by one control period (zero-order hold, RK4)."""
    x = np.asarray(x, dtype=np.float64)
    force = np.asarray(force, dtype=np.float64)
    if not np.all(np.isfinite(force)):
        raise ValueError("force must be finite")
    n = params.n_substeps
    h = params.Ts / n
    for _ in range(n):
        k1 = derivatives(params, x, force)
        k2 = derivatives(params, x + 0.5 * h * k1, force)
        k3 = derivatives(params, x + 0.5 * h * k2, force)
        k4 = derivatives(params, x + h * k3, force)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if params.process_noise_std > 0.0:
        if rng is None:
            raise ValueError("process noise requires a random generator")
        x = x + params.process_noise_std * rng.standard_normal(x.shape)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("cart-pole state became non-finite")
    return x
