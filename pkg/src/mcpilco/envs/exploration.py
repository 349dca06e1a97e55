"""Open-loop excitation signals for the first trial."""

from __future__ import annotations

import numpy as np

from mcpilco.core.rng import as_seed


def exploration_random(u_max, T: int, seed=0) -> np.ndarray:
    """I.i.d. ``U(-u_max, u_max)`` per step, shape ``(T, d_u)``."""
    u_max = np.atleast_1d(np.asarray(u_max, dtype=np.float64))
    return as_seed(seed).generator().uniform(-u_max, u_max, size=(T, u_max.size))


def draw_sine_components(n_waves: int, seed=0, band=(0.1, 3.0)):
    rng = as_seed(seed).generator()
    freqs = rng.uniform(band[0], band[1], n_waves)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_waves)
    return freqs, phases


def exploration_sum_of_sines(amplitude: float, T: int, Ts: float, n_waves: int = 10, seed=0,
                             u_max=None, band=(0.1, 3.0)) -> np.ndarray:
    """Sum of equal-amplitude sines with random frequencies and phases, shape ``(T, 1)``."""
    freqs, phases = draw_sine_components(n_waves, seed, band)
    t = np.arange(T) * Ts
    u = amplitude * np.sin(2.0 * np.pi * freqs[None, :] * t[:, None] + phases[None, :]).sum(axis=1)
    if u_max is not None:
        u = np.clip(u, -u_max, u_max)
    return u.reshape(T, 1)
