"""Domain containers shared across modules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mcpilco.core.ad import Var


def _check(name, x):
    if isinstance(x, Var):
        x = x.value
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite components")


@dataclass
class State:
    """Positions and velocities of a mechanical system.

    The arrays may carry a leading batch axis (one row per particle) and may
    be traced ``Var`` objects inside a rollout.
    """

    q: object
    qdot: object

    def __post_init__(self):
        if not isinstance(self.q, Var):
            self.q = np.asarray(self.q, dtype=np.float64)
        if not isinstance(self.qdot, Var):
            self.qdot = np.asarray(self.qdot, dtype=np.float64)
        if np.shape(self.q.value if isinstance(self.q, Var) else self.q) != \
                np.shape(self.qdot.value if isinstance(self.qdot, Var) else self.qdot):
            raise ValueError("q and qdot must have identical shapes")
        if self.dq < 1:
            raise ValueError("state needs at least one coordinate")
        _check("q", self.q)
        _check("qdot", self.qdot)

    @property
    def dq(self) -> int:
        return np.shape(self.q.value if isinstance(self.q, Var) else self.q)[-1]

    def as_vector(self) -> np.ndarray:
        """Plain ``[q, qdot]`` concatenation along the last axis."""
        q = self.q.value if isinstance(self.q, Var) else self.q
        qd = self.qdot.value if isinstance(self.qdot, Var) else self.qdot
        return np.concatenate([q, qd], axis=-1)

    @classmethod
    def from_vector(cls, x) -> "State":
        x = np.asarray(x, dtype=np.float64)
        d = x.shape[-1] // 2
        return cls(x[..., :d], x[..., d:])


def as_control(u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if u.shape[-1] < 1:
        raise ValueError("control needs at least one component")
    _check("u", u)
    return u
