"""Squashed RBF-network policy.

``u = u_max * tanh(sum_i w_i * exp(-||a_i - z||^2_{Sigma^-1}) / u_max)`` with
Gaussian basis functions of diagonal shape ``Sigma`` (stored as its log).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mcpilco.core import ad
from mcpilco.core.rng import as_seed

FORMAT = "mcpilco.policy/1"
# tanh rounds to exactly 1.0 for large arguments; this keeps |u| < u_max
_SQUASH_LIMIT = 1.0 - 1e-15


@dataclass
class RbfPolicy:
    weights: object     # (n_b, d_u)
    centers: object     # (n_b, d_z)
    log_shape: object   # (d_z,)
    u_max: np.ndarray   # (d_u,)

    def __post_init__(self):
        self.u_max = np.atleast_1d(np.asarray(self.u_max, dtype=np.float64))
        if np.any(self.u_max <= 0):
            raise ValueError("u_max must be positive")

    @property
    def n_basis(self) -> int:
        return np.shape(ad.value(self.centers))[0]

    @property
    def d_z(self) -> int:
        return np.shape(ad.value(self.centers))[1]

    @property
    def d_u(self) -> int:
        return self.u_max.shape[0]

    @property
    def n_params(self) -> int:
        return self.n_basis * (self.d_u + self.d_z) + self.d_z

    @classmethod
    def initialize(cls, n_basis: int, d_z: int, d_u: int, u_max, center_low, center_high,
                   seed=0, weight_std=None, lengthscale=None) -> "RbfPolicy":
        """Uniform centers in the box and ``N(0, weight_std^2)`` weights.

        ``weight_std`` defaults to ``u_max / 10``; basis lengthscales default
        to the half-width of the center box in each dimension.
        """
        lo = np.broadcast_to(np.asarray(center_low, dtype=np.float64), (d_z,))
        hi = np.broadcast_to(np.asarray(center_high, dtype=np.float64), (d_z,))
        if np.any(hi <= lo):
            raise ValueError("center range must have positive width in every dimension")
        u_max = np.broadcast_to(np.asarray(u_max, dtype=np.float64), (d_u,)).copy()
        rng = as_seed(seed).generator()
        centers = rng.uniform(lo, hi, size=(n_basis, d_z))
        std = u_max / 10.0 if weight_std is None else np.broadcast_to(np.asarray(weight_std, float), (d_u,))
        weights = rng.standard_normal((n_basis, d_u)) * std
        ls = (hi - lo) / 2.0 if lengthscale is None else np.broadcast_to(np.asarray(lengthscale, float), (d_z,))
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be positive")
        return cls(weights, centers, 2.0 * np.log(ls), u_max)

    def __call__(self, z):
        return evaluate(self, z)

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.ravel(ad.value(self.weights)), np.ravel(ad.value(self.centers)),
                               np.ravel(ad.value(self.log_shape))])

    def unflatten(self, vec) -> "RbfPolicy":
        """Policy with fields sliced from ``vec`` (which may be a traced Var)."""
        nb, du, dz = self.n_basis, self.d_u, self.d_z
        if np.shape(ad.value(vec)) != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {np.shape(ad.value(vec))}")
        i, j = nb * du, nb * du + nb * dz
        w = ad.reshape(vec[:i], (nb, du))
        a = ad.reshape(vec[i:j], (nb, dz))
        s = vec[j:]
        if not isinstance(vec, ad.Var):
            w, a, s = np.array(w), np.array(a), np.array(s)
        return RbfPolicy(w, a, s, self.u_max)

    def to_dict(self) -> dict:
        return {"format": FORMAT,
                "weights": np.asarray(ad.value(self.weights)).tolist(),
                "centers": np.asarray(ad.value(self.centers)).tolist(),
                "log_shape": np.asarray(ad.value(self.log_shape)).tolist(),
                "u_max": self.u_max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RbfPolicy":
        if d.get("format") != FORMAT:
            raise ValueError(f"not a policy blob: format={d.get('format')!r}")
        return cls(np.array(d["weights"], dtype=np.float64).reshape(len(d["weights"]), -1),
                   np.array(d["centers"], dtype=np.float64).reshape(len(d["centers"]), -1),
                   np.array(d["log_shape"], dtype=np.float64), d["u_max"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "RbfPolicy":
        return cls.from_dict(json.loads(Path(path).read_text()))


def basis_activations(policy: RbfPolicy, z):
    """``exp(-sum_k (z_k - a_ik)^2 / Sigma_k)`` for a batch ``z`` of shape ``(M, d_z)``."""
    inv_sd = ad.exp(-0.5 * policy.log_shape)
    zs = z * inv_sd
    cs = policy.centers * inv_sd
    sq = (ad.sum(zs * zs, axis=1).reshape(-1, 1) + ad.sum(cs * cs, axis=1).reshape(1, -1)
          - 2.0 * ad.matmul(zs, ad.transpose(cs)))
    return ad.exp(-ad.maximum(sq, 0.0))


def evaluate(policy: RbfPolicy, z, keep=None):
    """Control for one input ``(d_z,)`` or a batch ``(M, d_z)``.

    ``keep`` optionally scales the basis activations (``(M, n_b)`` dropout mask).
    """
    single = np.ndim(ad.value(z)) == 1
    if single:
        z = ad.reshape(z, (1, -1))
    phi = basis_activations(policy, z)
    if keep is not None:
        phi = phi * keep
    act = ad.matmul(phi, policy.weights)
    squashed = ad.clip(ad.tanh(act / policy.u_max), -_SQUASH_LIMIT, _SQUASH_LIMIT)
    u = policy.u_max * squashed
    return ad.reshape(u, (-1,)) if single else u


def flatten_params(policy: RbfPolicy) -> np.ndarray:
    return policy.flatten()


def unflatten_params(policy: RbfPolicy, vec) -> RbfPolicy:
    return policy.unflatten(vec)
