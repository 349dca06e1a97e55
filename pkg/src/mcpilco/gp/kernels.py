"""Covariance functions for the dynamics GPs.

All hyperparameters are stored as logarithms so that unconstrained gradient
steps keep them positive. Gram computations go through :mod:`mcpilco.core.ad`
so the same code serves plain evaluation, hyperparameter gradients (traced
log-parameters) and rollout gradients (traced inputs).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from mcpilco.core import ad
from mcpilco.core.ad import Var

_BASES: dict[str, Callable] = {}


def register_basis(name: str, fn: Callable | None = None):
    """Make a basis map available to the physically-inspired kernels by name.

    ``fn`` maps an ``(n, D)`` input array (possibly a ``Var``) to ``(n, d_phi)``
    features and must be written with :mod:`mcpilco.core.ad` primitives.
    """
    if fn is None:
        return lambda f: register_basis(name, f)
    _BASES[name] = fn
    return fn


@register_basis("linear")
def linear_basis(x):
    return x


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(x, dtype=np.float64))


class Kernel:
    """Base class. Subclasses fill ``params`` and define ``gram`` and ``diag``."""

    variant = "base"

    def __init__(self, input_dim: int, active_dims=None):
        self.input_dim = int(input_dim)
        self.active_dims = None if active_dims is None else [int(i) for i in active_dims]
        self.params: dict[str, np.ndarray] = {}

    @property
    def n_active(self) -> int:
        return self.input_dim if self.active_dims is None else len(self.active_dims)

    def _select(self, x):
        if self.active_dims is None:
            return x
        return x[:, self.active_dims]

    # parameter plumbing
    def param_vector(self) -> np.ndarray:
        if not self.params:
            return np.zeros(0)
        return np.concatenate([np.ravel(v) for v in self.params.values()])

    def unpack(self, vec) -> dict:
        """Split a flat (possibly traced) vector into named parameter blocks."""
        out, i = {}, 0
        for name, v in self.params.items():
            n = int(np.size(v))
            block = vec[i:i + n]
            out[name] = ad.reshape(block, np.shape(v)) if np.ndim(v) != 1 else block
            i += n
        return out

    def set_param_vector(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        for name, block in self.unpack(vec).items():
            self.params[name] = np.array(block, dtype=np.float64).reshape(np.shape(self.params[name]))

    @property
    def n_params(self) -> int:
        return int(self.param_vector().size)

    def __call__(self, a, b, params=None):
        a = np.atleast_2d(a) if not isinstance(a, Var) else a
        b = np.atleast_2d(b) if not isinstance(b, Var) else b
        for x in (a, b):
            if np.shape(ad.value(x))[-1] != self.input_dim:
                raise ValueError(f"expected inputs of dimension {self.input_dim}, "
                                 f"got {np.shape(ad.value(x))[-1]}")
        return self.gram(a, b, self.params if params is None else params)

    def diag_of(self, a, params=None):
        return self.diag(a, self.params if params is None else params)

    def init_from_data(self, x: np.ndarray, y: np.ndarray) -> None:
        pass

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "input_dim": self.input_dim,
            "active_dims": self.active_dims,
            "params": {k: np.asarray(v).tolist() for k, v in self.params.items()},
        }

    def copy(self) -> "Kernel":
        return kernel_from_dict(self.to_dict())


class SquaredExponential(Kernel):
    """``scale^2 * exp(-sum_i (a_i - b_i)^2 / lengthscale_i^2)``."""

    variant = "se"

    def __init__(self, input_dim, scale=1.0, lengthscales=1.0, active_dims=None):
        super().__init__(input_dim, active_dims)
        self.params["log_scale"] = _log(scale).reshape(())
        self.params["log_lengthscales"] = _log(np.broadcast_to(lengthscales, (self.n_active,))).copy()

    def gram(self, a, b, p):
        inv_ls = ad.exp(-p["log_lengthscales"])
        an = self._select(a) * inv_ls
        bn = self._select(b) * inv_ls
        sq = (ad.sum(an * an, axis=1).reshape(-1, 1)
              + ad.sum(bn * bn, axis=1).reshape(1, -1)
              - 2.0 * ad.matmul(an, ad.transpose(bn)))
        sq = ad.maximum(sq, 0.0)
        return ad.exp(2.0 * p["log_scale"] - sq)

    def diag(self, a, p):
        n = np.shape(ad.value(a))[0]
        return ad.exp(2.0 * p["log_scale"]) * np.ones(n)

    def init_from_data(self, x, y):
        ls = np.std(self._select(x), axis=0)
        ls = np.where(ls > 1e-8, ls, 1.0)
        var = float(np.var(y))
        self.params["log_lengthscales"] = np.log(ls)
        self.params["log_scale"] = np.array(0.5 * np.log(var if var > 1e-12 else 1.0))


class MultiplicativePolynomial(Kernel):
    """Product of ``degree`` linear kernels ``offset_r + a^T diag(s_r) b``."""

    variant = "mp"

    def __init__(self, input_dim, degree=1, offsets=1.0, diags=1.0, active_dims=None):
        super().__init__(input_dim, active_dims)
        self.degree = int(degree)
        if self.degree < 1:
            raise ValueError("polynomial degree must be >= 1")
        self.params["log_offsets"] = _log(np.broadcast_to(offsets, (self.degree,))).copy()
        self.params["log_diags"] = _log(np.broadcast_to(diags, (self.degree, self.n_active))).copy()

    def gram(self, a, b, p):
        a, b = self._select(a), self._select(b)
        out = None
        for r in range(self.degree):
            # scaling both sides by sqrt keeps k(a, b) == k(b, a) bit-exact
            rs = ad.exp(0.5 * p["log_diags"][r])
            factor = ad.exp(p["log_offsets"][r]) + ad.matmul(a * rs, ad.transpose(b * rs))
            out = factor if out is None else out * factor
        return out

    def diag(self, a, p):
        a = self._select(a)
        out = None
        for r in range(self.degree):
            s = ad.exp(p["log_diags"][r])
            factor = ad.exp(p["log_offsets"][r]) + ad.sum(a * a * s, axis=1)
            out = factor if out is None else out * factor
        return out

    def init_from_data(self, x, y):
        ms = np.mean(self._select(x) ** 2, axis=0)
        ms = np.where(ms > 1e-8, ms, 1.0)
        self.params["log_offsets"] = np.zeros(self.degree)
        self.params["log_diags"] = np.tile(-np.log(ms * self.n_active), (self.degree, 1))

    def to_dict(self):
        d = super().to_dict()
        d["degree"] = self.degree
        return d


class PhysicallyInspired(Kernel):
    """Linear kernel on basis features: ``phi(a)^T diag(sigma) phi(b)``."""

    variant = "pi"

    def __init__(self, input_dim, basis="linear", sigma=1.0, active_dims=None):
        super().__init__(input_dim, active_dims)
        if callable(basis):
            self.basis_name = getattr(basis, "__name__", "custom")
            self.basis = basis
        else:
            if basis not in _BASES:
                raise KeyError(f"unknown basis '{basis}'; register it first")
            self.basis_name = basis
            self.basis = _BASES[basis]
        n_features = np.shape(self.basis(np.zeros((1, self.n_active))))[1]
        self.params["log_sigma"] = _log(np.broadcast_to(sigma, (n_features,))).copy()

    def gram(self, a, b, p):
        rs = ad.exp(0.5 * p["log_sigma"])
        fa = self.basis(self._select(a))
        fb = self.basis(self._select(b))
        return ad.matmul(fa * rs, ad.transpose(fb * rs))

    def diag(self, a, p):
        s = ad.exp(p["log_sigma"])
        fa = self.basis(self._select(a))
        return ad.sum(fa * fa * s, axis=1)

    def init_from_data(self, x, y):
        f = np.asarray(self.basis(self._select(x)))
        ms = np.mean(f ** 2, axis=0)
        ms = np.where(ms > 1e-8, ms, 1.0)
        var = float(np.var(y))
        var = var if var > 1e-12 else 1.0
        self.params["log_sigma"] = np.log(var / (ms * f.shape[1]))

    def to_dict(self):
        d = super().to_dict()
        d["basis"] = self.basis_name
        return d


class SumKernel(Kernel):
    """Sum of component kernels; parameters are namespaced ``"<i>.<name>"``."""

    def __init__(self, parts: list, variant: str):
        super().__init__(parts[0].input_dim)
        self.parts = parts
        self.variant = variant
        self._sync_from_parts()

    def _sync_from_parts(self):
        self.params = {f"{i}.{k}": v for i, part in enumerate(self.parts)
                       for k, v in part.params.items()}

    def _split(self, p):
        return [{k: p[f"{i}.{k}"] for k in part.params} for i, part in enumerate(self.parts)]

    def set_param_vector(self, vec):
        super().set_param_vector(vec)
        for i, part in enumerate(self.parts):
            for k in part.params:
                part.params[k] = self.params[f"{i}.{k}"]

    def gram(self, a, b, p):
        out = None
        for part, pp in zip(self.parts, self._split(p)):
            g = part.gram(a, b, pp)
            out = g if out is None else out + g
        return out

    def diag(self, a, p):
        out = None
        for part, pp in zip(self.parts, self._split(p)):
            g = part.diag(a, pp)
            out = g if out is None else out + g
        return out

    def init_from_data(self, x, y):
        for part in self.parts:
            part.init_from_data(x, y)
        self._sync_from_parts()

    def to_dict(self):
        return {"variant": self.variant, "parts": [p.to_dict() for p in self.parts]}


def se_plus_poly(input_dim, degree=1, poly_dims=None, se_dims=None) -> SumKernel:
    return SumKernel([SquaredExponential(input_dim, active_dims=se_dims),
                      MultiplicativePolynomial(input_dim, degree, active_dims=poly_dims)],
                     variant=f"se+p{int(degree)}")


def semi_parametric(input_dim, basis="linear", pi_dims=None, se_dims=None) -> SumKernel:
    return SumKernel([PhysicallyInspired(input_dim, basis, active_dims=pi_dims),
                      SquaredExponential(input_dim, active_dims=se_dims)],
                     variant="sp")


def make_kernel(variant: str, input_dim: int, **opts) -> Kernel:
    """Build a kernel from its variant tag: ``se``, ``mp``, ``se+p``, ``pi``, ``sp``."""
    v = variant.lower()
    if v == "se":
        return SquaredExponential(input_dim, active_dims=opts.get("active_dims"))
    if v == "mp":
        return MultiplicativePolynomial(input_dim, opts.get("degree", 1),
                                        active_dims=opts.get("active_dims"))
    if v.startswith("se+p"):
        degree = int(v[4:]) if len(v) > 4 else opts.get("degree", 1)
        return se_plus_poly(input_dim, degree, opts.get("poly_dims"), opts.get("se_dims"))
    if v == "pi":
        return PhysicallyInspired(input_dim, opts.get("basis", "linear"),
                                  active_dims=opts.get("active_dims"))
    if v == "sp":
        return semi_parametric(input_dim, opts.get("basis", "linear"),
                               opts.get("pi_dims"), opts.get("se_dims"))
    raise ValueError(f"unknown kernel variant '{variant}'")


def kernel_from_dict(d: dict) -> Kernel:
    if "parts" in d:
        k = SumKernel([kernel_from_dict(p) for p in d["parts"]], d["variant"])
        return k
    variant = d["variant"]
    dim, dims = d["input_dim"], d["active_dims"]
    if variant == "se":
        k = SquaredExponential(dim, active_dims=dims)
    elif variant == "mp":
        k = MultiplicativePolynomial(dim, d["degree"], active_dims=dims)
    elif variant == "pi":
        k = PhysicallyInspired(dim, d["basis"], active_dims=dims)
    else:
        raise ValueError(f"unknown kernel variant '{variant}'")
    for name, v in d["params"].items():
        k.params[name] = np.array(v, dtype=np.float64).reshape(np.shape(k.params[name]))
    return k


def kernel_eval(kernel: Kernel, a, b) -> float:
    """Covariance between two single inputs."""
    a = np.asarray(a, dtype=np.float64).reshape(1, -1)
    b = np.asarray(b, dtype=np.float64).reshape(1, -1)
    return float(np.asarray(kernel(a, b))[0, 0])
