"""Exact zero-mean GP regression with a cached Cholesky factor."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve as _cho_solve
from scipy.linalg import solve_triangular

from mcpilco.core import ad
from mcpilco.core.ad import NonFiniteError, Tape, Var
from mcpilco.core.optim import AdamState, adam_step
from mcpilco.gp.kernels import Kernel, kernel_from_dict

log = logging.getLogger(__name__)

FORMAT = "mcpilco.gp/1"
JITTER_START = 1e-10
JITTER_MAX = 1e-6
# floor used when a sampled posterior standard deviation is needed
VARIANCE_FLOOR = 1e-12


class GpFitError(np.linalg.LinAlgError):
    pass


class NotFittedError(RuntimeError):
    pass


def _cholesky_with_jitter(k: np.ndarray):
    """Return ``(L, jitter)``.

    The plain factorization is tried first; on failure a jitter climbs x10
    from 1e-10 to 1e-6 times trace/n.
    """
    n = k.shape[0]
    try:
        return np.linalg.cholesky(k), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = max(np.trace(k) / n, 1e-300)
    jitter = JITTER_START * scale
    while jitter <= JITTER_MAX * scale * (1 + 1e-9):
        try:
            return np.linalg.cholesky(k + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise GpFitError(f"Cholesky failed with jitter up to {JITTER_MAX:g} * trace/n")


@dataclass
class HyperOptReport:
    initial_lml: float
    final_lml: float
    iters: int
    diverged: bool = False
    history: list = field(default_factory=list)


class GaussianProcess:
    """One scalar-output GP.

    Parameters
    ----------
    kernel : Kernel
        Covariance function; its log-hyperparameters are trained in place.
    inputs : (n, D) array
    targets : (n,) array
    noise_var : float, optional
        Observation noise variance. Defaults to 1% of the target variance.
    """

    def __init__(self, kernel: Kernel, inputs, targets, noise_var=None, noise_floor=1e-8):
        x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        y = np.asarray(targets, dtype=np.float64).ravel()
        if x.shape[0] != y.shape[0]:
            raise ValueError("inputs and targets disagree on the number of rows")
        if x.shape[0] < 1:
            raise ValueError("need at least one training point")
        if x.shape[1] != kernel.input_dim:
            raise ValueError(f"kernel expects dimension {kernel.input_dim}, inputs have {x.shape[1]}")
        self.kernel = kernel
        self.x = x
        self.y = y
        if noise_var is None:
            var = float(np.var(y))
            noise_var = 0.01 * var if var > 1e-12 else 1e-4
        with np.errstate(divide="ignore"):
            self.log_noise = float(np.log(noise_var))
        self.noise_floor = noise_floor
        self.L = None
        self.alpha = None
        self.jitter = None
        self.negative_variance_count = 0

    @classmethod
    def from_data(cls, kernel: Kernel, inputs, targets, **kw) -> "GaussianProcess":
        """Build a model whose kernel starts from data-scaled hyperparameters."""
        x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        y = np.asarray(targets, dtype=np.float64).ravel()
        kernel.init_from_data(x, y)
        return cls(kernel, x, y, **kw)

    @property
    def noise_var(self) -> float:
        return math.exp(self.log_noise)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def fitted(self) -> bool:
        return self.L is not None

    def hyper_vector(self) -> np.ndarray:
        return np.append(self.kernel.param_vector(), self.log_noise)

    def set_hyper_vector(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        self.kernel.set_param_vector(vec[:-1])
        self.log_noise = float(vec[-1])
        self.L = self.alpha = None

    def _noisy_gram(self) -> np.ndarray:
        k = np.asarray(self.kernel(self.x, self.x))
        return k + self.noise_var * np.eye(self.n)

    def fit(self) -> "GaussianProcess":
        self.L, self.jitter = _cholesky_with_jitter(self._noisy_gram())
        self.alpha = _cho_solve((self.L, True), self.y)
        return self

    def _require_fit(self):
        if not self.fitted:
            raise NotFittedError("call fit() before querying the posterior")

    # prediction
    def predict(self, x):
        """Posterior mean and latent variance at a batch of inputs (Var-aware).

        Negative variances from round-off are clamped at zero and counted in
        ``negative_variance_count``.
        """
        self._require_fit()
        ks = self.kernel(x, self.x)
        mean = ad.matmul(ks, self.alpha)
        v = ad.solve_triangular(self.L, ad.transpose(ks), lower=True)
        var = self.kernel.diag_of(x) - ad.sum(v * v, axis=0)
        neg = int(np.sum(ad.value(var) < 0.0))
        if neg:
            self.negative_variance_count += neg
            var = ad.maximum(var, 0.0)
        return mean, var

    def posterior(self, x):
        """Mean and variance as plain floats (single input) or arrays (batch)."""
        single = np.ndim(x) == 1
        mean, var = self.predict(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        if single:
            return float(mean[0]), float(var[0])
        return np.asarray(mean), np.asarray(var)

    def sample(self, x, eps, fused=None):
        """Reparametrized draw ``mean + sqrt(var) * eps``, differentiable in ``x``.

        For the SE kernel on a traced batch the draw is one fused primitive
        (``fused=None`` picks it automatically); ``fused=False`` forces the
        composite path, which serves as its reference.
        """
        single = not isinstance(x, Var) and np.ndim(x) == 1
        if single:
            x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if fused is None:
            fused = isinstance(x, Var) and self.kernel.variant == "se"
        if fused:
            return self._sample_se(x, eps)
        mean, var = self.predict(x)
        out = mean + ad.sqrt(ad.maximum(var, VARIANCE_FLOOR)) * eps
        return float(np.asarray(out)[0]) if single else out

    def _sample_se(self, x, eps):
        self._require_fit()
        k = self.kernel
        inv_ls = np.exp(-k.params["log_lengthscales"])
        lam2 = float(np.exp(2.0 * k.params["log_scale"]))
        xv = ad.value(x)
        an = k._select(xv) * inv_ls
        bn = k._select(self.x) * inv_ls
        sq = np.sum(an * an, axis=1)[:, None] + np.sum(bn * bn, axis=1)[None, :] - 2.0 * an @ bn.T
        sq_mask = sq >= 0.0
        ks = np.exp(np.log(lam2) - np.where(sq_mask, sq, 0.0))
        mean = ks @ self.alpha
        v = solve_triangular(self.L, ks.T, lower=True, check_finite=False)
        var = lam2 - np.sum(v * v, axis=0)
        neg = int(np.sum(var < 0.0))
        if neg:
            self.negative_variance_count += neg
        var_mask = var >= VARIANCE_FLOOR
        sd = np.sqrt(np.where(var_mask, var, VARIANCE_FLOOR))
        eps = np.asarray(eps, dtype=np.float64)
        out = mean + sd * eps
        if not isinstance(x, Var):
            return out

        def vjp(g):
            g_var = np.where(var_mask, g * eps * 0.5 / sd, 0.0)
            w = solve_triangular(self.L, v, lower=True, trans="T", check_finite=False)  # K^-1 ks^T
            g_ks = g[:, None] * self.alpha[None, :] - 2.0 * g_var[:, None] * w.T
            g_sq = np.where(sq_mask, -g_ks * ks, 0.0)
            g_an = 2.0 * an * np.sum(g_sq, axis=1)[:, None] - 2.0 * g_sq @ bn
            g_sel = g_an * inv_ls
            if k.active_dims is None:
                return g_sel
            gx = np.zeros_like(xv)
            np.add.at(gx, (slice(None), k.active_dims), g_sel)
            return gx
        return ad.custom("gp_sample_se", out, [x], [vjp])

    # marginal likelihood
    def log_marginal_likelihood(self) -> float:
        if not self.fitted:
            self.fit()
        return float(-0.5 * self.y @ self.alpha - np.sum(np.log(np.diag(self.L)))
                     - 0.5 * self.n * math.log(2.0 * math.pi))

    def lml_and_grad(self):
        """LML and its gradient w.r.t. ``hyper_vector()`` (log-space)."""
        tape = Tape()
        theta = tape.variable(self.hyper_vector())
        params = self.kernel.unpack(theta[:-1])
        k = self.kernel.gram(self.x, self.x, params)
        ky = k + ad.exp(theta[-1]) * np.eye(self.n)
        L, jitter = _cholesky_with_jitter(ad.value(ky))
        alpha = _cho_solve((L, True), self.y)
        lml = (-0.5 * self.y @ alpha - np.sum(np.log(np.diag(L)))
               - 0.5 * self.n * math.log(2.0 * math.pi))
        kinv = _cho_solve((L, True), np.eye(self.n))
        # dLML/dKy = (alpha alpha^T - Ky^-1) / 2
        seed = 0.5 * (np.outer(alpha, alpha) - kinv)
        grad = tape.gradient(ky, theta, seed=seed)
        return float(lml), grad

    def optimize_hyperparameters(self, iters: int = 1500, lr: float = 0.01) -> HyperOptReport:
        """Maximize the LML with Adam on log-hyperparameters.

        The best iterate seen is kept, so the returned LML never falls below
        the starting one. A non-finite LML stops the run and restores it.
        """
        if self.n < 2 and iters > 0:
            raise ValueError("hyperparameter optimization needs at least two points")
        start = self.hyper_vector()
        if iters <= 0:
            self.fit()
            lml = self.log_marginal_likelihood()
            return HyperOptReport(lml, lml, 0)
        floor = math.log(self.noise_floor)
        state = AdamState.zeros(start.size, lr=lr)
        vec = start.copy()
        best_vec, best_lml, initial = start.copy(), -math.inf, None
        history, diverged = [], False
        for it in range(iters + 1):
            self.set_hyper_vector(vec)
            try:
                lml, grad = self.lml_and_grad()
            except (np.linalg.LinAlgError, NonFiniteError, FloatingPointError):
                lml, grad = math.nan, None
            if initial is None:
                initial = lml
            if not math.isfinite(lml) or grad is None or not np.all(np.isfinite(grad)):
                diverged = True
                log.warning("LML became non-finite at iteration %d; reverting to best", it)
                break
            history.append(lml)
            if lml > best_lml:
                best_lml, best_vec = lml, vec.copy()
            if it == iters:
                break
            state, vec = adam_step(state, vec, -grad)
            vec[-1] = max(vec[-1], floor)
        self.set_hyper_vector(best_vec)
        self.fit()
        return HyperOptReport(initial, self.log_marginal_likelihood(), iters, diverged, history)

    # serialization
    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "kernel": self.kernel.to_dict(),
            "log_noise": self.log_noise,
            "noise_floor": self.noise_floor,
            "inputs": self.x.tolist(),
            "targets": self.y.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianProcess":
        if d.get("format") != FORMAT:
            raise ValueError(f"not a GP blob: format={d.get('format')!r}")
        gp = cls(kernel_from_dict(d["kernel"]), d["inputs"], d["targets"],
                 noise_floor=d["noise_floor"])
        gp.log_noise = float(d["log_noise"])
        return gp.fit()

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, s: str) -> "GaussianProcess":
        return cls.from_dict(json.loads(s))
