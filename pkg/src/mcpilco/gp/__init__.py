from mcpilco.gp.kernels import (
    Kernel, MultiplicativePolynomial, PhysicallyInspired, SquaredExponential, SumKernel,
    kernel_eval, kernel_from_dict, linear_basis, make_kernel, register_basis, se_plus_poly,
    semi_parametric,
)
from mcpilco.gp.model import GaussianProcess, GpFitError, HyperOptReport, NotFittedError

__all__ = [
    "Kernel", "SquaredExponential", "MultiplicativePolynomial", "PhysicallyInspired",
    "SumKernel", "make_kernel", "kernel_from_dict", "kernel_eval", "register_basis",
    "linear_basis", "se_plus_poly", "semi_parametric", "GaussianProcess", "GpFitError",
    "HyperOptReport", "NotFittedError",
]
