"""
Finite-difference oracle for the reverse-mode gradients.

`fd_grad` perturbs one coordinate at a time with central differences;
`check_grad` runs both paths and reports the worst relative disagreement.
"""
import logging
from typing import Callable, Mapping

import numpy as np

from palp_lab.diffcore.autograd import grad
from palp_lab.diffcore.errors import GradientError, NonFiniteError
from palp_lab.diffcore.tensor import Tape, Tensor
from palp_lab.models.metrics import GradCheckReport

logger = logging.getLogger(__name__)

ScalarFn = Callable[[dict[str, Tensor]], "Tensor | float"]


def _evaluate(f: ScalarFn, params: Mapping[str, np.ndarray]) -> float:
    value = f({name: Tensor(array, name=name) for name, array in params.items()})
    value = value.item() if isinstance(value, Tensor) else float(value)
    if not np.isfinite(value):
        raise NonFiniteError("Objective is not finite at a probe point")
    return value


def fd_grad(f: ScalarFn, params: Mapping[str, np.ndarray], h: float = 1e-5) -> dict[str, np.ndarray]:
    """
    Central differences (f(p+h) - f(p-h)) / 2h for every coordinate of every parameter.

    Args:
        f: maps name -> Tensor to a scalar Tensor (or float)
        params: name -> array of the point to differentiate at
        h: step size

    Returns:
        name -> gradient estimate
    """
    if h <= 0:
        raise ValueError("Finite-difference step must be positive")
    base = {name: np.array(array, dtype=np.float64) for name, array in params.items()}
    estimates = {}
    for name, array in base.items():
        estimate = np.zeros_like(array)
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + h
            f_plus = _evaluate(f, base)
            array[index] = original - h
            f_minus = _evaluate(f, base)
            array[index] = original
            estimate[index] = (f_plus - f_minus) / (2.0 * h)
        estimates[name] = estimate
    return estimates


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def check_grad(
        f: ScalarFn,
        params: Mapping[str, np.ndarray],
        tol: float = 1e-4,
        h: float = 1e-5,
) -> GradCheckReport:
    """Compares reverse-mode gradients with finite differences; failures are reported, not raised."""
    if not params:
        return GradCheckReport(max_rel_err=0.0, passed=True)
    try:
        tape = Tape()
        leaves = {name: tape.leaf(array, name=name) for name, array in params.items()}
        root = f(leaves)
        if isinstance(root, Tensor) and root.is_tracked:
            analytic = grad(root, leaves.values())
        else:
            # constant objective
            analytic = {leaf: np.zeros(leaf.shape) for leaf in leaves.values()}
        numeric = fd_grad(f, params, h)
    except (GradientError, NonFiniteError) as e:
        logger.warning("Gradient check could not run: %s", e)
        return GradCheckReport(max_rel_err=float("inf"), passed=False)

    worst_err, worst_name, n_coordinates = 0.0, None, 0
    for name, leaf in leaves.items():
        errors = relative_error(analytic[leaf], numeric[name])
        n_coordinates += errors.size
        if errors.size and errors.max() > worst_err:
            worst_err, worst_name = float(errors.max()), name
    passed = worst_err <= tol
    logger.debug("Gradient check: max_rel_err=%.3e over %d coordinates", worst_err, n_coordinates)
    return GradCheckReport(
        max_rel_err=worst_err,
        passed=passed,
        worst_param=worst_name,
        n_coordinates=n_coordinates,
    )
