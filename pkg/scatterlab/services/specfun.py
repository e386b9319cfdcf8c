"""Special functions for the scattering kernels and corner calculus.

Thin, range-checked wrappers over ``scipy.special``. Every call validates
its domain and rejects non-finite results so that callers never receive
silently overflowed values.
"""
from typing import Union

import numpy as np
from scipy import special

from scatterlab.exceptions import SpecialFunctionError

ArrayLike = Union[float, np.ndarray]

MAX_ORDER = 200


def _as_array(x: ArrayLike) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _check_order(order: int, allow_negative: bool = False) -> int:
    if int(order) != order:
        raise SpecialFunctionError(f"Only integer orders are supported, got {order}")
    order = int(order)
    if order < 0 and not allow_negative:
        raise SpecialFunctionError(f"Order must be non-negative, got {order}")
    if abs(order) > MAX_ORDER:
        raise SpecialFunctionError(f"Order {order} exceeds supported range (|n| <= {MAX_ORDER})")
    return order


def _finite(values: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise SpecialFunctionError(f"{name} overflowed or is undefined for the requested arguments")
    return values


def _unwrap(values: np.ndarray, x: ArrayLike):
    if np.ndim(x) == 0:
        return values.item()
    return values


def bessel_j(order: int, x: ArrayLike, allow_negative_order: bool = False) -> ArrayLike:
    """
    Bessel function of the first kind J_n(x).

    Args:
        order: Integer order n >= 0
        x: Real argument(s), x >= 0

    Returns:
        J_n(x) with the same shape as x

    Raises:
        SpecialFunctionError: For negative arguments or non-finite results
    """
    n = _check_order(order, allow_negative_order)
    xa = _as_array(x)
    if np.any(xa < 0):
        raise SpecialFunctionError("bessel_j requires x >= 0")
    return _unwrap(_finite(special.jv(n, xa), "J"), x)


def bessel_y(order: int, x: ArrayLike, allow_negative_order: bool = False) -> ArrayLike:
    """Bessel function of the second kind Y_n(x) for x > 0."""
    n = _check_order(order, allow_negative_order)
    xa = _as_array(x)
    if np.any(xa <= 0):
        raise SpecialFunctionError("bessel_y requires x > 0 (logarithmic singularity at 0)")
    return _unwrap(_finite(special.yv(n, xa), "Y"), x)


def hankel1(order: int, x: ArrayLike, allow_negative_order: bool = False) -> ArrayLike:
    """
    Hankel function of the first kind H_n^(1)(x) = J_n(x) + i Y_n(x).

    Args:
        order: Integer order
        x: Real argument(s), x > 0

    Returns:
        Complex values with the same shape as x

    Raises:
        SpecialFunctionError: For x <= 0 or overflow
    """
    n = _check_order(order, allow_negative_order)
    xa = _as_array(x)
    if np.any(xa <= 0):
        raise SpecialFunctionError("hankel1 requires x > 0 (logarithmic singularity at 0)")
    return _unwrap(_finite(special.hankel1(n, xa), "H1"), x)


def bessel_j_prime(order: int, x: ArrayLike) -> ArrayLike:
    """Derivative J_n'(x) for integer n (any sign) and x >= 0."""
    n = _check_order(order, allow_negative=True)
    xa = _as_array(x)
    if np.any(xa < 0):
        raise SpecialFunctionError("bessel_j_prime requires x >= 0")
    return _unwrap(_finite(special.jvp(n, xa), "J'"), x)


def hankel1_prime(order: int, x: ArrayLike) -> ArrayLike:
    """Derivative H_n^(1)'(x) for integer n (any sign) and x > 0."""
    n = _check_order(order, allow_negative=True)
    xa = _as_array(x)
    if np.any(xa <= 0):
        raise SpecialFunctionError("hankel1_prime requires x > 0")
    return _unwrap(_finite(special.h1vp(n, xa), "H1'"), x)


def gamma_fn(x: ArrayLike) -> ArrayLike:
    """
    Gamma function on the positive real axis.

    Raises:
        SpecialFunctionError: For x <= 0 or overflow (x above ~171)
    """
    xa = _as_array(x)
    if np.any(xa <= 0):
        raise SpecialFunctionError("gamma_fn requires x > 0")
    return _unwrap(_finite(special.gamma(xa), "Gamma"), x)
