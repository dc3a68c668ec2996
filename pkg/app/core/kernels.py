"""
Kernel functions K on [-1, 1], their moments, and the scaled weights K_h.
"""

from typing import Tuple

import numpy as np

from app.models.kernel import KernelFamily, KernelSpec

# (sigma_K^2, R_K) in closed form
_MOMENTS = {
    KernelFamily.EPANECHNIKOV: (1.0 / 5.0, 3.0 / 5.0),
    KernelFamily.QUARTIC: (1.0 / 7.0, 5.0 / 7.0),
    KernelFamily.TRIANGULAR: (1.0 / 6.0, 2.0 / 3.0),
}


def kernel_profile(family: KernelFamily, u) -> np.ndarray:
    """K(u) for an array of u; evaluated on |u| so K(u) == K(-u) bitwise"""
    a = np.abs(np.asarray(u, dtype=float))
    inside = a <= 1.0
    if family == KernelFamily.EPANECHNIKOV:
        values = 0.75 * (1.0 - a * a)
    elif family == KernelFamily.QUARTIC:
        values = (15.0 / 16.0) * (1.0 - a * a) ** 2
    elif family == KernelFamily.TRIANGULAR:
        values = 1.0 - a
    else:
        raise ValueError(f"unknown kernel family {family!r}")
    return np.where(inside, values, 0.0)


def kernel_eval(spec: KernelSpec, u: float) -> float:
    """K(u); zero outside [-1, 1]"""
    return float(kernel_profile(spec.family, u))


def kernel_moments(spec: KernelSpec) -> Tuple[float, float]:
    """(sigma_K^2, R_K) = (int u^2 K, int K^2)"""
    return _MOMENTS[KernelFamily(spec.family)]


def scaled_weights(family: KernelFamily, offsets, h) -> np.ndarray:
    """K_h(offset) = K(offset / h) / h, broadcasting offsets against h"""
    h = np.asarray(h, dtype=float)
    return kernel_profile(family, np.asarray(offsets, dtype=float) / h) / h
