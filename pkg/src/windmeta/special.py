"""Scalar special functions used by the beta likelihood.

All kernels are compiled with numba so the likelihood can call them per row
without leaving machine code. The public wrappers accept scalars or arrays,
validate the domain and return a float for scalar input.
"""

import math

import numba
import numpy as np

__all__ = ["expit", "log_gamma", "digamma", "DomainError"]


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


EULER_GAMMA = 0.5772156649015329
HALF_LOG_2PI = 0.9189385332046728

# Root of digamma split into hi + lo parts, and Taylor coefficients
# psi^(k)(x0) / k! for k = 1..12 about that root.
_PSI_ROOT_HI = 1.4616321449683622
_PSI_ROOT_LO = 9.549995429965697e-17
_PSI_ROOT_TAYLOR = np.array([
    0.9676722454476212, -0.4427631689835921, 0.258499760955651,
    -0.16394270544240652, 0.10782405069126237, -0.07219956125645471,
    0.04880428816414311, -0.03316112647484736, 0.022597648232218104,
    -0.01542476590494896, 0.010538791616612175, -0.007204534386356869,
])


def _zeta_values(kmax, n_terms=1000):
    """Riemann zeta at k = 2..kmax by direct sum plus Euler-Maclaurin tail."""
    n = np.arange(1, n_terms, dtype=np.float64)
    big_n = float(n_terms)
    out = []
    for k in range(2, kmax + 1):
        head = np.sum(n[::-1] ** -k)
        tail = (big_n ** (1 - k) / (k - 1) + 0.5 * big_n ** -k
                + k * big_n ** (-k - 1) / 12.0
                - k * (k + 1) * (k + 2) * big_n ** (-k - 3) / 720.0)
        out.append(head + tail)
    return np.array(out)


# log Gamma(1 + e) = -gamma*e + sum_{k>=2} (-1)^k zeta(k)/k e^k, used for
# |e| <= 0.2 so the result keeps full relative accuracy next to the zeros
# of log Gamma at 1 and 2.
_N_SERIES = 26
_LGAMMA1P_COEF = np.concatenate((
    [-EULER_GAMMA],
    [(-1.0) ** k * z / k for k, z in zip(range(2, _N_SERIES + 2),
                                          _zeta_values(_N_SERIES + 1))],
))
_SERIES_HALFWIDTH = 0.2
_SHIFT_TO = 10.0


@numba.njit(cache=True)
def _lgamma1p_series(e):
    # Horner on coefficients c_1..c_n of e^1..e^n
    acc = 0.0
    for i in range(_LGAMMA1P_COEF.shape[0] - 1, -1, -1):
        acc = acc * e + _LGAMMA1P_COEF[i]
    return acc * e


@numba.njit(cache=True)
def _stirling_tail(z):
    # sum of B_2k / (2k (2k-1) z^(2k-1)), z >= 10
    r = 1.0 / z
    r2 = r * r
    return r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 * (
        1.0 / 1680.0 - r2 * (1.0 / 1188.0 - r2 * (
            691.0 / 360360.0 - r2 * (1.0 / 156.0)))))))


@numba.njit(cache=True)
def _digamma_tail(z):
    # sum of B_2k / (2k z^(2k)), z >= 10
    r2 = 1.0 / (z * z)
    return r2 * (1.0 / 12.0 - r2 * (1.0 / 120.0 - r2 * (1.0 / 252.0 - r2 * (
        1.0 / 240.0 - r2 * (1.0 / 132.0 - r2 * (
            691.0 / 32760.0 - r2 * (1.0 / 12.0)))))))


@numba.njit(cache=True)
def lgamma_scalar(x):
    """log Gamma(x) for finite x > 0."""
    if abs(x - 1.0) <= _SERIES_HALFWIDTH:
        return _lgamma1p_series(x - 1.0)
    if abs(x - 2.0) <= _SERIES_HALFWIDTH:
        e = x - 2.0
        return math.log1p(e) + _lgamma1p_series(e)
    if x >= _SHIFT_TO:
        return (x - 0.5) * math.log(x) - x + HALF_LOG_2PI + _stirling_tail(x)
    prod = 1.0
    z = x
    while z < _SHIFT_TO:
        prod *= z
        z += 1.0
    return ((z - 0.5) * math.log(z) - z + HALF_LOG_2PI + _stirling_tail(z)
            - math.log(prod))


@numba.njit(cache=True)
def digamma_scalar(x):
    """psi(x) = d/dx log Gamma(x) for finite x > 0."""
    d = (x - _PSI_ROOT_HI) - _PSI_ROOT_LO
    if abs(d) < 0.03:
        acc = 0.0
        for i in range(_PSI_ROOT_TAYLOR.shape[0] - 1, -1, -1):
            acc = acc * d + _PSI_ROOT_TAYLOR[i]
        return acc * d
    shift = 0.0
    z = x
    while z < _SHIFT_TO:
        shift += 1.0 / z
        z += 1.0
    return math.log(z) - 0.5 / z - _digamma_tail(z) - shift


@numba.njit(cache=True)
def expit_scalar(x):
    if x >= 0.0:
        v = 1.0 / (1.0 + math.exp(-x))
    else:
        ex = math.exp(x)
        v = ex / (1.0 + ex)
    if v >= 1.0:
        return 0.9999999999999999
    if v <= 0.0:
        return 5e-324
    return v


@numba.njit(cache=True)
def _map_lgamma(x, out):
    for i in range(x.shape[0]):
        out[i] = lgamma_scalar(x[i])


@numba.njit(cache=True)
def _map_digamma(x, out):
    for i in range(x.shape[0]):
        out[i] = digamma_scalar(x[i])


@numba.njit(cache=True)
def _map_expit(x, out):
    for i in range(x.shape[0]):
        out[i] = expit_scalar(x[i])


def _apply(kernel, x, name, positive):
    arr = np.asarray(x, dtype=np.float64)
    flat = np.ascontiguousarray(arr).ravel()
    if not np.all(np.isfinite(flat)):
        raise DomainError(f"{name}: non-finite argument")
    if positive and np.any(flat <= 0.0):
        bad = flat[flat <= 0.0][0]
        raise DomainError(f"{name}: argument must be > 0, got {bad!r}")
    out = np.empty_like(flat)
    kernel(flat, out)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def expit(x):
    """Logistic function 1 / (1 + exp(-x)).

    Saturated results are pulled back to the nearest representable value
    strictly inside (0, 1).
    """
    return _apply(_map_expit, x, "expit", positive=False)


def log_gamma(x):
    """Natural log of the gamma function for x > 0.

    Uses a Taylor series about 1 and 2 (where the function vanishes), the
    Stirling series for x >= 10, and the upward recurrence in between.
    """
    return _apply(_map_lgamma, x, "log_gamma", positive=True)


def digamma(x):
    """Digamma function psi(x) for x > 0.

    Recurrence up to x >= 10 followed by the asymptotic series; a Taylor
    expansion about the positive root keeps relative accuracy near it.
    """
    return _apply(_map_digamma, x, "digamma", positive=True)
