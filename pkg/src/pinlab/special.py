"""Special-function helpers: real zeta, sine polylogarithm, Clausen function.

The periodic cell profile has Fourier coefficients ~ sin(k theta) / k^(1+2s),
so its exact pointwise values are sine polylogarithms

    S_nu(phi) = sum_{k>=1} sin(k phi) / k^nu,   nu = 1 + 2s.

Summing that series term by term loses a digit per decade of accuracy near the
cusp; instead we evaluate it through the asymptotic-free expansion of
Li_nu(e^{i phi}) around phi = 0, which converges geometrically for |phi| < 2 pi
and needs zeta at descending real arguments (including (0,1) and negatives,
where scipy's zeta gives nan). Hence the real-line zeta here.

Everything in this module is plain float/ndarray numerics; no mpmath.
"""

import functools

import numpy as np
from scipy.special import gamma as _gamma
from scipy.special import zeta as _scipy_zeta

__all__ = ["zeta_real", "sin_polylog", "clausen", "frac_lap_constant"]

_BORWEIN_N = 40


@functools.lru_cache(maxsize=None)
def _borwein_weights(n):
    # d_k = n * sum_{j<=k} (n+j-1)! 4^j / ((n-j)! (2j)!), built by ratio recursion
    d = np.empty(n + 1)
    term = float(n)  # j = 0 term of the inner sum, times leading n
    acc = term
    d[0] = acc
    for j in range(1, n + 1):
        # ratio of consecutive inner terms: (n+j-1)(n-j+1) * 4 / ((2j)(2j-1))
        term *= (n + j - 1) * (n - j + 1) * 4.0 / ((2 * j) * (2 * j - 1))
        acc += term
        d[j] = acc
    return d


def _zeta_01(x):
    # Borwein's alternating-series acceleration; x in (0,1)
    n = _BORWEIN_N
    d = _borwein_weights(n)
    k = np.arange(n)
    signs = np.where(k % 2 == 0, 1.0, -1.0)
    eta = -np.sum(signs * (d[:n] - d[n]) / (k + 1.0) ** x) / d[n]
    return eta / (1.0 - 2.0 ** (1.0 - x))


def zeta_real(x):
    """Riemann zeta at a real argument x != 1.

    scipy covers x > 1; (0,1) uses Borwein's eta acceleration; x <= 0 uses
    the functional equation back to 1-x > 1.
    """
    x = float(x)
    if x == 1.0:
        raise ValueError("zeta has a pole at 1")
    if x > 1.0:
        return float(_scipy_zeta(x))
    if x == 0.0:
        return -0.5
    if x > 0.0:
        return float(_zeta_01(x))
    # x < 0: zeta(x) = 2^x pi^(x-1) sin(pi x / 2) Gamma(1-x) zeta(1-x)
    return float(
        2.0**x * np.pi ** (x - 1.0) * np.sin(0.5 * np.pi * x)
        * _gamma(1.0 - x) * _scipy_zeta(1.0 - x)
    )


# Expansion length for the Li_nu series below. Terms decay like
# 2 (|phi|/2pi)^j / j after range reduction to |phi| <= pi, so 2^-j;
# 64 terms leave < 1e-19 relative to the leading digits.
_J_MAX = 64


@functools.lru_cache(maxsize=None)
def _polylog_coeffs(nu):
    # odd-j Taylor weights (-1)^((j-1)/2) zeta(nu-j)/j! and the phi^(nu-1) prefactor
    js = np.arange(1, _J_MAX, 2)
    coeff = np.empty(js.size)
    fact = 1.0
    prev_j = 0
    for idx, j in enumerate(js):
        for m in range(prev_j + 1, j + 1):
            fact *= m
        prev_j = int(j)
        coeff[idx] = ((-1.0) ** ((j - 1) // 2)) * zeta_real(nu - j) / fact
    prefactor = -_gamma(1.0 - nu) * np.sin(0.5 * np.pi * (nu - 1.0))
    return js, coeff, prefactor


def _reduce_odd_2pi(phi):
    # map to (-pi, pi] then fold by oddness to [0, pi]; return (|phi|, sign)
    phi = np.asarray(phi, dtype=float)
    red = np.mod(phi + np.pi, 2.0 * np.pi) - np.pi
    sign = np.where(red < 0.0, -1.0, 1.0)
    return np.abs(red), sign


def sin_polylog(nu, phi):
    """sum_{k>=1} sin(k phi) / k^nu for real non-integer nu in (1, 4).

    Vectorized over phi (any real values; the series is odd and 2pi-periodic).
    nu = 2 is delegated to :func:`clausen`.
    """
    if nu == 2.0:
        return clausen(phi)
    if not (1.0 < nu < 4.0) or float(nu).is_integer():
        raise ValueError("nu must be non-integer in (1, 4)")
    r, sign, scalar = _prepare_phi(phi)
    js, coeff, prefactor = _polylog_coeffs(float(nu))
    out = prefactor * r ** (nu - 1.0)
    out += _odd_poly(r, js, coeff)
    out *= sign
    return out[0] if scalar else out


def clausen(phi):
    """Clausen function Cl_2(phi) = sum_{k>=1} sin(k phi) / k^2."""
    r, sign, scalar = _prepare_phi(phi)
    js, coeff = _clausen_coeffs()
    with np.errstate(divide="ignore", invalid="ignore"):
        lead = r * (1.0 - np.log(r))
    lead = np.where(r == 0.0, 0.0, lead)
    out = lead + _odd_poly(r, js, coeff)
    out *= sign
    return out[0] if scalar else out


@functools.lru_cache(maxsize=None)
def _clausen_coeffs():
    # Cl_2(phi) = phi(1 - log phi) + sum_{j odd >= 3} (-1)^((j-1)/2) zeta(2-j) phi^j / j!
    js = np.arange(3, _J_MAX, 2)
    coeff = np.empty(js.size)
    fact = 6.0  # 3!
    prev_j = 3
    for idx, j in enumerate(js):
        for m in range(prev_j + 1, j + 1):
            fact *= m
        prev_j = int(j)
        coeff[idx] = ((-1.0) ** ((j - 1) // 2)) * zeta_real(2.0 - j) / fact
    return js, coeff


def _prepare_phi(phi):
    scalar = np.isscalar(phi) or (hasattr(phi, "ndim") and phi.ndim == 0)
    r, sign = _reduce_odd_2pi(np.atleast_1d(phi))
    return r, sign, scalar


def _odd_poly(r, js, coeff):
    # Horner in r^2 over the odd powers r^js
    r2 = r * r
    acc = np.zeros_like(r)
    for c in coeff[::-1]:
        acc = acc * r2 + c
    return acc * r ** js[0]


def frac_lap_constant(s):
    """Normalization C_{1,s} = 4^s Gamma(1/2+s) / (sqrt(pi) |Gamma(-s)|).

    Makes the singular-integral form of (-Delta)^s match the Fourier
    multiplier |2 pi xi|^(2s); C_{1,1/2} = 1/pi.
    """
    s = float(s)
    if not (0.0 < s < 1.0):
        raise ValueError("s must lie in (0, 1)")
    return 4.0**s * _gamma(0.5 + s) / (np.sqrt(np.pi) * abs(_gamma(-s)))
