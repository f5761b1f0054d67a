"""Scalar/array numerical primitives used by every density in the package.

Thin validated wrappers around ``scipy.special``; they accept floats or
arrays and raise ``ValueError`` outside their domain instead of silently
returning NaN.
"""

import numpy as np
from scipy import special as sps

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _check(cond, msg):
    if not np.all(cond):
        raise ValueError(msg)


def log_gamma(x):
    """Natural log of the gamma function for ``x > 0``."""
    x = np.asarray(x, dtype=float)
    _check(np.isfinite(x) & (x > 0), "log_gamma requires finite x > 0")
    out = sps.gammaln(x)
    return float(out) if out.ndim == 0 else out


def reg_gamma_upper(shape, x):
    """Regularized upper incomplete gamma ``Q(shape, x) = Gamma(shape, x) / Gamma(shape)``."""
    shape = np.asarray(shape, dtype=float)
    x = np.asarray(x, dtype=float)
    _check(shape > 0, "reg_gamma_upper requires shape > 0")
    _check(x >= 0, "reg_gamma_upper requires x >= 0")
    out = sps.gammaincc(shape, x)
    return float(out) if out.ndim == 0 else out


def reg_gamma_lower(shape, x):
    """Regularized lower incomplete gamma ``P(shape, x) = 1 - Q(shape, x)``.

    Computed directly rather than as ``1 - Q`` so small left-tail
    probabilities keep full relative precision.
    """
    shape = np.asarray(shape, dtype=float)
    x = np.asarray(x, dtype=float)
    _check(shape > 0, "reg_gamma_lower requires shape > 0")
    _check(x >= 0, "reg_gamma_lower requires x >= 0")
    out = sps.gammainc(shape, x)
    return float(out) if out.ndim == 0 else out


def normal_logpdf(z):
    z = np.asarray(z, dtype=float)
    with np.errstate(over="ignore"):
        out = -0.5 * z * z - LOG_SQRT_2PI
    return float(out) if out.ndim == 0 else out


def normal_pdf(z):
    return np.exp(normal_logpdf(z))


def normal_cdf(z):
    z = np.asarray(z, dtype=float)
    out = sps.ndtr(z)
    return float(out) if out.ndim == 0 else out


def normal_sf(z):
    """Upper tail ``P(Z > z)``; accurate for large positive ``z``."""
    return normal_cdf(-np.asarray(z, dtype=float))


def log_normal_cdf(z):
    z = np.asarray(z, dtype=float)
    out = sps.log_ndtr(z)
    return float(out) if out.ndim == 0 else out


def normal_quantile(p):
    """Inverse standard normal CDF for ``p`` in the open interval (0, 1)."""
    p = np.asarray(p, dtype=float)
    _check((p > 0) & (p < 1), "normal_quantile requires 0 < p < 1")
    out = sps.ndtri(p)
    return float(out) if out.ndim == 0 else out
