"""Error densities for the linear model and the heavy-tailed gamma density for the GLM.

Every density is evaluated in log space. The linear-model densities
(``Normal``, ``StudentT``, ``LPTN``) are standardized, symmetric and
nonincreasing in ``|y|``; each carries a :class:`TailClass` describing the
limit form of its tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import integrate, optimize

from .special import (
    LOG_SQRT_2PI,
    log_gamma,
    normal_cdf,
    normal_logpdf,
    normal_quantile,
    reg_gamma_lower,
    reg_gamma_upper,
)

LPTN_RHO_MIN = 2.0 * normal_cdf(1.0) - 1.0


class HyperparameterError(ValueError):
    pass


class TailClassError(ValueError):
    """Raised when an operation needs a heavy tail but the density has a light one."""


class ConfigurationError(ValueError):
    pass


class QuadratureError(RuntimeError):
    def __init__(self, msg, estimate, abserr):
        super().__init__(f"{msg} (estimate={estimate!r}, abserr={abserr!r})")
        self.estimate = estimate
        self.abserr = abserr


class TailKind(str, Enum):
    REGULAR = "regularly_varying"
    LOG_REGULAR = "log_regularly_varying"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class TailClass:
    kind: TailKind
    C_f: float
    alpha: float

    def asymptote_logpdf(self, y):
        """Log of the tail form ``C_f |y|^-(alpha+1)`` or ``C_f |y|^-1 (log|y|)^-(alpha+1)``."""
        u = np.log(np.abs(np.asarray(y, dtype=float)))
        if self.kind is TailKind.REGULAR:
            return math.log(self.C_f) - (self.alpha + 1.0) * u
        if self.kind is TailKind.LOG_REGULAR:
            return math.log(self.C_f) - u - (self.alpha + 1.0) * np.log(u)
        raise TailClassError("exponential tails have no power-law asymptote")


def _scalar(out):
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


class ErrorDensity:
    """Common interface of the standardized error densities."""

    tail: TailClass
    label: str

    def logpdf(self, y):
        raise NotImplementedError

    def dlogpdf(self, y):
        raise NotImplementedError

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    @property
    def sup_density(self) -> float:
        # symmetric and nonincreasing in |y|, so the sup is at 0
        return float(np.exp(self.logpdf(0.0)))

    def log_abs_logpdf(self, u):
        """``log f(y)`` evaluated from ``u = log|y|``, usable far beyond float range."""
        u = np.asarray(u, dtype=float)
        return self.logpdf(np.exp(np.minimum(u, 700.0)))


@dataclass(frozen=True)
class Normal(ErrorDensity):
    label: str = field(default="normal", init=False)

    @property
    def tail(self) -> TailClass:
        return TailClass(TailKind.EXPONENTIAL, float("nan"), float("inf"))

    def logpdf(self, y):
        return normal_logpdf(y)

    def dlogpdf(self, y):
        return _scalar(-np.asarray(y, dtype=float))


@dataclass(frozen=True)
class StudentT(ErrorDensity):
    nu: float
    label: str = field(default="", init=False)
    _log_norm: float = field(default=0.0, init=False, repr=False)

    def __post_init__(self):
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise HyperparameterError(f"Student-t needs nu > 0, got {self.nu}")
        nu = float(self.nu)
        log_norm = (log_gamma((nu + 1) / 2) - log_gamma(nu / 2)
                    - 0.5 * math.log(nu * math.pi))
        object.__setattr__(self, "_log_norm", log_norm)
        object.__setattr__(self, "label", f"student_nu{nu:g}")

    @property
    def tail(self) -> TailClass:
        return student_tail_constants(self.nu)

    def _log1p_sq(self, y):
        a = np.abs(np.asarray(y, dtype=float)) / math.sqrt(self.nu)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            big = 2.0 * np.log(a) + np.log1p(1.0 / (a * a))
            return np.where(a < 1e100, np.log1p(a * a), big)

    def logpdf(self, y):
        return _scalar(self._log_norm - 0.5 * (self.nu + 1) * self._log1p_sq(y))

    def log_abs_logpdf(self, u):
        u = np.asarray(u, dtype=float)
        la = u - 0.5 * math.log(self.nu)
        with np.errstate(over="ignore"):
            l1p = np.where(la > 0, 2 * la + np.log1p(np.exp(-2 * np.maximum(la, 0))),
                           np.log1p(np.exp(2 * np.minimum(la, 0))))
        return _scalar(self._log_norm - 0.5 * (self.nu + 1) * l1p)

    def dlogpdf(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(over="ignore"):
            return _scalar(-(self.nu + 1) * y / (self.nu + y * y))


@dataclass(frozen=True)
class LPTN(ErrorDensity):
    """Log-Pareto-tailed normal: standard normal on ``|y| <= theta``, log-Pareto beyond."""

    rho: float
    theta: float = field(default=0.0, init=False)
    lam: float = field(default=0.0, init=False)
    label: str = field(default="", init=False)

    def __post_init__(self):
        if not (LPTN_RHO_MIN < self.rho < 1):
            raise HyperparameterError(
                f"LPTN needs {LPTN_RHO_MIN:.6f} < rho < 1, got {self.rho}")
        theta = normal_quantile((1 + self.rho) / 2)
        lam = 2.0 / (1 - self.rho) * math.exp(normal_logpdf(theta)) * theta * math.log(theta)
        object.__setattr__(self, "theta", float(theta))
        object.__setattr__(self, "lam", float(lam))
        object.__setattr__(self, "label", f"lptn_rho{self.rho:g}")

    @property
    def _log_tail_const(self):
        # log of phi(theta) * theta * (log theta)^(lam + 1) = log C_f
        return (normal_logpdf(self.theta) + math.log(self.theta)
                + (self.lam + 1) * math.log(math.log(self.theta)))

    @property
    def tail(self) -> TailClass:
        return TailClass(TailKind.LOG_REGULAR, math.exp(self._log_tail_const), self.lam)

    def _tail_from_log_abs(self, u):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._log_tail_const - u - (self.lam + 1) * np.log(u)

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        ay = np.abs(y)
        in_tail = ay >= self.theta
        u = np.log(np.where(in_tail, ay, self.theta))
        return _scalar(np.where(in_tail, self._tail_from_log_abs(u), normal_logpdf(y)))

    def log_abs_logpdf(self, u):
        u = np.asarray(u, dtype=float)
        in_tail = u >= math.log(self.theta)
        central = normal_logpdf(np.exp(np.minimum(u, math.log(self.theta))))
        safe = np.where(in_tail, u, math.log(self.theta))
        return _scalar(np.where(in_tail, self._tail_from_log_abs(safe), central))

    def dlogpdf(self, y):
        """Derivative of ``log f``; one-sided (tail branch) at ``|y| = theta``."""
        y = np.asarray(y, dtype=float)
        ay = np.abs(y)
        in_tail = ay >= self.theta
        ys = np.where(in_tail, y, self.theta)
        tail = -(1.0 + (self.lam + 1) / np.log(np.abs(ys))) / ys
        return _scalar(np.where(in_tail, tail, -y))

    def tail_mass(self, method: str = "closed") -> float:
        """Mass of ``(theta, inf)``; equals ``(1 - rho) / 2``."""
        if method == "closed":
            return math.exp(normal_logpdf(self.theta)) * self.theta * math.log(self.theta) / self.lam
        return _log_pareto_tail_quad(lambda u: float(self.log_abs_logpdf(u)),
                                     math.log(self.theta), self.lam + 1)


def _log_pareto_tail_quad(log_f_of_u, u0, power, u_max=1e4):
    """Numerically integrate ``f(e^u) e^u du`` over ``(u0, inf)``.

    The integrand behaves like ``u^-power``. Substituting ``v = log u`` makes
    it decay exponentially; past ``u_max`` the remainder is added exactly
    from the power law (evaluating further would cancel ``-u + u`` in
    floating point).
    """
    def integrand(v):
        u = math.exp(v)
        return math.exp(log_f_of_u(u) + u + v)

    body = integrate.quad(integrand, math.log(u0), math.log(u_max),
                          epsabs=0, epsrel=1e-13, limit=200)[0]
    head = math.exp(log_f_of_u(u_max) + u_max)
    return body + head * u_max / (power - 1)


def student_tail_constants(nu: float) -> TailClass:
    """Tail constant ``C_f`` and index ``alpha = nu`` of the Student-t density."""
    if not nu > 0:
        raise HyperparameterError(f"nu must be positive, got {nu}")
    log_cf = (log_gamma((nu + 1) / 2) + 0.5 * nu * math.log(nu)
              - 0.5 * math.log(math.pi) - log_gamma(nu / 2))
    return TailClass(TailKind.REGULAR, math.exp(log_cf), float(nu))


def lptn_build(rho: float) -> LPTN:
    return LPTN(rho)


def error_logpdf(d: ErrorDensity, y):
    return d.logpdf(y)


def error_dlogpdf(d: ErrorDensity, y):
    return d.dlogpdf(y)


def error_density_from_dict(cfg: dict) -> ErrorDensity:
    family = cfg["family"].lower()
    if family == "normal":
        return Normal()
    if family in ("student", "student_t", "t"):
        return StudentT(float(cfg["nu"]))
    if family == "lptn":
        return LPTN(float(cfg["rho"]))
    raise ConfigurationError(f"unknown error family {cfg['family']!r}")


def error_density_to_dict(d: ErrorDensity) -> dict:
    if isinstance(d, StudentT):
        return {"family": "student", "nu": d.nu}
    if isinstance(d, LPTN):
        return {"family": "lptn", "rho": d.rho}
    return {"family": "normal"}


# ---------------------------------------------------------------------------
# heavy-tailed gamma density
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RobustGamma:
    """Gamma(mean 1, shape nu) centre with log-Pareto tails spliced at ``z_l`` and ``z_r``.

    ``lambda_l`` is ``None`` when the left tail does not exist
    (``nu <= 1`` or ``c >= sqrt(nu)``); the density is then the gamma
    shape all the way down to 0.
    """

    nu: float
    c: float = 1.6
    z_r: float = field(default=0.0, init=False)
    z_l: float = field(default=0.0, init=False)
    lambda_r: float = field(default=0.0, init=False)
    lambda_l: float | None = field(default=None, init=False)
    has_left_tail: bool = field(default=False, init=False)

    def __post_init__(self):
        nu, c = self.nu, self.c
        if not (nu > 0 and math.isfinite(nu)):
            raise HyperparameterError(f"nu must be positive, got {nu}")
        if not (c > 0 and math.isfinite(c)):
            raise HyperparameterError(f"c must be positive, got {c}")
        z_r = 1 + c / math.sqrt(nu)
        z_l = max(0.0, 1 - c / math.sqrt(nu)) if nu > 1 else 0.0
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("z_r", z_r)
        set_("z_l", z_l)
        p_right = reg_gamma_upper(nu, nu * z_r)
        set_("lambda_r", 1 + math.exp(self._log_fmid_scalar(z_r)) * math.log(z_r) * z_r / p_right)
        if z_l > 0:
            p_left = reg_gamma_lower(nu, nu * z_l)
            set_("lambda_l", 1 + math.exp(self._log_fmid_scalar(z_l)) * math.log(1 / z_l) * z_l / p_left)
            set_("has_left_tail", True)

    @property
    def label(self):
        return f"robust_gamma_nu{self.nu:g}_c{self.c:g}"

    def _log_fmid_scalar(self, z):
        nu = self.nu
        return -nu * z + (nu - 1) * math.log(z) + nu * math.log(nu) - log_gamma(nu)

    def log_fmid_logz(self, t):
        t = np.asarray(t, dtype=float)
        nu = self.nu
        return -nu * np.exp(np.minimum(t, 700.0)) + (nu - 1) * t + nu * math.log(nu) - log_gamma(nu)

    def logpdf_logz(self, t):
        """Log density at ``z = exp(t)``; defined for every real ``t``."""
        t = np.asarray(t, dtype=float)
        lr = math.log(self.z_r)
        right = t > lr
        tr = np.where(right, t, 2 * lr)
        out = np.where(
            right,
            self._log_fmid_scalar(self.z_r) + lr - tr + self.lambda_r * (math.log(lr) - np.log(tr)),
            self.log_fmid_logz(np.minimum(t, lr)),
        )
        if self.has_left_tail:
            ll = math.log(self.z_l)
            left = t < ll
            tl = np.where(left, t, 2 * ll)
            lval = (self._log_fmid_scalar(self.z_l) + ll - tl
                    + self.lambda_l * (math.log(-ll) - np.log(-tl)))
            out = np.where(left, lval, out)
        return _scalar(out)

    def dlogpdf_logz(self, t):
        """Derivative of :meth:`logpdf_logz` with respect to ``t = log z``."""
        t = np.asarray(t, dtype=float)
        lr = math.log(self.z_r)
        right = t > lr
        tr = np.where(right, t, 2 * lr)
        out = np.where(right, -1 - self.lambda_r / tr,
                       -self.nu * np.exp(np.minimum(t, lr)) + (self.nu - 1))
        if self.has_left_tail:
            ll = math.log(self.z_l)
            left = t < ll
            tl = np.where(left, t, 2 * ll)
            out = np.where(left, -1 - self.lambda_l / tl, out)
        return _scalar(out)

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        if not np.all(z > 0):
            raise ValueError("robust gamma density is supported on z > 0")
        return self.logpdf_logz(np.log(z))

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def right_tail_mass(self, method: str = "closed") -> float:
        if method == "closed":
            return math.exp(self._log_fmid_scalar(self.z_r)) * self.z_r * math.log(self.z_r) / (self.lambda_r - 1)
        return _log_pareto_tail_quad(lambda u: float(self.logpdf_logz(u)),
                                     math.log(self.z_r), self.lambda_r)

    def left_tail_mass(self, method: str = "closed") -> float:
        if not self.has_left_tail:
            raise ConfigurationError("density has no left tail (needs nu > 1 and c < sqrt(nu))")
        if method == "closed":
            return (math.exp(self._log_fmid_scalar(self.z_l)) * self.z_l
                    * math.log(1 / self.z_l) / (self.lambda_l - 1))
        # mirror z -> 1/z: the left tail becomes a log-Pareto right tail in u = log(1/z)
        return _log_pareto_tail_quad(lambda u: float(self.logpdf_logz(-u)) - 2 * u,
                                     math.log(1 / self.z_l), self.lambda_l)

    def gamma_right_prob(self) -> float:
        return reg_gamma_upper(self.nu, self.nu * self.z_r)

    def gamma_left_prob(self) -> float:
        return reg_gamma_lower(self.nu, self.nu * self.z_l)

    def mode_bound(self, y):
        """Upper bound ``(nu/e)^nu / (y Gamma(nu))`` on ``f(y/mu)/mu`` over ``mu``."""
        nu = self.nu
        return np.exp(nu * (math.log(nu) - 1) - log_gamma(nu) - np.log(y))


def robust_gamma_build(nu: float, c: float = 1.6) -> RobustGamma:
    return RobustGamma(nu, c)


def robust_gamma_logpdf(d: RobustGamma, z):
    return d.logpdf(z)


# ---------------------------------------------------------------------------
# limit ratios
# ---------------------------------------------------------------------------

def g_sigma(d: ErrorDensity, sigma):
    """Trace factor left by one outlier: ``sigma^alpha`` or 1."""
    tail = d.tail
    if tail.kind is TailKind.REGULAR:
        return np.asarray(sigma, dtype=float) ** tail.alpha
    if tail.kind is TailKind.LOG_REGULAR:
        return np.ones_like(np.asarray(sigma, dtype=float))
    raise TailClassError(f"{d.label}: limit ratio is degenerate for exponential tails")


def log_g_sigma(d: ErrorDensity, log_sigma):
    tail = d.tail
    if tail.kind is TailKind.REGULAR:
        return tail.alpha * np.asarray(log_sigma, dtype=float)
    if tail.kind is TailKind.LOG_REGULAR:
        return np.zeros_like(np.asarray(log_sigma, dtype=float))
    raise TailClassError(f"{d.label}: limit ratio is degenerate for exponential tails")


def log_limit_ratio_location_scale(d: ErrorDensity, x_beta, sigma, y=None, *, log_y=None):
    """Log of ``(1/sigma) f((y - x_beta)/sigma) / (g(sigma) f(y))`` for ``y > 0``.

    Pass ``log_y`` instead of ``y`` to evaluate at magnitudes beyond float
    range (only the ``y -> +inf`` direction is available that way).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    lg = float(log_g_sigma(d, math.log(sigma)))
    if log_y is None:
        z = (y - x_beta) / sigma
        return float(d.logpdf(z)) - math.log(sigma) - lg - float(d.logpdf(y))
    # log|y - x_beta| = log_y + log1p(-x_beta * exp(-log_y))
    u = log_y + math.log1p(-x_beta * math.exp(-log_y)) - math.log(sigma)
    return float(d.log_abs_logpdf(u)) - math.log(sigma) - lg - float(d.log_abs_logpdf(log_y))


def limit_ratio_location_scale(d: ErrorDensity, x_beta, sigma, y=None, *, log_y=None):
    return math.exp(log_limit_ratio_location_scale(d, x_beta, sigma, y, log_y=log_y))


def log_glm_limit_ratio(d: RobustGamma, mu, y=None, *, log_y=None):
    """Log of ``[f(y/mu)/mu] / f(y)`` for the robust gamma density."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    if log_y is None:
        if y <= 0:
            raise ValueError("y must be positive")
        log_y = math.log(y)
    if log_y < 0 and not d.has_left_tail:
        raise ConfigurationError(
            "small-outlier limit requested but the density has no left tail "
            "(needs nu > 1 and c < sqrt(nu))")
    log_mu = math.log(mu)
    return float(d.logpdf_logz(log_y - log_mu)) - log_mu - float(d.logpdf_logz(log_y))


def glm_limit_ratio(d: RobustGamma, mu, y=None, *, log_y=None):
    return math.exp(log_glm_limit_ratio(d, mu, y, log_y=log_y))


def glm_term_logpdf(d: RobustGamma, log_mu, y):
    """``log[f(y/mu)/mu]`` as a function of ``log mu``."""
    log_mu = np.asarray(log_mu, dtype=float)
    return d.logpdf_logz(math.log(y) - log_mu) - log_mu


def glm_term_mode(d: RobustGamma, y: float) -> tuple[float, float]:
    """Numeric argmax over ``mu`` of ``f(y/mu)/mu`` and the max value."""
    ly = math.log(y)
    res = optimize.minimize_scalar(
        lambda lm: -float(glm_term_logpdf(d, lm, y)),
        bracket=(ly - 1.0, ly + 0.1, ly + 1.0),
        method="brent", tol=1e-12,
    )
    return math.exp(res.x), math.exp(-res.fun)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def _quad(f, a, b, tol, **kw):
    val, err = integrate.quad(f, a, b, epsabs=0, epsrel=tol * 1e-3, limit=400, **kw)
    if not (err <= tol * max(abs(val), 1e-300)):
        raise QuadratureError("quadrature did not reach tolerance", val, err)
    return val


def normalization_integral(density, tol: float = 1e-8) -> float:
    """Total mass of a density; the central part by quadrature, tails in closed form."""
    if isinstance(density, LPTN):
        th = density.theta
        central = _quad(lambda y: float(density.pdf(y)), -th, th, tol)
        return central + 2 * density.tail_mass()
    if isinstance(density, RobustGamma):
        lo = density.z_l if density.has_left_tail else 0.0
        mid = _quad(lambda z: math.exp(float(density.logpdf_logz(math.log(z)))) if z > 0 else 0.0,
                    lo, density.z_r, tol)
        left = density.left_tail_mass() if density.has_left_tail else 0.0
        return mid + density.right_tail_mass() + left
    if isinstance(density, ErrorDensity):
        half = _quad(lambda y: float(density.pdf(y)), 0.0, np.inf, tol)
        return 2 * half
    raise TypeError(f"unsupported density {density!r}")
