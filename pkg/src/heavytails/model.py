"""Posterior densities for the heavy-tailed linear model and the robust gamma GLM.

All linear-model densities live in the unconstrained coordinates
``(beta, gamma)`` with ``gamma = log sigma^2``; the Jacobian of
``tau = exp(gamma)`` is folded into the prior on ``gamma``, so
``exp(log_posterior)`` integrates over ``(beta, gamma)`` to the marginal
likelihood. Functions accept a single point (``beta`` of shape ``(p,)``)
or broadcast over a batch (``beta`` of shape ``(..., p)``).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .densities import (
    ConfigurationError,
    ErrorDensity,
    RobustGamma,
    TailClass,
    TailClassError,
    TailKind,
    error_density_from_dict,
    error_density_to_dict,
    log_g_sigma,
)
from .rng import make_rng
from .special import LOG_SQRT_2PI, log_gamma


class ImproperPosteriorError(ValueError):
    """The requested (limiting) posterior is not guaranteed to be proper."""


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError(f"X has shape {X.shape} but y has {y.shape[0]} rows")
        if X.shape[1] < 1:
            raise ValueError("design matrix needs at least one column")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset entries must be finite")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def with_y(self, y) -> "Dataset":
        return Dataset(self.X, y)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.X[idx], self.y[idx])

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x_{j + 1}" for j in range(self.p)] + ["y"])
        for row, yi in zip(self.X, self.y):
            w.writerow([format(v, ".17g") for v in row] + [format(yi, ".17g")])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "y" or not all(h.startswith("x_") for h in header[:-1]):
            raise ValueError(f"{path}: expected header x_1..x_p,y, got {header}")
        arr = np.array([[float(v) for v in r] for r in body], dtype=float)
        return cls(arr[:, :-1], arr[:, -1])


def simulate_dataset(n: int = 20, seed: int = 0, beta=(1.0, 1.0), sigma: float = 1.0) -> Dataset:
    """Intercept plus covariate ``1..n``; ``y = 1 + x + eps`` with standard normal errors."""
    if n < 2:
        raise ValueError("need n >= 2")
    rng = make_rng(seed)
    x = np.arange(1, n + 1, dtype=float)
    X = np.column_stack([np.ones(n), x])
    y = X @ np.asarray(beta, dtype=float) + sigma * rng.standard_normal(n)
    return Dataset(X, y)


def simulate_location_dataset(n: int = 6, seed: int = 0, loc: float = 1.0) -> Dataset:
    """Intercept-only design (p = 1) with standard normal errors around ``loc``."""
    rng = make_rng(seed)
    return Dataset(np.ones((n, 1)), loc + rng.standard_normal(n))


def simulate_glm_dataset(n: int = 20, seed: int = 0, nu: float = 5.0, beta=(0.5, 1.0)) -> Dataset:
    """Gamma GLM data with log link: ``y_i = mu_i Z_i``, ``Z_i ~ Gamma(nu, mean 1)``, covariate ``i/n``."""
    rng = make_rng(seed)
    x = np.arange(1, n + 1, dtype=float) / n
    X = np.column_stack([np.ones(n), x])
    mu = np.exp(X @ np.asarray(beta, dtype=float))
    return Dataset(X, mu * rng.gamma(nu, 1.0 / nu, size=n))


@dataclass(frozen=True, eq=False)
class OutlierPath:
    """Observations as functions of ``omega``.

    Linear model: ``y_i = sign_i (a_i + b_i omega)``. GLM: non-outliers stay
    at ``a_i``; large outliers are ``b_i omega`` and small ones
    ``1 / (b_i omega)`` (``direction`` entries ``"large"``/``"small"``).
    """

    a: np.ndarray
    b: np.ndarray
    sign: np.ndarray | None = None
    direction: tuple | None = None

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float)
        if a.shape != b.shape:
            raise ValueError("a and b must have the same length")
        if np.any(a < 0):
            raise ValueError("a_i must be nonnegative")
        if np.any((b != 0) & (b < 1)):
            raise ValueError("b_i must be 0 (non-outlier) or >= 1 (outlier)")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if self.sign is not None:
            sign = np.array(self.sign, dtype=float)
            if not np.all(np.isin(sign, (-1.0, 1.0))):
                raise ValueError("signs must be +1 or -1")
            object.__setattr__(self, "sign", sign)
        if self.direction is not None:
            d = tuple(self.direction)
            for i in self.outliers:
                if d[i] not in ("large", "small"):
                    raise ValueError(f"outlier {i} needs direction 'large' or 'small'")
            object.__setattr__(self, "direction", d)

    @property
    def outliers(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.b >= 1))

    @property
    def is_glm(self) -> bool:
        return self.direction is not None

    def apply(self, omega: float) -> np.ndarray:
        if omega < 0:
            raise ValueError("omega must be nonnegative")
        if not self.is_glm:
            sign = np.ones_like(self.a) if self.sign is None else self.sign
            return sign * (self.a + self.b * omega)
        y = self.a.copy()
        for i in self.outliers:
            if self.direction[i] == "large":
                y[i] = self.b[i] * omega
            else:
                if omega <= 0:
                    raise ValueError("small outliers need omega > 0")
                y[i] = 1.0 / (self.b[i] * omega)
        return y

    @classmethod
    def from_dataset(cls, data: Dataset, outliers: Sequence[int], slope: float = 1.0) -> "OutlierPath":
        """Linear path whose base configuration (``omega = 0``) is ``data.y``."""
        b = np.zeros(data.n)
        b[list(outliers)] = slope
        sign = np.where(data.y < 0, -1.0, 1.0)
        return cls(np.abs(data.y), b, sign)

    @classmethod
    def glm_from_dataset(cls, data: Dataset, large=(), small=(), slope: float = 1.0) -> "OutlierPath":
        b = np.zeros(data.n)
        direction = [None] * data.n
        for i in large:
            b[i], direction[i] = slope, "large"
        for i in small:
            b[i], direction[i] = slope, "small"
        return cls(np.array(data.y), b, None, tuple(direction))


def apply_outlier_path(path: OutlierPath, omega: float) -> np.ndarray:
    return path.apply(omega)


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConjugatePrior:
    """``beta | sigma ~ N(0, sigma^2 I)``, ``sigma^2 ~ InvGamma(a, b)``."""

    a: float = 2.0
    b: float = 2.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("inverse-gamma shape and scale must be positive")

    @property
    def shape_a(self):
        return self.a

    def log_density(self, beta, gamma):
        beta = np.asarray(beta, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        p = beta.shape[-1]
        e = np.exp(-gamma)
        # inverse-gamma on tau = e^gamma, times the Jacobian e^gamma
        lig = self.a * math.log(self.b) - log_gamma(self.a) - self.a * gamma - self.b * e
        lbeta = -p * LOG_SQRT_2PI - 0.5 * p * gamma - 0.5 * e * np.sum(beta * beta, axis=-1)
        return lig + lbeta

    def grad(self, beta, gamma):
        beta = np.asarray(beta, dtype=float)
        with np.errstate(over="ignore"):
            e = float(np.exp(-gamma))
        p = beta.shape[-1]
        return -e * beta, -self.a + self.b * e - 0.5 * p + 0.5 * e * float(beta @ beta)

    def to_dict(self):
        return {"kind": "conjugate", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class SubExponentialBeta:
    """Independent Laplace or Normal priors on each coefficient."""

    family: str = "laplace"
    loc: float | tuple = 0.0
    scale: float | tuple = 1.0

    def __post_init__(self):
        if self.family not in ("laplace", "normal"):
            raise ValueError(f"family must be 'laplace' or 'normal', got {self.family!r}")
        if np.any(np.asarray(self.scale, dtype=float) <= 0):
            raise ValueError("prior scales must be positive")

    def log_density(self, beta):
        beta = np.asarray(beta, dtype=float)
        loc = np.asarray(self.loc, dtype=float)
        scale = np.asarray(self.scale, dtype=float)
        z = (beta - loc) / scale
        if self.family == "laplace":
            terms = -np.abs(z) - np.log(2 * scale)
        else:
            terms = -0.5 * z * z - np.log(scale) - LOG_SQRT_2PI
        return np.sum(np.broadcast_to(terms, beta.shape), axis=-1)

    def grad(self, beta):
        beta = np.asarray(beta, dtype=float)
        loc = np.asarray(self.loc, dtype=float)
        scale = np.asarray(self.scale, dtype=float)
        if self.family == "laplace":
            return -np.sign(beta - loc) / scale
        return -(beta - loc) / scale**2

    def to_dict(self):
        def plain(v):
            return list(v) if isinstance(v, (tuple, list)) else v
        return {"family": self.family, "loc": plain(self.loc), "scale": plain(self.scale)}


@dataclass(frozen=True)
class InvGammaSigma2:
    a: float = 2.0
    b: float = 2.0

    def log_density_gamma(self, gamma):
        gamma = np.asarray(gamma, dtype=float)
        return self.a * math.log(self.b) - log_gamma(self.a) - self.a * gamma - self.b * np.exp(-gamma)

    def grad_gamma(self, gamma):
        with np.errstate(over="ignore"):
            return -self.a + self.b * float(np.exp(-gamma))

    def to_dict(self):
        return {"kind": "inv_gamma", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class LogNormalSigma2:
    """``log sigma^2 ~ N(m, s^2)``; all inverse moments are finite."""

    m: float = 0.0
    s: float = 1.0

    def log_density_gamma(self, gamma):
        z = (np.asarray(gamma, dtype=float) - self.m) / self.s
        return -0.5 * z * z - math.log(self.s) - LOG_SQRT_2PI

    def grad_gamma(self, gamma):
        return -(gamma - self.m) / self.s**2

    def to_dict(self):
        return {"kind": "lognormal", "m": self.m, "s": self.s}


@dataclass(frozen=True)
class IndependentPrior:
    """Coefficients independent and sub-exponential, independent of ``sigma^2``."""

    beta: SubExponentialBeta = field(default_factory=SubExponentialBeta)
    sigma2: InvGammaSigma2 | LogNormalSigma2 = field(default_factory=LogNormalSigma2)

    @property
    def shape_a(self):
        return self.sigma2.a if isinstance(self.sigma2, InvGammaSigma2) else None

    def log_density(self, beta, gamma):
        return self.beta.log_density(beta) + self.sigma2.log_density_gamma(gamma)

    def grad(self, beta, gamma):
        return self.beta.grad(beta), self.sigma2.grad_gamma(gamma)

    def to_dict(self):
        return {"kind": "independent", "beta": self.beta.to_dict(), "sigma2": self.sigma2.to_dict()}


def prior_from_dict(cfg: dict):
    kind = cfg.get("kind", "conjugate")
    if kind == "conjugate":
        return ConjugatePrior(float(cfg.get("a", 2.0)), float(cfg.get("b", 2.0)))
    if kind == "independent":
        beta = beta_prior_from_dict(cfg.get("beta", {}))
        s2 = cfg.get("sigma2", {"kind": "lognormal"})
        if s2.get("kind") == "inv_gamma":
            sigma2 = InvGammaSigma2(float(s2.get("a", 2.0)), float(s2.get("b", 2.0)))
        else:
            sigma2 = LogNormalSigma2(float(s2.get("m", 0.0)), float(s2.get("s", 1.0)))
        return IndependentPrior(beta, sigma2)
    raise ConfigurationError(f"unknown prior kind {kind!r}")


def beta_prior_from_dict(cfg: dict) -> SubExponentialBeta:
    def tup(v):
        return tuple(float(x) for x in v) if isinstance(v, (list, tuple)) else float(v)
    return SubExponentialBeta(cfg.get("family", "laplace"), tup(cfg.get("loc", 0.0)),
                              tup(cfg.get("scale", 1.0)))


# ---------------------------------------------------------------------------
# linear model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParameterPoint:
    beta: np.ndarray
    gamma: float

    @property
    def sigma(self) -> float:
        return math.exp(self.gamma / 2)

    def flat(self) -> np.ndarray:
        return np.append(np.asarray(self.beta, dtype=float), self.gamma)

    @classmethod
    def from_flat(cls, theta) -> "ParameterPoint":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:-1], float(theta[-1]))


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Heavy-tailed linear regression with its prior and data.

    ``scale_power`` adds ``scale_power * log(sigma)`` to the log density;
    it carries the ``g(sigma)^{|O|}`` trace term of a limiting posterior.
    """

    error: ErrorDensity
    prior: ConjugatePrior | IndependentPrior
    data: Dataset
    outliers: tuple = ()
    scale_power: float = 0.0

    def __post_init__(self):
        out = tuple(sorted(int(i) for i in self.outliers))
        if any(i < 0 or i >= self.data.n for i in out) or len(set(out)) != len(out):
            raise ValueError(f"outlier indices {out} invalid for n={self.data.n}")
        object.__setattr__(self, "outliers", out)

    @property
    def dim(self) -> int:
        return self.data.p + 1

    @property
    def inliers(self) -> tuple[int, ...]:
        o = set(self.outliers)
        return tuple(i for i in range(self.data.n) if i not in o)

    def with_data(self, data: Dataset) -> "ModelSpec":
        return replace(self, data=data)

    def log_likelihood(self, beta, gamma):
        beta = np.asarray(beta, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        if self.data.n == 0:
            return np.zeros(np.broadcast_shapes(beta.shape[:-1], gamma.shape))
        resid = self.data.y - beta @ self.data.X.T
        z = resid * np.exp(-0.5 * gamma)[..., None]
        return np.sum(self.error.logpdf(z), axis=-1) - 0.5 * self.data.n * gamma

    def log_posterior(self, beta, gamma):
        """Unnormalized log posterior in ``(beta, gamma)``; its integral is the marginal likelihood."""
        gamma = np.asarray(gamma, dtype=float)
        out = (self.prior.log_density(beta, gamma) + self.log_likelihood(beta, gamma)
               + 0.5 * self.scale_power * gamma)
        return float(out) if np.ndim(out) == 0 else out

    def grad_log_posterior(self, beta, gamma) -> tuple[np.ndarray, float]:
        beta = np.asarray(beta, dtype=float)
        gamma = float(gamma)
        g_beta, g_gamma = self.prior.grad(beta, gamma)
        with np.errstate(over="ignore"):
            s_inv = float(np.exp(-0.5 * gamma))
        resid = self.data.y - self.data.X @ beta
        z = resid * s_inv
        dl = self.error.dlogpdf(z)
        g_beta = g_beta - s_inv * (self.data.X.T @ dl)
        g_gamma = g_gamma - 0.5 * float(dl @ z) - 0.5 * self.data.n + 0.5 * self.scale_power
        return g_beta, float(g_gamma)

    # flat-vector interface for the sampler: theta = (beta_1..beta_p, gamma)
    def logp_flat(self, theta) -> float:
        return float(self.log_posterior(theta[:-1], theta[-1]))

    def grad_flat(self, theta) -> np.ndarray:
        gb, gg = self.grad_log_posterior(theta[:-1], theta[-1])
        out = np.empty(gb.size + 1)
        out[:-1] = gb
        out[-1] = gg
        return out

    def logp_and_grad(self, theta):
        return self.logp_flat(theta), self.grad_flat(theta)

    def limiting(self, check: bool = True) -> "ModelSpec":
        """Model for the limiting posterior: non-outliers only, plus the trace term.

        Raises :class:`ImproperPosteriorError` when the outlier count breaks
        the sample-size condition (``check=False`` skips that guard).
        """
        tail = self.error.tail
        if tail.kind is TailKind.EXPONENTIAL:
            raise TailClassError("no limiting posterior for exponential-tailed errors")
        n_out = len(self.outliers)
        n_in = self.data.n - n_out
        if check and n_out:
            if tail.kind is TailKind.REGULAR and not n_in > tail.alpha * n_out:
                raise ImproperPosteriorError(
                    f"|O^c| = {n_in} must exceed alpha |O| = {tail.alpha * n_out:g}")
            if tail.kind is TailKind.LOG_REGULAR and not n_in >= n_out:
                raise ImproperPosteriorError(f"|O^c| = {n_in} must be at least |O| = {n_out}")
        power = tail.alpha * n_out if tail.kind is TailKind.REGULAR else 0.0
        return ModelSpec(self.error, self.prior, self.data.subset(list(self.inliers)), (),
                         self.scale_power + power)

    def log_limiting_posterior(self, beta, gamma):
        return self.limiting().log_posterior(beta, gamma)

    def to_dict(self) -> dict:
        return {
            "error": error_density_to_dict(self.error),
            "prior": self.prior.to_dict(),
            "outliers": list(self.outliers),
        }


def log_posterior(m: ModelSpec, point: ParameterPoint) -> float:
    return m.log_posterior(point.beta, point.gamma)


def grad_log_posterior(m: ModelSpec, point: ParameterPoint):
    return m.grad_log_posterior(point.beta, point.gamma)


def log_limiting_posterior(m: ModelSpec, point: ParameterPoint) -> float:
    return m.log_limiting_posterior(point.beta, point.gamma)


# ---------------------------------------------------------------------------
# gamma GLM
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GlmSpec:
    """Robust gamma GLM with log link and fixed shape; the parameter is ``beta`` only."""

    density: RobustGamma
    prior: SubExponentialBeta
    data: Dataset
    outliers: tuple = ()

    def __post_init__(self):
        if np.any(self.data.y <= 0):
            raise ValueError("gamma GLM observations must be positive")
        object.__setattr__(self, "outliers", tuple(sorted(int(i) for i in self.outliers)))

    @property
    def dim(self) -> int:
        return self.data.p

    @property
    def inliers(self):
        o = set(self.outliers)
        return tuple(i for i in range(self.data.n) if i not in o)

    def with_data(self, data: Dataset) -> "GlmSpec":
        return replace(self, data=data)

    def log_terms(self, beta):
        """Per-observation ``log[f(y_i/mu_i)/mu_i]`` with ``mu_i = exp(x_i' beta)``."""
        eta = np.asarray(beta, dtype=float) @ self.data.X.T
        return self.density.logpdf_logz(np.log(self.data.y) - eta) - eta

    def log_posterior(self, beta):
        out = self.prior.log_density(beta) + np.sum(self.log_terms(beta), axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def grad_log_posterior(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        eta = self.data.X @ beta
        t = np.log(self.data.y) - eta
        dterm = -self.density.dlogpdf_logz(t) - 1.0
        return self.prior.grad(beta) + self.data.X.T @ dterm

    def logp_flat(self, theta) -> float:
        return float(self.log_posterior(theta))

    def grad_flat(self, theta) -> np.ndarray:
        return self.grad_log_posterior(theta)

    def logp_and_grad(self, theta):
        return self.logp_flat(theta), self.grad_flat(theta)

    def limiting(self) -> "GlmSpec":
        """Limiting posterior: the outlier terms drop out entirely."""
        return GlmSpec(self.density, self.prior, self.data.subset(list(self.inliers)), ())


def glm_log_posterior(m: GlmSpec, beta) -> float:
    return m.log_posterior(beta)


# ---------------------------------------------------------------------------
# breakdown
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BreakdownVerdict:
    n: int
    n_outliers: int
    tail_kind: str
    alpha: float
    assumption3_holds: bool
    refined_margin: float
    moment_order: int
    refined_holds_for_moment: bool
    breakdown_fraction: float

    def to_dict(self):
        return dict(self.__dict__)


def breakdown_check(n: int, n_outliers: int, tail: TailClass, prior_shape_a: float,
                    moment_order: int = 1) -> BreakdownVerdict:
    """Sample-size condition and its refinement with the inverse-gamma shape ``a``.

    The refined margin is ``(|O^c| - alpha |O|)/2 + a``; the posterior
    is proper when it is positive and has finite moments of order ``k``
    when it exceeds ``k``. For log-regularly varying tails there is no
    trace term, so ``alpha`` drops out of the margin.
    """
    if not 0 <= n_outliers <= n:
        raise ValueError("need 0 <= |O| <= n")
    n_in = n - n_outliers
    if tail.kind is TailKind.REGULAR:
        holds = n_in > tail.alpha * n_outliers
        margin = (n_in - tail.alpha * n_outliers) / 2 + prior_shape_a
        frac = 1.0 / (tail.alpha + 1.0)
    elif tail.kind is TailKind.LOG_REGULAR:
        holds = n_in >= n_outliers
        margin = n_in / 2 + prior_shape_a
        frac = 0.5
    else:
        raise TailClassError("breakdown analysis needs a heavy-tailed error density")
    return BreakdownVerdict(n, n_outliers, tail.kind.value, float(tail.alpha), bool(holds),
                            float(margin), int(moment_order), bool(margin > moment_order), frac)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def model_spec_from_dict(cfg: dict, data: Dataset) -> ModelSpec:
    return ModelSpec(error_density_from_dict(cfg["error"]),
                     prior_from_dict(cfg.get("prior", {})),
                     data, tuple(cfg.get("outliers", ())))


def glm_spec_from_dict(cfg: dict, data: Dataset) -> GlmSpec:
    err = cfg.get("error", {})
    dens = RobustGamma(float(err.get("nu", 5.0)), float(err.get("c", 1.6)))
    return GlmSpec(dens, beta_prior_from_dict(cfg.get("prior", {"family": "normal", "scale": 10.0})),
                   data, tuple(cfg.get("outliers", ())))


def load_model_spec(path, data: Dataset) -> ModelSpec:
    return model_spec_from_dict(json.loads(Path(path).read_text()), data)


def save_model_spec(m: ModelSpec, path) -> None:
    Path(path).write_text(json.dumps(m.to_dict(), indent=2, sort_keys=True) + "\n")
