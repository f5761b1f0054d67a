"""Closed-form posterior for Normal errors under the conjugate prior."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .model import ConjugatePrior, Dataset
from .rng import make_rng
from .special import LOG_SQRT_2PI, log_gamma


@dataclass(frozen=True, eq=False)
class ConjugatePosterior:
    """``sigma^2 | y ~ InvGamma(ig_shape, ig_scale)``, ``beta | sigma, y ~ N(beta_hat, sigma^2 A^{-1})``.

    Attributes
    ----------
    beta_hat : ndarray
        ``A^{-1} X'y`` with ``A = X'X + I``.
    precision : ndarray
        The matrix ``A``.
    ig_shape, ig_scale : float
        Inverse-gamma parameters of the posterior on ``sigma^2``.
    """

    beta_hat: np.ndarray
    precision: np.ndarray
    ig_shape: float
    ig_scale: float
    log_det_precision: float
    prior: ConjugatePrior
    n: int

    @property
    def p(self) -> int:
        return self.beta_hat.shape[0]

    @property
    def sigma2_mean(self) -> float:
        if self.ig_shape <= 1:
            return math.inf
        return self.ig_scale / (self.ig_shape - 1)

    @property
    def beta_cov(self) -> np.ndarray:
        """Marginal posterior covariance of ``beta`` (a multivariate t)."""
        return self.sigma2_mean * linalg.inv(self.precision)

    @property
    def beta_sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.beta_cov))

    @property
    def sigma_mean(self) -> float:
        """``E[sigma | y] = sqrt(b) Gamma(a - 1/2) / Gamma(a)`` for the inverse-gamma posterior."""
        a = self.ig_shape
        return math.exp(0.5 * math.log(self.ig_scale) + log_gamma(a - 0.5) - log_gamma(a))

    @property
    def gamma_mean(self) -> float:
        """``E[log sigma^2 | y] = log(ig_scale) - digamma(ig_shape)``."""
        from scipy.special import digamma
        return math.log(self.ig_scale) - float(digamma(self.ig_shape))

    def log_marginal(self) -> float:
        """Log marginal likelihood ``log m(y)``."""
        a, b = self.prior.a, self.prior.b
        return (a * math.log(b) - log_gamma(a) + log_gamma(self.ig_shape)
                - self.ig_shape * math.log(self.ig_scale)
                - self.n * LOG_SQRT_2PI - 0.5 * self.log_det_precision)

    def log_density(self, beta, gamma):
        """Normalized posterior log density in ``(beta, gamma = log sigma^2)``."""
        beta = np.asarray(beta, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        e = np.exp(-gamma)
        d = beta - self.beta_hat
        quad = np.einsum("...i,ij,...j->...", d, self.precision, d)
        lig = (self.ig_shape * math.log(self.ig_scale) - log_gamma(self.ig_shape)
               - self.ig_shape * gamma - self.ig_scale * e)
        lbeta = -self.p * LOG_SQRT_2PI - 0.5 * self.p * gamma + 0.5 * self.log_det_precision - 0.5 * e * quad
        out = lig + lbeta
        return float(out) if np.ndim(out) == 0 else out

    def sample(self, size: int, seed=None) -> np.ndarray:
        """Exact draws of ``(beta, gamma)`` as rows of shape ``(size, p + 1)``."""
        rng = make_rng(seed)
        tau = self.ig_scale / rng.gamma(self.ig_shape, 1.0, size=size)
        chol = linalg.cholesky(self.precision, lower=False)
        z = rng.standard_normal((size, self.p))
        beta = self.beta_hat + np.sqrt(tau)[:, None] * linalg.solve_triangular(chol, z.T).T
        return np.column_stack([beta, np.log(tau)])


def normal_conjugate_posterior(data: Dataset, prior: ConjugatePrior = ConjugatePrior()) -> ConjugatePosterior:
    X, y = data.X, data.y
    A = X.T @ X + np.eye(data.p)
    cf = linalg.cho_factor(A, lower=True)
    beta_hat = linalg.cho_solve(cf, X.T @ y)
    log_det = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    shape = prior.a + 0.5 * data.n
    scale = prior.b + 0.5 * (float(y @ y) - float(beta_hat @ A @ beta_hat))
    return ConjugatePosterior(beta_hat, A, shape, scale, log_det, prior, data.n)
