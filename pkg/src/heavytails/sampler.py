"""Hamiltonian Monte Carlo with dual-averaging warmup, plus chain diagnostics.

Targets are objects (or pairs of callables) giving the log density and
its gradient on a flat parameter vector. Chain ``k`` of a multi-chain run
uses a Philox stream keyed by ``seed + k``, so results do not depend on
whether chains run sequentially or in threads.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .rng import make_rng

DIVERGENCE_THRESHOLD = 1000.0


class InitializationError(ValueError):
    """The target is not finite at the initial point."""


@dataclass(frozen=True)
class HmcConfig:
    step_size: float = 0.1
    n_leapfrog: int = 32
    mass_diag: tuple | None = None
    n_warmup: int = 2000
    n_samples: int = 5000
    seed: int = 20250101
    target_accept: float = 0.8
    jitter: float = 0.2
    adapt_mass: bool = True
    n_chains: int = 4

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.n_leapfrog < 1:
            raise ValueError("n_leapfrog must be at least 1")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must lie in [0, 1)")
        if self.mass_diag is not None and any(m <= 0 for m in self.mass_diag):
            raise ValueError("mass_diag entries must be positive")

    @classmethod
    def from_dict(cls, cfg: dict) -> "HmcConfig":
        cfg = dict(cfg)
        if cfg.get("mass_diag") is not None:
            cfg["mass_diag"] = tuple(cfg["mass_diag"])
        return cls(**cfg)


@dataclass(frozen=True, eq=False)
class ChainSamples:
    draws: np.ndarray
    accept_rate: float
    divergence_count: int
    seed: int
    step_size: float = float("nan")
    mass_diag: np.ndarray | None = None


@dataclass(frozen=True)
class _Target:
    logp: Callable
    grad: Callable

    def both(self, x):
        return self.logp(x), self.grad(x)


def _as_target(target) -> _Target:
    if isinstance(target, _Target):
        return target
    if hasattr(target, "logp_flat") and hasattr(target, "grad_flat"):
        return _Target(target.logp_flat, target.grad_flat)
    logp, grad = target
    return _Target(logp, grad)


def leapfrog(grad: Callable, position, momentum, step_size: float, n_steps: int,
             mass_diag=None, grad0=None):
    """Leapfrog trajectory for ``H(q, p) = -log pi(q) + p' M^{-1} p / 2`` with diagonal ``M``.

    Returns ``(position, momentum, gradient at the final position)``.
    """
    q = np.array(position, dtype=float)
    p = np.array(momentum, dtype=float)
    inv_mass = 1.0 if mass_diag is None else 1.0 / np.asarray(mass_diag, dtype=float)
    g = grad(q) if grad0 is None else grad0
    p = p + 0.5 * step_size * g
    for i in range(n_steps):
        q = q + step_size * inv_mass * p
        g = grad(q)
        if not np.all(np.isfinite(g)):
            return q, p, g
        if i < n_steps - 1:
            p = p + step_size * g
    p = p + 0.5 * step_size * g
    return q, p, g


def _kinetic(p, inv_mass):
    return 0.5 * float(np.sum(inv_mass * p * p))


class _DualAveraging:
    """Nesterov dual averaging of ``log(step_size)`` toward a target acceptance rate."""

    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * step_size)
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.t = 0
        self.log_eps = math.log(step_size)

    def update(self, accept_prob):
        self.t += 1
        w = 1.0 / (self.t + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        eta = self.t ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1 - eta) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def final(self):
        return math.exp(self.log_eps_bar)


def _transition(tgt, q, lp, g, eps, n_steps, inv_mass, mass, rng):
    """One HMC step. Returns (q, lp, g, accept_prob, divergent)."""
    p0 = rng.standard_normal(q.shape) * np.sqrt(mass)
    h0 = -lp + _kinetic(p0, inv_mass)
    try:
        # a trajectory that runs off to extreme values is a divergence, not an error
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            q1, p1, g1 = leapfrog(tgt.grad, q, p0, eps, n_steps, mass, grad0=g)
            lp1 = tgt.logp(q1) if np.all(np.isfinite(g1)) else -math.inf
    except (OverflowError, FloatingPointError, ZeroDivisionError):
        return q, lp, g, 0.0, True
    h1 = -lp1 + _kinetic(p1, inv_mass) if np.isfinite(lp1) else math.inf
    dh = h1 - h0
    divergent = not np.isfinite(dh) or abs(dh) > DIVERGENCE_THRESHOLD
    accept_prob = 0.0 if not np.isfinite(dh) else min(1.0, math.exp(-dh)) if dh > 0 else 1.0
    if not divergent and rng.uniform() < accept_prob:
        return q1, lp1, g1, accept_prob, False
    return q, lp, g, accept_prob, divergent


def hmc_run(target, cfg: HmcConfig, init, seed: int | None = None) -> ChainSamples:
    """Single HMC chain: warmup with step-size (and optional mass) adaptation, then sampling.

    ``target`` is a model exposing ``logp_flat``/``grad_flat`` or a
    ``(logp, grad)`` pair. Deterministic given ``seed`` (default ``cfg.seed``).
    """
    tgt = _as_target(target)
    seed = cfg.seed if seed is None else seed
    rng = make_rng(seed)
    q = np.array(init, dtype=float)
    lp = tgt.logp(q)
    g = tgt.grad(q)
    if not (np.isfinite(lp) and np.all(np.isfinite(g))):
        raise InitializationError(f"target not finite at init {q}: logp={lp}")
    d = q.size
    mass = np.ones(d) if cfg.mass_diag is None else np.asarray(cfg.mass_diag, dtype=float)
    if mass.shape != (d,):
        raise ValueError(f"mass_diag has length {mass.size}, target dimension is {d}")
    eps = cfg.step_size

    def n_steps():
        if cfg.jitter == 0:
            return cfg.n_leapfrog
        lo = max(1, int(round(cfg.n_leapfrog * (1 - cfg.jitter))))
        hi = max(lo, int(round(cfg.n_leapfrog * (1 + cfg.jitter))))
        return int(rng.integers(lo, hi + 1))

    # warmup: adapt step size throughout; estimate a diagonal mass from the
    # middle half and restart step-size adaptation for the last quarter
    n_warm = cfg.n_warmup
    lo_w, hi_w = n_warm // 4, (3 * n_warm) // 4
    da = _DualAveraging(eps, cfg.target_accept)
    window = []
    for it in range(n_warm):
        q, lp, g, acc, _ = _transition(tgt, q, lp, g, eps, n_steps(), 1.0 / mass, mass, rng)
        eps = da.update(acc)
        if cfg.adapt_mass and cfg.mass_diag is None and lo_w <= it < hi_w:
            window.append(q)
            if it == hi_w - 1 and len(window) >= 20:
                k = len(window)
                var = (k * np.var(np.array(window), axis=0) + 5e-3) / (k + 5)
                mass = 1.0 / np.maximum(var, 1e-10)
                da = _DualAveraging(eps, cfg.target_accept)
    if n_warm:
        eps = da.final

    draws = np.empty((cfg.n_samples, d))
    n_acc = 0.0
    n_div = 0
    inv_mass = 1.0 / mass
    for it in range(cfg.n_samples):
        q, lp, g, acc, div = _transition(tgt, q, lp, g, eps, n_steps(), inv_mass, mass, rng)
        n_acc += acc
        n_div += int(div)
        draws[it] = q
    if n_div:
        warnings.warn(f"chain with seed {seed}: {n_div} divergent transitions", RuntimeWarning,
                      stacklevel=2)
    return ChainSamples(draws, n_acc / cfg.n_samples, n_div, seed, eps, mass)


def find_mode(target, inits: Sequence, **kw) -> np.ndarray:
    """Highest-density L-BFGS optimum over several starting points."""
    tgt = _as_target(target)

    def negf(x):
        lp = tgt.logp(x)
        g = tgt.grad(x) if np.isfinite(lp) else None
        if g is None or not np.all(np.isfinite(g)):
            return 1e300, np.zeros_like(x)
        return -lp, -g

    best = None
    # line searches may probe absurd points; those just get rejected
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for x0 in inits:
            res = optimize.minimize(negf, np.asarray(x0, dtype=float), jac=True,
                                    method="L-BFGS-B", **kw)
            if best is None or res.fun < best.fun:
                best = res
    return np.asarray(best.x)


def hmc_chains(target, cfg: HmcConfig, init, n_chains: int | None = None,
               parallel: bool = True) -> list[ChainSamples]:
    """Run ``n_chains`` independent chains; chain ``k`` is seeded ``cfg.seed + k``."""
    n_chains = cfg.n_chains if n_chains is None else n_chains
    seeds = [cfg.seed + k for k in range(n_chains)]
    if not parallel or n_chains == 1:
        return [hmc_run(target, cfg, init, s) for s in seeds]
    with ThreadPoolExecutor(max_workers=n_chains) as pool:
        return list(pool.map(lambda s: hmc_run(target, cfg, init, s), seeds))


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    xc = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    return np.fft.irfft(f * np.conj(f), m)[:n] / n


def ess(draws) -> float:
    """Effective sample size by Geyer's initial positive sequence.

    A constant chain has ``ess = n`` by convention.
    """
    x = np.asarray(draws, dtype=float).reshape(-1)
    n = x.size
    if n < 10:
        raise ValueError("ess needs at least 10 draws")
    acov = _autocov(x)
    if acov[0] <= 0:
        return float(n)
    rho = acov / acov[0]
    # sum consecutive pairs while positive; enforce monotone pairs
    tau = -1.0
    prev = math.inf
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        tau += 2 * pair
        prev = pair
    tau = max(tau, 1.0 / math.log10(max(n, 10)))
    return float(n / tau)


@dataclass(frozen=True)
class CoordinateSummary:
    mean: float
    sd: float
    mcse: float
    ess: float


def posterior_summary(chains) -> list[CoordinateSummary]:
    """Per-coordinate mean, sd, mcse and ESS pooled over chains.

    ESS adds across chains; ``mcse = sd / sqrt(ess)``.
    """
    if isinstance(chains, ChainSamples):
        chains = [chains]
    arrays = [c.draws if isinstance(c, ChainSamples) else np.asarray(c, dtype=float) for c in chains]
    arrays = [a[:, None] if a.ndim == 1 else a for a in arrays]
    pooled = np.concatenate(arrays, axis=0)
    out = []
    for j in range(pooled.shape[1]):
        col = pooled[:, j]
        sd = float(np.std(col, ddof=1)) if col.size > 1 else 0.0
        if sd == 0.0:
            out.append(CoordinateSummary(float(col[0]), 0.0, 0.0, float(col.size)))
            continue
        e = sum(ess(a[:, j]) for a in arrays)
        out.append(CoordinateSummary(float(col.mean()), sd, sd / math.sqrt(e), e))
    return out


def transform_summary(chains, fn) -> CoordinateSummary:
    """Summary of a scalar function of the draws (e.g. ``sigma^2 = exp(gamma)``)."""
    cols = [np.asarray(fn(c.draws if isinstance(c, ChainSamples) else c)) for c in chains]
    return posterior_summary([c[:, None] for c in cols])[0]
