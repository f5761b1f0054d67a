"""Outlier sweeps, breakdown reports and the diagnostic suite, with CSV/JSON output."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import densities as dens
from .conjugate import normal_conjugate_posterior
from .densities import (
    LPTN,
    ErrorDensity,
    Normal,
    RobustGamma,
    StudentT,
    TailKind,
    error_density_from_dict,
)
from .marginal import (
    gaussian_tail_bound_check,
    glm_log_theorem_ratio,
    lemma_b2_sequence,
    log_theorem_ratio,
    marginal_quadrature,
)
from .model import (
    ConjugatePrior,
    Dataset,
    GlmSpec,
    ImproperPosteriorError,
    ModelSpec,
    OutlierPath,
    SubExponentialBeta,
    beta_prior_from_dict,
    breakdown_check,
    prior_from_dict,
    simulate_dataset,
    simulate_glm_dataset,
)
from .sampler import HmcConfig, find_mode, hmc_chains, posterior_summary

log = logging.getLogger(__name__)

DEFAULT_SEED = 20250101
CSV_HEADER = ("omega", "model_label", "estimator", "value", "mcse", "n_samples", "seed")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepRecord:
    omega: float
    model_label: str
    estimator: str
    value: float
    mcse: float
    n_samples: int
    seed: int

    def sort_key(self):
        return (self.model_label, self.estimator, self.omega)


def omega_grid(spec) -> list[float]:
    """Either an explicit list or ``{"start": e0, "stop": e1, "num": k}`` (log10 exponents)."""
    if isinstance(spec, dict):
        grid = np.logspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
        extra = [0.0] if spec.get("include_zero") else []
        return extra + [float(g) for g in grid]
    return [float(g) for g in spec]


# ---------------------------------------------------------------------------
# linear sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    n: int = 20
    data_seed: int = DEFAULT_SEED
    prior: dict = field(default_factory=lambda: {"kind": "conjugate", "a": 2.0, "b": 2.0})
    models: tuple = ({"family": "normal"}, {"family": "student", "nu": 4.0},
                     {"family": "student", "nu": 10.0})
    outliers: tuple | None = None
    slope: float = 1.0
    omegas: object = field(default_factory=lambda: {"start": 0, "stop": 4, "num": 17})
    coef_index: int = 1
    sampler: dict = field(default_factory=dict)
    seed: int = DEFAULT_SEED
    theorem_ratio: bool = False
    limiting: bool = True
    workers: int = 1

    @classmethod
    def from_dict(cls, cfg: dict) -> "SweepConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(cfg) - known
        if unknown:
            raise ConfigError(f"unknown sweep config keys: {sorted(unknown)}")
        cfg = dict(cfg)
        for key in ("models", "outliers"):
            if cfg.get(key) is not None:
                cfg[key] = tuple(cfg[key])
        out = cls(**cfg)
        out.validate()
        return out

    def validate(self):
        if self.n < 2:
            raise ConfigError("n must be at least 2")
        if not self.models:
            raise ConfigError("at least one model is required")
        for mcfg in self.models:
            error_density_from_dict(mcfg)
        if any(not 0 <= i < self.n for i in self.outlier_idx):
            raise ConfigError("outlier index out of range")
        if any(w < 0 for w in omega_grid(self.omegas)):
            raise ConfigError("omega grid must be nonnegative")
        HmcConfig.from_dict(self.sampler)

    @property
    def outlier_idx(self) -> tuple:
        return (self.n - 1,) if self.outliers is None else tuple(self.outliers)


def _fit_mean(model, cfg: HmcConfig, coef: int, inits):
    init = find_mode(model, inits)
    chains = hmc_chains(model, cfg, init)
    div = sum(c.divergence_count for c in chains)
    if div:
        log.warning("%d divergent transitions", div)
    s = posterior_summary(chains)[coef]
    return s.mean, s.mcse, sum(c.draws.shape[0] for c in chains)


def _linear_inits(data: Dataset, inliers) -> list:
    clean = data.subset(list(inliers))
    inits = []
    for d in (clean, data):
        post = normal_conjugate_posterior(d)
        inits.append(np.append(post.beta_hat, math.log(post.sigma2_mean)))
    return inits


def _sweep_job(job):
    kind, model, hmc, coef, omega, label, seed, extra = job
    if kind == "hmc":
        inits = extra
        mean, mcse, ns = _fit_mean(model, hmc, coef, inits)
        return [SweepRecord(omega, label, "posterior_mean_beta2", mean, mcse, ns, seed)]
    if kind == "ratio":
        path = extra
        val = math.exp(log_theorem_ratio(model, path, omega))
        return [SweepRecord(omega, label, "theorem_ratio", val, 0.0, 0, seed)]
    if kind == "glm_ratio":
        path = extra
        val = math.exp(glm_log_theorem_ratio(model, path, omega))
        return [SweepRecord(omega, label, "theorem_ratio", val, 0.0, 0, seed)]
    raise ValueError(kind)


def _run_jobs(jobs, workers):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    return [r for rs in results for r in rs]


def sweep_run(config: SweepConfig) -> list[SweepRecord]:
    """Posterior mean of one coefficient along an outlier path, per error model.

    Normal-error rows come from the closed-form posterior (mcse 0). For
    heavy-tailed models the limiting posterior is fitted once and its mean
    is reported at every omega, provided the sample-size condition holds.
    """
    config.validate()
    base = simulate_dataset(config.n, config.data_seed)
    path = OutlierPath.from_dataset(base, config.outlier_idx, config.slope)
    prior = prior_from_dict(config.prior)
    hmc = HmcConfig.from_dict({"seed": config.seed, **config.sampler})
    omegas = omega_grid(config.omegas)
    coef = config.coef_index
    records, jobs = [], []
    for mcfg in config.models:
        err = error_density_from_dict(mcfg)
        label = err.label
        if isinstance(err, Normal):
            if not isinstance(prior, ConjugatePrior):
                raise ConfigError("the Normal model needs the conjugate prior")
            for om in omegas:
                post = normal_conjugate_posterior(base.with_y(path.apply(om)), prior)
                records.append(SweepRecord(om, label, "posterior_mean_beta2",
                                           float(post.beta_hat[coef]), 0.0, 0, config.seed))
            continue
        for om in omegas:
            data = base.with_y(path.apply(om))
            m = ModelSpec(err, prior, data, path.outliers)
            jobs.append(("hmc", m, hmc, coef, om, label, config.seed, _linear_inits(data, m.inliers)))
            if config.theorem_ratio and om > 0:
                jobs.append(("ratio", ModelSpec(err, prior, base), None, coef, om, label, config.seed, path))
        if config.limiting:
            m = ModelSpec(err, prior, base, path.outliers)
            try:
                lim = m.limiting()
            except ImproperPosteriorError as exc:
                log.info("%s: no limiting rows (%s)", label, exc)
                continue
            mean, mcse, ns = _fit_mean(lim, hmc, coef, _linear_inits(lim.data, range(lim.data.n)))
            records.extend(SweepRecord(om, label, "limiting_mean_beta2", mean, mcse, ns, config.seed)
                           for om in omegas)
    records.extend(_run_jobs(jobs, config.workers))
    return sorted(records, key=SweepRecord.sort_key)


# ---------------------------------------------------------------------------
# GLM sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GlmSweepConfig:
    n: int = 20
    data_seed: int = DEFAULT_SEED
    nu: float = 5.0
    c: float = 1.6
    beta_true: tuple = (0.5, 1.0)
    prior: dict = field(default_factory=lambda: {"family": "normal", "loc": 0.0, "scale": 10.0})
    large: tuple = (19,)
    small: tuple = (0,)
    slope: float = 1.0
    omegas: object = field(default_factory=lambda: {"start": 0, "stop": 4, "num": 9})
    coef_index: int = 1
    sampler: dict = field(default_factory=dict)
    seed: int = DEFAULT_SEED
    theorem_ratio: bool = True
    workers: int = 1

    @classmethod
    def from_dict(cls, cfg: dict) -> "GlmSweepConfig":
        unknown = set(cfg) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown glm-sweep config keys: {sorted(unknown)}")
        cfg = dict(cfg)
        for key in ("beta_true", "large", "small"):
            if key in cfg:
                cfg[key] = tuple(cfg[key])
        out = cls(**cfg)
        out.validate()
        return out

    def validate(self):
        RobustGamma(self.nu, self.c)
        idx = set(self.large) | set(self.small)
        if len(idx) != len(self.large) + len(self.small) or any(not 0 <= i < self.n for i in idx):
            raise ConfigError("large/small outlier indices must be distinct and in range")
        if any(w <= 0 for w in omega_grid(self.omegas)) and self.small:
            raise ConfigError("small outliers need omega > 0")
        HmcConfig.from_dict(self.sampler)


def glm_sweep_run(config: GlmSweepConfig) -> list[SweepRecord]:
    config.validate()
    base = simulate_glm_dataset(config.n, config.data_seed, config.nu, config.beta_true)
    path = OutlierPath.glm_from_dataset(base, config.large, config.small, config.slope)
    density = RobustGamma(config.nu, config.c)
    prior = beta_prior_from_dict(config.prior)
    hmc = HmcConfig.from_dict({"seed": config.seed, **config.sampler})
    label = density.label
    coef = config.coef_index
    omegas = omega_grid(config.omegas)
    jobs = []
    for om in omegas:
        m = GlmSpec(density, prior, base.with_y(path.apply(om)), path.outliers)
        jobs.append(("hmc", m, hmc, coef, om, label, config.seed, [np.zeros(base.p)]))
        if config.theorem_ratio and base.p <= 2:
            jobs.append(("glm_ratio", GlmSpec(density, prior, base), None, coef, om, label,
                         config.seed, path))
    records = _run_jobs(jobs, config.workers)
    lim = GlmSpec(density, prior, base, path.outliers).limiting()
    mean, mcse, ns = _fit_mean(lim, hmc, coef, [np.zeros(base.p)])
    records.extend(SweepRecord(om, label, "limiting_mean_beta2", mean, mcse, ns, config.seed)
                   for om in omegas)
    return sorted(records, key=SweepRecord.sort_key)


# ---------------------------------------------------------------------------
# breakdown report
# ---------------------------------------------------------------------------

def breakdown_run(config: dict) -> list[dict]:
    """Verdicts for each ``{"error": ..., "n_outliers": k}`` case (shared ``n``, ``a``, ``moment_order``)."""
    n = int(config.get("n", 20))
    a = float(config.get("a", 2.0))
    k = int(config.get("moment_order", 1))
    cases = config.get("cases", [
        {"error": {"family": "student", "nu": 10.0}, "n_outliers": 2},
        {"error": {"family": "student", "nu": 10.0}, "n_outliers": 3},
        {"error": {"family": "student", "nu": 4.0}, "n_outliers": 1},
        {"error": {"family": "lptn", "rho": 0.95}, "n_outliers": 10},
    ])
    out = []
    for case in cases:
        err = error_density_from_dict(case["error"])
        v = breakdown_check(n, int(case["n_outliers"]), err.tail, a, k)
        out.append({"model_label": err.label, **v.to_dict()})
    return out


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiagnosticCheck:
    name: str
    passed: bool
    achieved: float
    tolerance: float
    detail: str = ""


def _check(name, achieved, tol, detail=""):
    achieved = float(achieved)
    return DiagnosticCheck(name, bool(achieved <= tol), achieved, float(tol), detail)


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def _continuity(d, points, logpdf):
    # neighbouring floats on either side of each breakpoint
    worst = 0.0
    for x in points:
        lo = float(np.exp(logpdf(np.nextafter(x, -np.inf))))
        hi = float(np.exp(logpdf(np.nextafter(x, np.inf))))
        worst = max(worst, _rel(lo, hi))
    return worst


def diagnostics_run(config: dict | None = None) -> list[DiagnosticCheck]:
    """Numerical property checks; each returns pass/fail with the achieved error."""
    cfg = {"y_far": 1e8, "y_near": 1e-8, "sigmas": [0.5, 1.0, 2.0], "x_betas": [-1.0, 0.0, 1.0],
           "mus": [0.5, 1.0, 2.0, math.e], "limit_tol": 1e-3, **(config or {})}
    lptn = LPTN(0.95)
    t4 = StudentT(4.0)
    rg = RobustGamma(2.0, 1.0)
    out = []

    for d, name in ((lptn, "lptn_rho0.95"), (rg, "robust_gamma_nu2_c1"), (t4, "student_nu4")):
        out.append(_check(f"normalization[{name}]", abs(dens.normalization_integral(d) - 1), 1e-6))
    out.append(_check("lptn_tail_mass", abs(lptn.tail_mass("quad") - (1 - lptn.rho) / 2), 1e-10))
    out.append(_check("robust_gamma_right_tail_mass",
                      abs(rg.right_tail_mass("quad") - rg.gamma_right_prob()), 1e-10))
    out.append(_check("robust_gamma_left_tail_mass",
                      abs(rg.left_tail_mass("quad") - rg.gamma_left_prob()), 1e-10))
    out.append(_check("continuity[lptn theta]", _continuity(lptn, [lptn.theta, -lptn.theta], lptn.logpdf), 1e-12))
    out.append(_check("continuity[robust_gamma z_l,z_r]",
                      _continuity(rg, [math.log(rg.z_l), math.log(rg.z_r)], rg.logpdf_logz), 1e-12))

    y_far = cfg["y_far"]
    for d in (t4, lptn):
        worst = 0.0
        for s in cfg["sigmas"]:
            for xb in cfg["x_betas"]:
                # the ratio is already divided by g(sigma)
                worst = max(worst, abs(dens.limit_ratio_location_scale(d, xb, s, y_far) - 1.0),
                            abs(dens.limit_ratio_location_scale(d, xb, s, -y_far) - 1.0))
        out.append(_check(f"location_scale_limit[{d.label}, |y|={y_far:g}]", worst, cfg["limit_tol"]))
    for y in (y_far, cfg["y_near"]):
        worst = max(abs(dens.glm_limit_ratio(rg, mu, y) - 1.0) for mu in cfg["mus"])
        out.append(_check(f"glm_limit[{rg.label}, y={y:g}]", worst, cfg["limit_tol"]))
    # far-field confirmation of the logarithmic approach, evaluated in log space
    worst = 0.0
    for s in cfg["sigmas"]:
        worst = max(worst, abs(dens.limit_ratio_location_scale(lptn, 0.0, s, log_y=1e5) - 1.0))
    for mu in cfg["mus"]:
        for ly in (1e5, -1e5):
            worst = max(worst, abs(dens.glm_limit_ratio(rg, mu, log_y=ly) - 1.0))
    out.append(_check("log_regular_limits[log|y|=1e5]", worst, cfg["limit_tol"]))

    seq = lemma_b2_sequence(t4.tail, 20, [1.0], [1e2, 1e4])
    out.append(_check("lemma_b2_decay[student_nu4, n=20, |O|=1]", seq[1] / seq[0], 1e-6))
    tb = gaussian_tail_bound_check(1.0, np.linspace(0.1, 10.0, 100))
    out.append(DiagnosticCheck("gaussian_tail_bound[0.1..10]", tb.holds, tb.max_ratio, 1.0))
    y = float(cfg.get("glm_mode_y", 3.0))
    mu_hat, val = dens.glm_term_mode(rg, y)
    out.append(_check("glm_mode_location", _rel(mu_hat, y), 1e-6))
    out.append(_check("glm_mode_bound", _rel(val, rg.mode_bound(y)), 1e-8))

    d6 = Dataset(np.ones((6, 1)), np.array([0.3, 1.2, 0.8, 1.9, 1.1, 0.6]))
    m = ModelSpec(Normal(), ConjugatePrior(2.0, 2.0), d6)
    exact = normal_conjugate_posterior(d6, ConjugatePrior(2.0, 2.0)).log_marginal()
    out.append(_check("marginal_quadrature_vs_closed_form", _rel(math.exp(marginal_quadrature(m) - exact), 1.0), 1e-5))
    return out


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def records_to_csv(records) -> str:
    if not records:
        raise ValueError("no records to emit")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(records, key=SweepRecord.sort_key):
        w.writerow([_fmt(float(r.omega)), r.model_label, r.estimator, _fmt(float(r.value)),
                    _fmt(float(r.mcse)), str(int(r.n_samples)), str(int(r.seed))])
    return buf.getvalue()


def emit_csv(records, path) -> None:
    text = records_to_csv(records)
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def parse_csv(source) -> list[SweepRecord]:
    text = Path(source).read_text() if not isinstance(source, io.StringIO) else source.getvalue()
    rows = list(csv.reader(io.StringIO(text)))
    if tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"unexpected header {rows[0]}")
    return [SweepRecord(float(r[0]), r[1], r[2], float(r[3]), float(r[4]), int(r[5]), int(r[6]))
            for r in rows[1:]]


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def to_json(obj) -> str:
    return json.dumps(obj, default=_jsonable, indent=2, sort_keys=True) + "\n"


def emit_json(obj, path) -> None:
    path = Path(path)
    try:
        path.write_text(to_json(obj))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
