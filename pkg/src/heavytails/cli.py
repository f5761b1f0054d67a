"""Command-line entry point: ``heavytails <subcommand> [--config JSON] [--out PATH] [--seed INT]``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .conjugate import normal_conjugate_posterior
from .experiments import (
    DEFAULT_SEED,
    GlmSweepConfig,
    SweepConfig,
    breakdown_run,
    diagnostics_run,
    glm_sweep_run,
    records_to_csv,
    sweep_run,
    to_json,
)
from .model import (
    ConjugatePrior,
    Dataset,
    GlmSpec,
    ModelSpec,
    glm_spec_from_dict,
    model_spec_from_dict,
    simulate_dataset,
    simulate_glm_dataset,
    simulate_location_dataset,
)
from .sampler import HmcConfig, find_mode, hmc_chains, posterior_summary


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SystemExit(f"cannot read config {path}: {exc}")


def _write(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise SystemExit(f"cannot write {out}: {exc}")


def _dataset(cfg: dict, seed: int | None) -> Dataset:
    """``{"csv": path}`` or ``{"kind": "linear"|"location"|"glm", "n": .., "seed": ..}``."""
    data = cfg.get("data", {})
    if "csv" in data:
        return Dataset.from_csv(data["csv"])
    kind = data.get("kind", "linear")
    n = int(data.get("n", 20))
    s = int(data.get("seed", seed if seed is not None else DEFAULT_SEED))
    if kind == "linear":
        return simulate_dataset(n, s)
    if kind == "location":
        return simulate_location_dataset(n, s)
    if kind == "glm":
        return simulate_glm_dataset(n, s, float(data.get("nu", 5.0)))
    raise SystemExit(f"unknown data kind {kind!r}")


def cmd_simulate(args, cfg):
    ds = _dataset({"data": cfg or {}}, args.seed)
    _write(ds.to_csv_text(), args.out)
    return 0


def cmd_conjugate(args, cfg):
    ds = _dataset(cfg, args.seed)
    pr = cfg.get("prior", {})
    post = normal_conjugate_posterior(ds, ConjugatePrior(float(pr.get("a", 2.0)), float(pr.get("b", 2.0))))
    report = {
        "beta_hat": post.beta_hat,
        "precision_matrix": post.precision,
        "ig_shape": post.ig_shape,
        "ig_scale": post.ig_scale,
        "sigma2_mean": post.sigma2_mean,
        "log_marginal": post.log_marginal(),
    }
    _write(to_json(report), args.out)
    return 0


def cmd_fit(args, cfg):
    ds = _dataset(cfg, None)
    seed = args.seed if args.seed is not None else cfg.get("seed", DEFAULT_SEED)
    hmc = HmcConfig.from_dict({**cfg.get("sampler", {}), "seed": seed})
    mcfg = cfg.get("model", {"error": {"family": "student", "nu": 4.0}})
    if mcfg.get("glm"):
        model = glm_spec_from_dict(mcfg, ds)
        inits = [np.zeros(ds.p)]
        names = [f"beta_{j + 1}" for j in range(ds.p)]
    else:
        model = model_spec_from_dict(mcfg, ds)
        if mcfg.get("limiting"):
            model = model.limiting()
        post = normal_conjugate_posterior(model.data)
        inits = [np.append(post.beta_hat, math.log(post.sigma2_mean))]
        names = [f"beta_{j + 1}" for j in range(ds.p)] + ["gamma"]
    chains = hmc_chains(model, hmc, find_mode(model, inits))
    summary = posterior_summary(chains)
    report = {
        "seed": seed,
        "accept_rate": [c.accept_rate for c in chains],
        "divergences": [c.divergence_count for c in chains],
        "summary": {n: s for n, s in zip(names, summary)},
    }
    _write(to_json(report), args.out)
    return 0


def cmd_sweep(args, cfg):
    if args.seed is not None:
        cfg = {**cfg, "seed": args.seed}
    _write(records_to_csv(sweep_run(SweepConfig.from_dict(cfg))), args.out)
    return 0


def cmd_glm_sweep(args, cfg):
    if args.seed is not None:
        cfg = {**cfg, "seed": args.seed}
    _write(records_to_csv(glm_sweep_run(GlmSweepConfig.from_dict(cfg))), args.out)
    return 0


def cmd_breakdown(args, cfg):
    _write(to_json(breakdown_run(cfg)), args.out)
    return 0


def cmd_diagnostics(args, cfg):
    checks = diagnostics_run(cfg)
    _write(to_json({"all_passed": all(c.passed for c in checks), "checks": checks}), args.out)
    failed = [c.name for c in checks if not c.passed]
    if failed:
        print(f"{len(failed)} diagnostic check(s) failed: {', '.join(failed)}", file=sys.stderr)
    return 1 if failed else 0


COMMANDS = {
    "simulate": (cmd_simulate, "write a simulated dataset as CSV"),
    "conjugate": (cmd_conjugate, "closed-form Normal-error posterior"),
    "fit": (cmd_fit, "HMC fit of a model to a dataset"),
    "sweep": (cmd_sweep, "posterior means along an outlier path (CSV)"),
    "glm-sweep": (cmd_glm_sweep, "gamma GLM with large and small outliers (CSV)"),
    "breakdown": (cmd_breakdown, "sample-size condition and refined margin report"),
    "diagnostics": (cmd_diagnostics, "numerical property checks"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heavytails", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--seed", type=int, help="override the configured seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = _load_config(args.config)
    return COMMANDS[args.command][0](args, cfg)


if __name__ == "__main__":
    sys.exit(main())
