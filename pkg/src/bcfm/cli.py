"""Command line interface.

Subcommands::

    bcfm simulate --preset sec4.1 --seed 7 --out sim/
    bcfm fit      --data sim/data.csv --clusters 4 --factors 3 --out fit/
    bcfm select   --data sim/data.csv --kmin 1 --kmax 5 --fmin 1 --fmax 5 --out sel/
    bcfm compare  --separations 0.1,0.5,1.0 --replicates 20 --out cmp/

Settings may also come from a JSON file given with ``--config``; its keys are
the long option names (``iterations``, ``kmax``, ...).  Flags given on the
command line override the file.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from . import io
from .gibbs import ChainConfig, SamplerError
from .kernels import NotPositiveDefiniteError
from .model import ElicitationError, ModelDims
from .selection import NoAcceptableModelError, fit_model, grid_search, information_criterion
from .simulate import PRESETS, generate_dataset, sim_spec
from .study import separation_study, summarize_study

logger = logging.getLogger("bcfm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

# defaults applied after the config file and the flags have been merged
DEFAULTS = {
    "data": None,
    "clusters": None,
    "factors": None,
    "out": ".",
    "seed": 0,
    "preset": "sec4.1",
    "separation": None,
    "iterations": 50000,
    "thin": 10,
    "burnin": 1500,
    "kmin": 1,
    "kmax": 5,
    "fmin": 1,
    "fmax": 5,
    "standardize": False,
    "restarts": 50,
    "jobs": 1,
    "separations": "0.1,0.5,1.0",
    "replicates": 20,
    "refs": 50,
}
COMPARE_DEFAULTS = {"iterations": 10000, "thin": 10, "burnin": 300}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _chain_flags(p):
    p.add_argument("--iterations", type=int, help="Gibbs iterations (default 50000)")
    p.add_argument("--thin", type=int, help="keep every THIN-th iteration (default 10)")
    p.add_argument("--burnin", type=int, help="retained draws discarded as burn-in (default 1500)")
    p.add_argument("--restarts", type=int, help="k-means restarts in elicitation (default 50)")


def _grid_flags(p):
    for name in ("kmin", "kmax", "fmin", "fmax"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("--jobs", type=int, help="models fitted in parallel (default 1)")


def build_parser():
    parser = _Parser(prog="bcfm", description="Bayesian clustering factor models.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON file of option values")
        p.add_argument("--out", help="output directory (default .)")
        p.add_argument("--seed", type=int, help="random seed (default 0)")

    p = sub.add_parser("simulate", help="simulate a dataset from a preset design")
    common(p)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--separation", type=float, help="override the cluster separation")

    p = sub.add_parser("fit", help="fit one (K, F) model")
    common(p)
    p.add_argument("--data")
    p.add_argument("--clusters", type=int)
    p.add_argument("--factors", type=int)
    p.add_argument("--standardize", action="store_true", default=None)
    _chain_flags(p)

    p = sub.add_parser("select", help="fit a (K, F) grid and score it")
    common(p)
    p.add_argument("--data")
    p.add_argument("--standardize", action="store_true", default=None)
    _chain_flags(p)
    _grid_flags(p)

    p = sub.add_parser("compare", help="separation study against PCA + k-means")
    common(p)
    p.add_argument("--separations", help="comma-separated separations (default 0.1,0.5,1.0)")
    p.add_argument("--replicates", type=int, help="datasets per separation (default 20)")
    p.add_argument("--refs", type=int, help="gap statistic reference sets (default 50)")
    _chain_flags(p)
    _grid_flags(p)
    return parser


def _settings(args):
    """Merge defaults, the config file and explicit flags (in that order)."""
    opts = dict(DEFAULTS)
    if args.command == "compare":
        opts.update(COMPARE_DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise io.DataError(f"cannot read config file {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        known = set(vars(args)) | set(DEFAULTS)
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        opts.update(cfg)
    opts.update({k: v for k, v in vars(args).items() if v is not None and k != "config"})
    return argparse.Namespace(**opts)


def _chain_config(o):
    try:
        return ChainConfig(iterations=o.iterations, thin=o.thin, burnin_draws=o.burnin, seed=o.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load(o):
    if not getattr(o, "data", None):
        raise UsageError("--data is required")
    data = io.read_dataset(o.data)
    return data.standardized() if o.standardize else data


def _range(lo, hi, name):
    if lo < 1 or hi < lo:
        raise UsageError(f"invalid {name} range {lo}..{hi}")
    return range(lo, hi + 1)


def cmd_simulate(o):
    kw = {} if o.separation is None else {"separation": o.separation}
    try:
        spec = sim_spec(o.preset, seed=o.seed, **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    data, truth = generate_dataset(spec)
    out = io.ensure_dir(o.out)
    io.write_dataset(out / "data.csv", data)
    io.write_truth(out / "truth.json", truth)
    logger.info("wrote %s and %s", out / "data.csv", out / "truth.json")


def cmd_fit(o):
    if o.clusters is None or o.factors is None:
        raise UsageError("--clusters and --factors are required")
    config = _chain_config(o)
    data = _load(o)
    try:
        dims = ModelDims(o.clusters, o.factors)
        dims.validate(data)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    chain, _, _ = fit_model(data, dims, config, restarts=o.restarts)
    record = information_criterion(chain, data, dims)
    out = io.ensure_dir(o.out)
    io.write_summaries(out / "summaries.json", chain, record, data.variable_names)
    io.write_assignments(out / "assignments.csv", chain.assign_prob, chain.map_labels)
    io.write_trace(out / "trace.csv", chain)
    logger.info("K=%d F=%d: IC %s", dims.K, dims.F, record.ic)


def cmd_select(o):
    config = _chain_config(o)
    Ks = _range(o.kmin, o.kmax, "K")
    Fs = _range(o.fmin, o.fmax, "F")
    data = _load(o)
    if o.fmax > data.R:
        raise UsageError(f"--fmax {o.fmax} exceeds the number of variables {data.R}")
    out = io.ensure_dir(o.out)
    try:
        result = grid_search(data, Ks, Fs, config, restarts=o.restarts, n_jobs=o.jobs)
    except NoAcceptableModelError as exc:
        io.write_ic_table(out / "ic_table.csv", exc.records)
        raise
    io.write_ic_table(out / "ic_table.csv", result.records)
    rec = result.record(*result.best)
    io.write_json(out / "best.json", {"K": rec.K, "F": rec.F, "d": rec.d, "loglik": rec.loglik,
                                      "ic": rec.ic})
    logger.info("best model K=%d F=%d", rec.K, rec.F)


def cmd_compare(o):
    config = _chain_config(o)
    try:
        seps = [float(s) for s in str(o.separations).split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --separations: {exc}") from exc
    if not seps or any(s <= 0 for s in seps) or o.replicates < 1:
        raise UsageError("separations must be positive and replicates >= 1")
    results = separation_study(
        seps, o.replicates, replace(config, track_log_joint=False),
        K_range=_range(o.kmin, o.kmax, "K"), F_range=_range(o.fmin, o.fmax, "F"), seed=o.seed,
        restarts=o.restarts, B_refs=o.refs, n_jobs=o.jobs,
    )
    out = io.ensure_dir(o.out)
    io.write_rows(out / "replicates.csv", ["separation", "replicate", "method", "K_hat", "F_hat"],
                  ([r.separation, r.replicate + 1, r.method, r.K_hat, r.F_hat] for r in results))
    summary = summarize_study(results)
    cols = ["separation", "method", "n", "mean_K", "se_K", "mean_F", "se_F"]
    io.write_rows(out / "summary.csv", cols, ([row[c] for c in cols] for row in summary))


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "select": cmd_select, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](_settings(args))
    except UsageError as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.DataError, ElicitationError) as exc:
        print(f"bcfm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SamplerError, NotPositiveDefiniteError, np.linalg.LinAlgError,
            NoAcceptableModelError) as exc:
        print(f"bcfm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"bcfm: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
