"""
Command-line entry point: ``pdegp {simulate,fit,predict,summarize}``.

Settings come from built-in defaults, then an optional JSON ``--config`` file,
then command-line flags (flags win).  Every command writes the fully resolved
settings to ``<out>/config.resolved``; passing that file back through
``--config`` reproduces the run.

Output layout inside ``--out``::

    config.resolved   resolved settings (JSON)
    dataset.csv       simulated or copied dataset (+ dataset.meta.json)
    trace.csv         one row per post-warmup draw
    summary.txt       human-readable posterior summary
    summary.json      the same numbers, machine-readable
    field_y.csv       predicted fields, one file per channel
    field_f.csv

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DEFAULT_REGION,
    FieldGrid,
    GridSpec,
    export_field,
    generate_simulation,
    load_dataset,
    save_dataset,
    sidecar_path,
)
from .errors import (
    AdaptationError,
    ConfigError,
    DatasetParseError,
    DatasetValidationError,
    IllConditionedKernelError,
    InvalidInputError,
    NegativeVarianceError,
)
from .gp import fit_map, predict, predict_y_from_f
from .hmc import HmcConfig, run_chains, summarize
from .kernels import PARAM_NAMES, unpack_params
from .priors import parse_prior

log = logging.getLogger("pdegp")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULT_GRID = str(GridSpec(DEFAULT_REGION[0][0], DEFAULT_REGION[0][1], 50, DEFAULT_REGION[1][0], DEFAULT_REGION[1][1], 50))

DEFAULTS = {
    "simulate": {"seed": 0, "sigma0": 0.1, "n_points": 60, "grid": None, "out": "run"},
    "fit": {
        "seed": 0,
        "data": None,
        "noise_variance": None,
        "sigma0": 0.1,
        "n_points": 60,
        "samples": 7000,
        "warmup": 1000,
        "step_size": 0.1,
        "leapfrog": 20,
        "target_accept": 0.8,
        "fix": {},
        "prior": {},
        "init": "map",
        "chains": 1,
        "out": "run",
    },
    "predict": {
        "data": None,
        "noise_variance": None,
        "params": None,
        "summary": None,
        "grid": DEFAULT_GRID,
        "channels": "Y,F",
        "out": "run",
    },
    "summarize": {"trace": None, "burn": 0, "out": None},
}

TRACE_COLUMNS = ("iteration",) + PARAM_NAMES + ("accept", "log_posterior", "divergent")


# ---------------------------------------------------------------- parsing


def _assignments(items, what):
    """``['D=1.0', 'alpha=2']`` -> ``{'D': '1.0', 'alpha': '2'}``."""
    out = {}
    for item in items or ():
        for part in _split_top(item):
            name, sep, value = part.partition("=")
            name = name.strip()
            if not sep or not name:
                raise ConfigError(f"{what} must look like name=value, got {part!r}")
            if name not in PARAM_NAMES:
                raise ConfigError(f"unknown parameter {name!r} in {what}; expected one of {list(PARAM_NAMES)}")
            out[name] = value.strip()
    return out


def _split_top(text):
    """Split on commas that are not inside parentheses."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur.append(ch)
    parts.append("".join(cur))
    return [p for p in parts if p.strip()]


def _float_map(mapping, what):
    out = {}
    for name, value in mapping.items():
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{what} {name}={value!r} is not a number") from None
        if not (math.isfinite(v) and v > 0):
            raise ConfigError(f"{what} {name} must be a positive number, got {value!r}")
        out[name] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdegp", description="Bayesian PDE parameter inference with operator Gaussian processes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(p):
        p.add_argument("--config", help="JSON file of settings; flags override it")
        p.add_argument("--out", default=S, help="output directory (default: ./run)")
        p.add_argument("-v", "--verbose", action="count", default=0, help="log progress (repeat for debug)")

    def dataset_flags(p):
        p.add_argument("--data", default=S, help="dataset CSV (x,t,channel,value,noise_variance)")
        p.add_argument("--noise-variance", type=float, default=S, help="homoscedastic variance for files without that column")

    p = sub.add_parser("simulate", help="generate the trigonometric test dataset")
    common(p)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--sigma0", type=float, default=S, help="noise standard deviation (default 0.1)")
    p.add_argument("--n-points", type=int, default=S, help="random locations; each yields a Y and an F row (default 60)")
    p.add_argument("--grid", default=S, help="use grid locations x0:x1:nx,t0:t1:nt instead of random ones")

    p = sub.add_parser("fit", help="sample the posterior with HMC")
    common(p)
    dataset_flags(p)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--sigma0", type=float, default=S, help="noise sd when simulating (no --data)")
    p.add_argument("--n-points", type=int, default=S, help="locations when simulating (no --data)")
    p.add_argument("--samples", type=int, default=S, help="post-warmup draws per chain (default 7000)")
    p.add_argument("--warmup", type=int, default=S, help="adaptation iterations (default 1000)")
    p.add_argument("--step-size", type=float, default=S, help="initial leapfrog step size")
    p.add_argument("--leapfrog", type=int, default=S, help="maximum leapfrog steps per trajectory (default 20)")
    p.add_argument("--target-accept", type=float, default=S)
    p.add_argument("--fix", action="append", default=S, metavar="PARAM=VALUE", help="hold a parameter fixed")
    p.add_argument("--prior", action="append", default=S, metavar="PARAM=SPEC", help="e.g. D=lognormal(0,1)")
    p.add_argument("--init", default=S, help="'map' (default), 'ones', or PARAM=VALUE,...")
    p.add_argument("--chains", type=int, default=S, help="independent chains run in parallel")

    p = sub.add_parser("predict", help="posterior mean/variance fields on a grid")
    common(p)
    dataset_flags(p)
    p.add_argument("--params", default=S, help="all six values as PARAM=VALUE,...")
    p.add_argument("--summary", default=S, help="summary.json whose posterior means are used")
    p.add_argument("--grid", default=S, help="x0:x1:nx,t0:t1:nt (default 50x50 over [0,2pi]^2)")
    p.add_argument("--channels", default=S, help="Y, F or Y,F (default)")

    p = sub.add_parser("summarize", help="recompute the summary from a trace file")
    common(p)
    p.add_argument("--trace", default=S, help="trace CSV (default: <out>/trace.csv)")
    p.add_argument("--burn", type=int, default=S, help="drop this many leading draws per chain")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the ``--config`` file and flags (in that order)."""
    cmd = args.command
    cfg = json.loads(json.dumps(DEFAULTS[cmd]))
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        loaded.pop("command", None)
        loaded.pop("version", None)
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown {cmd} settings in config file: {sorted(unknown)}")
        cfg.update(loaded)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    for key in ("fix", "prior"):
        if key in flags:
            merged = dict(cfg[key])
            merged.update(_assignments(flags.pop(key), "--" + key))
            cfg[key] = merged
    cfg.update(flags)
    if cmd == "summarize" and cfg["out"] is None and cfg["trace"] is None:
        cfg["out"] = "run"
    if cmd == "summarize" and cfg["trace"] is None:
        cfg["trace"] = str(Path(cfg["out"]) / "trace.csv")
    if cmd == "summarize" and cfg["out"] is None:
        cfg["out"] = str(Path(cfg["trace"]).parent)
    cfg["command"] = cmd
    cfg["version"] = __version__
    return cfg


def _write_resolved(cfg, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_data(cfg) -> "Dataset":  # noqa: F821
    if not cfg["data"]:
        raise ConfigError("--data is required")
    path = Path(cfg["data"])
    if not path.exists():
        raise DatasetValidationError(f"dataset file not found: {path}")
    return load_dataset(path, cfg["noise_variance"])


def _copy_dataset(src: Path, out: Path):
    dest = out / "dataset.csv"
    if src.resolve() == dest.resolve():
        return
    shutil.copyfile(src, dest)
    if sidecar_path(src).exists():
        shutil.copyfile(sidecar_path(src), sidecar_path(dest))


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg) -> int:
    if cfg["n_points"] is not None and cfg["n_points"] < 1 and cfg["grid"] is None:
        raise ConfigError("--n-points must be >= 1")
    points = GridSpec.parse(cfg["grid"]) if cfg["grid"] else None
    ds = generate_simulation(points, sigma0=cfg["sigma0"], seed=cfg["seed"], n_points=cfg["n_points"])
    out = Path(cfg["out"])
    _write_resolved(cfg, out)
    path = save_dataset(ds, out / "dataset.csv")
    log.info("wrote %d rows to %s", len(ds), path)
    return EXIT_OK


def _initial_values(cfg, obs, noise, priors, fixed):
    init = cfg["init"]
    if isinstance(init, dict):
        given = _float_map(init, "--init")
    elif init in ("map", "ones"):
        given = {}
    else:
        given = _float_map(_assignments([init], "--init"), "--init")
    start = {n: given.get(n, 1.0) for n in PARAM_NAMES}
    start.update(fixed)
    if init == "map":
        params, res = fit_map(obs, noise, start, priors, fixed)
        log.info("MAP start %s (%s)", {n: round(float(v), 4) for n, v in zip(PARAM_NAMES, params)}, res.message)
        return params
    return np.array([start[n] for n in PARAM_NAMES])


def _write_trace(path: Path, chains):
    multi = len(chains) > 1
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((("chain",) if multi else ()) + TRACE_COLUMNS)
        for c_idx, chain in enumerate(chains):
            div = chain.divergent_draws
            for i in range(len(chain.params)):
                row = [i + 1] + [repr(float(v)) for v in chain.params[i]]
                row += [int(chain.accepted[i]), repr(float(chain.log_posterior[i])), int(div[i])]
                w.writerow(([c_idx + 1] if multi else []) + row)


def _write_summary(out: Path, summary, sampler=None):
    (out / "summary.txt").write_text(summary.to_text(), encoding="utf-8")
    doc = summary.as_dict()
    if sampler is not None:
        doc["sampler"] = sampler
    (out / "summary.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def cmd_fit(cfg) -> int:
    out = Path(cfg["out"])
    fixed = _float_map(cfg["fix"], "--fix")
    priors = {n: parse_prior(spec) for n, spec in cfg["prior"].items()}
    unknown = set(priors) - set(PARAM_NAMES)
    if unknown:
        raise ConfigError(f"priors for unknown parameters {sorted(unknown)}")
    hmc_cfg = HmcConfig(
        n_warmup=cfg["warmup"],
        n_samples=cfg["samples"],
        leapfrog_steps=cfg["leapfrog"],
        step_size=cfg["step_size"],
        target_accept=cfg["target_accept"],
        seed=cfg["seed"],
        sampled_params=tuple(n for n in PARAM_NAMES if n not in fixed),
    ).validate()
    if cfg["chains"] < 1:
        raise ConfigError("--chains must be >= 1")

    _write_resolved(cfg, out)
    if cfg["data"]:
        ds = _load_data(cfg)
        _copy_dataset(Path(cfg["data"]), out)
    else:
        ds = generate_simulation(sigma0=cfg["sigma0"], seed=cfg["seed"], n_points=cfg["n_points"])
        save_dataset(ds, out / "dataset.csv")
    obs, noise = ds.to_gp()

    init = _initial_values(cfg, obs, noise, priors, fixed)
    summary, chains = run_chains(obs, noise, priors, init, hmc_cfg, n_chains=cfg["chains"])
    _write_trace(out / "trace.csv", chains)
    sampler = {
        "init": [float(v) for v in init],
        "step_size": [c.step_size for c in chains],
        "mass_diag": [[float(m) for m in c.mass_diag] for c in chains],
        "warmup_divergences": [c.warmup_divergences for c in chains],
        "warmup_accept_rate": [c.warmup_accept_rate for c in chains],
    }
    _write_summary(out, summary, sampler)
    print(summary.to_text(), end="")
    return EXIT_OK


def _parameter_source(cfg):
    if cfg["params"] is not None:
        values = cfg["params"]
        if not isinstance(values, dict):
            values = _assignments([values], "--params")
        values = _float_map(values, "--params")
        missing = [n for n in PARAM_NAMES if n not in values]
        if missing:
            raise ConfigError(f"--params is missing {missing}")
        return np.array([values[n] for n in PARAM_NAMES])
    if cfg["summary"] is not None:
        try:
            doc = json.loads(Path(cfg["summary"]).read_text(encoding="utf-8"))
            means = dict(zip(doc["names"], doc["mean"]))
            return np.array([float(means[n]) for n in PARAM_NAMES])
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot read posterior means from {cfg['summary']}: {exc}") from None
    raise ConfigError("predict needs a parameter source: --params or --summary")


def cmd_predict(cfg) -> int:
    params = _parameter_source(cfg)
    try:
        grid = GridSpec.parse(cfg["grid"])
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    channels = [c.strip().upper() for c in str(cfg["channels"]).split(",") if c.strip()]
    if not channels or any(c not in ("Y", "F") for c in channels):
        raise ConfigError("--channels must list Y and/or F")
    ds = _load_data(cfg)
    obs, noise = ds.to_gp()
    theta, hypers = unpack_params(params)
    out = Path(cfg["out"])
    _write_resolved(cfg, out)
    pts = grid.points()
    for ch in channels:
        if ch == "Y" and obs.n_y == 0:
            log.info("no Y observations: solving for y from F data alone")
            pred = predict_y_from_f(obs, noise, hypers, theta, pts)
        else:
            pred = predict(obs, noise, hypers, theta, pts, channels=ch)
        path = export_field(FieldGrid.from_prediction(grid, {ch: pred}), out / f"field_{ch.lower()}.csv")
        log.info("wrote %s", path)
    return EXIT_OK


def read_trace(path, burn=0):
    """Parameters, acceptance flags and divergence count from a trace CSV.

    With a leading ``chain`` column, ``burn`` rows are dropped from each chain.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetValidationError(f"trace file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetParseError("empty trace: missing header", 1)
    header = tuple(h.strip() for h in rows[0])
    multi = header[:1] == ("chain",)
    if header[int(multi):] != TRACE_COLUMNS:
        raise DatasetParseError(f"trace header must be {','.join(TRACE_COLUMNS)}", 1)
    by_chain: dict[int, list] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetParseError(f"expected {len(header)} fields, found {len(row)}", lineno)
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise DatasetParseError("non-numeric trace entry", lineno) from None
        by_chain.setdefault(int(vals[0]) if multi else 1, []).append(vals[int(multi):])
    if burn < 0:
        raise ConfigError("--burn must be >= 0")
    kept = [np.asarray(v)[burn:] for _, v in sorted(by_chain.items())]
    kept = [k for k in kept if len(k)]
    if not kept:
        raise DatasetValidationError("trace has no draws" + (f" after burning {burn}" if burn else ""))
    data = np.concatenate(kept)
    params = data[:, 1 : 1 + len(PARAM_NAMES)]
    accepted = data[:, 1 + len(PARAM_NAMES)]
    divergences = int(data[:, -1].sum())
    return params, accepted, divergences


def cmd_summarize(cfg) -> int:
    params, accepted, divergences = read_trace(cfg["trace"], cfg["burn"])
    summary = summarize(params, PARAM_NAMES, accepted, divergences)
    out = Path(cfg["out"])
    # summarizing in place must not clobber the fit's own resolved config
    if out.resolve() != Path(cfg["trace"]).resolve().parent:
        _write_resolved(cfg, out)
    _write_summary(out, summary)
    print(summary.to_text(), end="")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict, "summarize": cmd_summarize}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, InvalidInputError) as exc:
        print(f"pdegp: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetParseError, DatasetValidationError, OSError) as exc:
        print(f"pdegp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AdaptationError, IllConditionedKernelError, NegativeVarianceError, ArithmeticError) as exc:
        print(f"pdegp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
