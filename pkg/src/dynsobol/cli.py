"""Command-line front end.

    dynsobol simulate  --config model.json --horizon 5 --samples 2
    dynsobol lambda    --config model.json --target 1 --times 0-4
    dynsobol estimate  --config model.json --model toy1 --targets all
    dynsobol fit       --data hourly.csv --p-max 4
    dynsobol scenario  toy1|toy2|building

Exit codes: 0 success, 1 numerical failure (a modelling hypothesis is
violated or a solver failed), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .conditioning import build_empirical_plan, build_plan, simulate_replicas
from .errors import ConfigError, DataError, NumericalError
from .ingest_fit import deseasonalize, fit_building_phi, load_series, select_order
from .models import BUILDING_CHANNELS, get_model, linear_recurrence, make_building
from .pick_freeze import CI_METHODS, estimate_series
from .var_process import DEFAULT_BURN_IN, VarModel, simulate, stationary_covariance

logger = logging.getLogger("dynsobol")

BUILTIN_INPUTS = {
    "toy": "toy_var1.json",
    "building": "building_var2.json",
    "controlled": "building_controlled.json",
}
SCENARIO_BURN_IN = {"toy1": DEFAULT_BURN_IN, "toy2": DEFAULT_BURN_IN, "building": 1000}


def builtin_model(name: str) -> VarModel:
    try:
        fname = BUILTIN_INPUTS[name]
    except KeyError:
        raise ConfigError(f"unknown built-in input model {name!r}; choose from {sorted(BUILTIN_INPUTS)}") from None
    doc = json.loads(resources.files("dynsobol.data").joinpath(fname).read_text())
    return VarModel.from_dict(doc)


def parse_times(text: str, horizon: int) -> list[int]:
    """``"0-4"``, ``"0,2,5"`` or ``"all"``."""
    if text == "all":
        return list(range(horizon + 1))
    out = []
    try:
        for part in text.split(","):
            if "-" in part:
                a, b = part.split("-")
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise ConfigError(f"cannot parse time list {text!r}") from None
    if any(t < 0 for t in out):
        raise ConfigError("times must be non-negative")
    if any(t > horizon for t in out):
        raise ConfigError(f"time {max(out)} exceeds the horizon {horizon}")
    return sorted(set(out))


def parse_targets(text: str, dim: int) -> list[int]:
    """1-based coordinate list (``"1,3"`` or ``"all"``) to 0-based indices."""
    if text == "all":
        return list(range(dim))
    try:
        coords = sorted({int(c) for c in text.split(",")})
    except ValueError:
        raise ConfigError(f"cannot parse target list {text!r}") from None
    if not coords or coords[0] < 1 or coords[-1] > dim:
        raise ConfigError(f"targets must lie in 1..{dim}")
    return [c - 1 for c in coords]


def _input_model(args) -> VarModel:
    if args.config:
        return io.load_var_model(args.config)
    return builtin_model(args.inputs)


def _output_model(args, dim: int):
    name = args.model
    if args.model_config:
        doc_path = args.model_config
        if name == "building":
            return make_building(io.load_building_phi(doc_path))
        if name == "linear":
            return linear_recurrence(io.load_linear_spec(doc_path))
        raise ConfigError(f"model {name!r} takes no parameter file")
    if name == "linear":
        raise ConfigError("the linear model needs --model-config")
    return get_model(name)


def _check_common(args):
    if getattr(args, "samples", None) is not None and args.samples < 30 and args.command in ("estimate", "scenario"):
        raise ConfigError("--samples must be at least 30 for index estimation")
    if args.horizon < 1:
        raise ConfigError("--horizon must be at least 1")
    if args.burn_in is not None and args.burn_in < 0:
        raise ConfigError("--burn-in must be non-negative")
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")


def _burn_in(args, default=DEFAULT_BURN_IN) -> int:
    return default if args.burn_in is None else args.burn_in


def cmd_simulate(args) -> list[Path]:
    model = _input_model(args)
    batch = simulate(model, args.horizon, args.samples, args.seed, _burn_in(args), args.workers)
    return [io.write_trajectories(Path(args.out) / "trajectories.csv", batch.data)]


def cmd_lambda(args) -> list[Path]:
    model = _input_model(args)
    (target,) = parse_targets(str(args.target), model.dim)
    times = parse_times(args.times, args.horizon)
    if args.cov == "model":
        plan = build_plan(stationary_covariance(model), target, args.horizon, jitter=args.jitter)
    else:
        b1, b2 = simulate_replicas(model, args.horizon, args.samples, args.seed, _burn_in(args), args.workers)
        plan = build_empirical_plan(np.concatenate([b1.data, b2.data]), target, jitter=args.jitter)
    z_names = [n for j, n in enumerate(model.names) if j != target]
    return io.write_lambda(args.out, plan, times, z_names)


def _run_estimate(args, model: VarModel, f, targets, t_start: int, burn_in: int, stem: str) -> list[Path]:
    def job(target):
        return estimate_series(
            model, f, target, args.horizon, args.samples, args.seed,
            ci_method=args.ci, level=args.level, cov_mode=args.cov, burn_in=burn_in, t_start=t_start,
            n_boot=args.n_boot, rel_eps=args.rel_eps, window=args.window, jitter=args.jitter,
        )

    if args.workers > 1 and len(targets) > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            series = list(pool.map(job, targets))
    else:
        series = [job(t) for t in targets]
    for s in series:
        logger.info("coordinate %d (%s): plateau time %s", s.target + 1, model.names[s.target], s.plateau_time)
    meta = {
        "names": {str(t + 1): model.names[t] for t in targets},
        "model": f.name,
        "samples": args.samples,
        "horizon": args.horizon,
        "seed": args.seed,
        "burn_in": burn_in,
        "cov": args.cov,
        "t_start": t_start,
        "plateau_rule": {"rel_eps": args.rel_eps, "window": args.window, "interval_aware": args.ci != "none"},
    }
    path = io.write_series(Path(args.out) / f"{stem}.csv", series, meta)
    out = [path, path.with_suffix(".json")]
    if args.gnuplot:
        out.append(io.write_gnuplot(path, [t + 1 for t in targets], stem))
    return out


def cmd_estimate(args) -> list[Path]:
    model = _input_model(args)
    f = _output_model(args, model.dim)
    targets = parse_targets(args.targets, model.dim)
    t_start = args.t_start
    if f.name == "building" and t_start == 0:
        # the output at t = 0 only sees zero initial temperatures
        t_start = 1
    return _run_estimate(args, model, f, targets, t_start, _burn_in(args), "sobol")


def cmd_fit(args) -> list[Path]:
    raw = load_series(args.data, max_gap=args.max_gap, on_long_gap="split" if args.split_gaps else "error")
    exo = [c for c in raw.channels if c in BUILDING_CHANNELS]
    if not exo:
        raise DataError("no exogenous channel (below, above, off, cor, ext) in the data")
    out_dir = Path(args.out)
    written = []
    if args.raw:
        values = raw.values
    else:
        profile, values = deseasonalize(raw, args.period)
        written.append(io.save_document(out_dir / "seasonal.json", {"channels": list(raw.channels), **profile.to_dict()}))
    idx = [raw.channels.index(c) for c in exo]
    pieces = [values[a:b][:, idx] for a, b in raw.segments]
    report = select_order(pieces, args.p_max, names=exo)
    logger.info("chosen order %d (AIC %s)", report.chosen_order, report.aic_by_order)
    written.insert(0, io.save_var_model(out_dir / "model.json", report.model, report.metadata()))
    if "int" in raw.channels:
        k = raw.channels.index("int")
        phi = fit_building_phi(values[:, idx], values[:, k], lags=2, channels=exo)
        written.append(io.save_document(out_dir / "phi.json", phi.to_dict()))
    return written


def cmd_scenario(args) -> list[Path]:
    name = args.name
    burn_in = _burn_in(args, SCENARIO_BURN_IN[name])
    if name == "building":
        model = builtin_model(args.inputs)
        f = make_building(io.load_building_phi(args.model_config) if args.model_config else None)
        targets = list(range(model.dim))
        # the output at t = 0 only sees zero initial temperatures
        t_start = max(args.t_start, 1)
    else:
        model = builtin_model("toy")
        f = get_model(name)
        targets = [0]
        t_start = args.t_start
    return _run_estimate(args, model, f, targets, t_start, burn_in, f"scenario_{name}")


def _common_parser(suppress: bool = False) -> argparse.ArgumentParser:
    """Global options.

    They are accepted before and after the command name; the copy attached
    to each command uses suppressed defaults so it only overrides values
    given explicitly.
    """
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    g.add_argument("--samples", type=int, default=1000, help="Monte Carlo sample size N (default 1000)")
    g.add_argument("--horizon", type=int, default=20, help="last time index T (default 20)")
    g.add_argument("--burn-in", type=int, default=None,
                   help=f"discarded warm-up steps (default {DEFAULT_BURN_IN}; 1000 for the building scenario)")
    g.add_argument("--cov", choices=("model", "empirical"), default="model",
                   help="covariances for the projection: exact model ones or sample ones (default model)")
    g.add_argument("--ci", choices=CI_METHODS, default="bootstrap", help="interval method (default bootstrap)")
    g.add_argument("--level", type=float, default=0.95, help="interval level (default 0.95)")
    g.add_argument("--n-boot", type=int, default=1000, help="bootstrap resamples (default 1000)")
    g.add_argument("--workers", type=int, default=1, help="parallel workers (default 1)")
    g.add_argument("--out", default="out", help="output directory (default ./out)")
    g.add_argument("--jitter", action="store_true",
                   help="regularise a singular past covariance instead of failing")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    if suppress:
        for action in p._actions:
            action.default = argparse.SUPPRESS
    return p


def _add_inputs(p):
    p.add_argument("--config", help="input VAR model document (JSON or TOML)")
    p.add_argument("--inputs", choices=sorted(BUILTIN_INPUTS), default="toy",
                   help="built-in input model when --config is absent (default toy)")


def _add_estimation(p):
    p.add_argument("--rel-eps", type=float, default=0.01, help="plateau relative tolerance (default 0.01)")
    p.add_argument("--window", type=int, default=3, help="plateau window length (default 3)")
    p.add_argument("--t-start", type=int, default=0, help="first time index to estimate (default 0)")
    p.add_argument("--model-config", help="parameter document of the output model (building or linear)")
    p.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script next to the CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynsobol", description=__doc__.splitlines()[0],
                                     parents=[_common_parser()])
    common = _common_parser(suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("simulate", parents=[common], help="simulate input trajectories to CSV")
    _add_inputs(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("lambda", parents=[common], help="write the projection coefficients per window")
    _add_inputs(p)
    p.add_argument("--target", type=int, default=1, help="frozen coordinate, 1-based (default 1)")
    p.add_argument("--times", default="all", help="windows, e.g. 0-4 or 0,2,5 (default all)")
    p.set_defaults(func=cmd_lambda)

    p = sub.add_parser("estimate", parents=[common], help="estimate index series for an output model")
    _add_inputs(p)
    _add_estimation(p)
    p.add_argument("--model", default="toy1", choices=("toy1", "toy2", "building", "linear"),
                   help="output model (default toy1)")
    p.add_argument("--targets", default="all", help="frozen coordinates, 1-based list or 'all' (default all)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("fit", parents=[common], help="fit a VAR model to hourly measurements")
    p.add_argument("--data", required=True, help="CSV with timestamp and channel columns")
    p.add_argument("--p-max", type=int, default=4, help="largest candidate order (default 4)")
    p.add_argument("--period", type=int, default=24, help="seasonal period in rows (default 24)")
    p.add_argument("--raw", action="store_true", help="skip the seasonal standardisation")
    p.add_argument("--max-gap", type=int, default=2, help="longest gap (hours) to interpolate (default 2)")
    p.add_argument("--split-gaps", action="store_true", help="split at longer gaps instead of failing")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("scenario", parents=[common], help="run a preset scenario")
    p.add_argument("name", choices=("toy1", "toy2", "building"))
    p.add_argument("--inputs", choices=("building", "controlled"), default="building",
                   help="input model of the building scenario (default building)")
    _add_estimation(p)
    p.set_defaults(func=cmd_scenario)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    try:
        _check_common(args)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            paths = args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
