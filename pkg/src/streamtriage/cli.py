"""Command-line entry point: ``streamtriage <command> [options]``.

Every run option can come from a flat JSON file given with ``--config``;
options given on the command line override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bounds, experiment
from .curves import CriticalCurveSet, load_curves, save_curves, solve_curves
from .nhpp import (
    ArrivalSequence,
    RateFunction,
    estimate_rate,
    load_rate,
    save_rate,
    sinusoidal_rate,
)
from .policies import (
    Episode,
    capacity_for,
    read_episodes,
    write_episodes,
    write_outcomes,
    write_tradeoff,
)
from .scoredist import ScoreCdf, ScoreModel, fit_ecdf, load_model, save_model

log = logging.getLogger("streamtriage")

DEFAULTS = {
    "tau": 86400.0,
    "k_grid": [round(0.01 * i, 2) for i in range(1, 21)],
    "reps": 1000,
    "seed": 0,
    "grid_size": 4096,
    "bins": 48,
    "policies": list(experiment.POLICIES),
    "methods": list(bounds.METHODS),
    "mode": "synthetic",
    "out_dir": ".",
    "episodes": 200,
    "alpha": 0.5,
    "split": 0.5,
    "workers": 1,
    "piecewise_constant": False,
    "max_bad_rows": None,
}


class CliError(Exception):
    """A user-facing failure; reported without a traceback, exit status 2."""


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _name_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run options (override --config)")
    g.add_argument("--config", type=Path, help="flat JSON file of run options")
    g.add_argument("--tau", type=float, help="horizon length in seconds")
    g.add_argument("--k-grid", type=_float_list, help="comma-separated capacities in [0, 1]")
    g.add_argument("--reps", type=int, help="Monte Carlo replications for the dynamic and batch bounds")
    g.add_argument("--seed", type=int)
    g.add_argument("--grid-size", type=int, help="time grid points for the curve solver")
    g.add_argument("--bins", type=int, help="histogram bins for the rate estimate")
    g.add_argument("--piecewise-constant", action="store_true", default=None,
                   help="keep the rate estimate as a step function")
    g.add_argument("--policies", type=_name_list, help=f"subset of {','.join(experiment.POLICIES)}")
    g.add_argument("--methods", type=_name_list, help=f"subset of {','.join(bounds.METHODS)}")
    g.add_argument("--mode", choices=("real", "synthetic"))
    g.add_argument("--episodes", type=int, help="synthetic episode count")
    g.add_argument("--alpha", type=float, help="threshold for the fixed static policy")
    g.add_argument("--workers", type=int, help="worker processes for policy runs")
    g.add_argument("--out-dir", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamtriage",
                                     description="Detection rate vs inspection capacity for streaming triage.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic episodes")
    _common(p)
    p.add_argument("--rate-shape", choices=("constant", "sinusoidal", "piecewise"), default="constant")
    p.add_argument("--lambda-total", type=float, default=1000.0, help="expected arrivals per horizon")
    p.add_argument("--amplitude", type=float, default=0.5, help="relative amplitude of the sinusoidal shape")
    p.add_argument("--rate-file", type=Path, help="rate JSON, or CSV with t,rate columns (piecewise shape)")
    p.add_argument("--model", type=Path, help="score model JSON (instead of the knot options)")
    p.add_argument("--beta", type=float, default=0.035)
    p.add_argument("--f0-knots", type=_float_list, default=[0.0, 1.0])
    p.add_argument("--f0-probs", type=_float_list, default=[0.0, 1.0])
    p.add_argument("--f1-knots", type=_float_list, default=[0.0, 1.0])
    p.add_argument("--f1-probs", type=_float_list, default=[0.0, 1.0])
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate", help="fit rate and score model from labelled episodes")
    _common(p)
    p.add_argument("--input", type=Path, required=True, help="CSV episode_id,t_seconds,score,label")
    p.add_argument("--max-bad-rows", type=int, help="fail when more malformed rows than this are skipped")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("curves", help="solve critical curves")
    _common(p)
    p.add_argument("--rate", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--n", type=int, help="largest budget (default: floor(max k * Lambda))")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("bounds", help="analytic bounds on the k grid")
    _common(p)
    p.add_argument("--rate", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--curves", type=Path, help="solved curves (solved on the fly when omitted)")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("simulate", help="run the policies on episodes")
    _common(p)
    p.add_argument("--rate", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--curves", type=Path)
    p.add_argument("--input", type=Path, help="held-out episodes CSV (real mode)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="estimate, solve, bound and simulate in one go")
    _common(p)
    p.add_argument("--input", type=Path, help="episodes CSV to estimate from (and evaluate on, in real mode)")
    p.add_argument("--split", type=float, help="fraction of input episodes used for estimation")
    p.add_argument("--rate", type=Path, help="skip estimation: use this rate")
    p.add_argument("--model", type=Path, help="skip estimation: use this score model")
    p.set_defaults(func=cmd_sweep)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None) is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise CliError("config must be a flat JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    k_grid = [float(k) for k in cfg["k_grid"]]
    if not k_grid or any(not 0.0 <= k <= 1.0 for k in k_grid):
        raise CliError("k grid values must lie in [0, 1]")
    cfg["k_grid"] = sorted(k_grid)
    bad = set(cfg["policies"]) - set(experiment.POLICIES)
    if bad:
        raise CliError(f"unknown policies: {', '.join(sorted(bad))}")
    bad = set(cfg["methods"]) - set(bounds.METHODS)
    if bad:
        raise CliError(f"unknown methods: {', '.join(sorted(bad))}")
    if cfg["tau"] <= 0:
        raise CliError("tau must be positive")
    cfg["out_dir"] = Path(cfg["out_dir"])
    cfg["out_dir"].mkdir(parents=True, exist_ok=True)
    return cfg


def _load_pair(args) -> tuple[RateFunction, ScoreModel]:
    try:
        return load_rate(args.rate), load_model(args.model)
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(f"cannot load rate/model: {exc}") from exc


def _read_rate_file(path: Path) -> RateFunction:
    if path.suffix == ".json":
        return load_rate(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return RateFunction(data[:, 0], data[:, 1])


def cmd_synth(args, cfg) -> int:
    tau = cfg["tau"]
    lam = args.lambda_total
    if args.rate_shape == "constant":
        rate = RateFunction.constant(lam / tau, tau)
    elif args.rate_shape == "sinusoidal":
        rate = sinusoidal_rate(lam / tau, args.amplitude, tau)
    else:
        if args.rate_file is None:
            raise CliError("--rate-shape piecewise needs --rate-file")
        rate = _read_rate_file(args.rate_file)
    if args.model is not None:
        model = load_model(args.model)
    else:
        model = ScoreModel(args.beta, ScoreCdf(args.f0_knots, args.f0_probs),
                           ScoreCdf(args.f1_knots, args.f1_probs))
    eps = experiment.make_episodes(rate, model, cfg["episodes"], cfg["seed"])
    out = cfg["out_dir"]
    write_episodes(eps, out / "episodes.csv")
    save_rate(rate, out / "synth_rate.json")
    save_model(model, out / "synth_model.json")
    print(f"wrote {len(eps)} episodes ({sum(len(e) for e in eps)} records) to {out / 'episodes.csv'}")
    return 0


def _estimate(episodes: list[Episode], cfg) -> tuple[RateFunction, ScoreModel]:
    if not episodes or sum(len(e) for e in episodes) == 0:
        raise CliError("no records to estimate from")
    scores = np.concatenate([e.scores for e in episodes])
    labels = np.concatenate([e.labels for e in episodes])
    n1 = int(labels.sum())
    if n1 == 0:
        raise CliError("no fraud records: the positive score distribution cannot be fitted")
    if n1 < 2 or labels.size - n1 < 2:
        raise CliError("each class needs at least 2 records")
    model = ScoreModel(n1 / labels.size, fit_ecdf(scores[labels == 0]), fit_ecdf(scores[labels == 1]))
    rate = estimate_rate([ArrivalSequence(e.times, e.tau) for e in episodes], cfg["bins"],
                         piecewise_constant=cfg["piecewise_constant"])
    return rate, model


def _read_input(path: Path, cfg) -> list[Episode]:
    try:
        eps, warnings = read_episodes(path, cfg["tau"])
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    for w in warnings:
        log.warning("%s: %s", path, w)
    skipped = sum("skipped" in w for w in warnings)
    limit = cfg["max_bad_rows"]
    if limit is not None and skipped > limit:
        raise CliError(f"{skipped} malformed rows exceed --max-bad-rows {limit}")
    return eps


def cmd_estimate(args, cfg) -> int:
    eps = _read_input(args.input, cfg)
    rate, model = _estimate(eps, cfg)
    out = cfg["out_dir"]
    save_rate(rate, out / "rate.json")
    save_model(model, out / "model.json")
    print(f"episodes: {len(eps)}")
    print(f"beta: {model.beta:.6g}")
    print(f"Lambda(tau): {rate.total:.6g}")
    return 0


def _budget(cfg, rate: RateFunction) -> int:
    return capacity_for(max(cfg["k_grid"]), rate.total)


def _solve(rate, model, n, cfg) -> CriticalCurveSet:
    if n <= 0:
        raise CliError(f"largest budget is {n}; need n >= 1")
    return solve_curves(rate, model.fs, n, cfg["grid_size"], model_hash=model.digest())


def cmd_curves(args, cfg) -> int:
    rate, model = _load_pair(args)
    n = args.n if args.n is not None else _budget(cfg, rate)
    curves = _solve(rate, model, n, cfg)
    path = cfg["out_dir"] / "curves.csv"
    save_curves(curves, path)
    print(f"solved {curves.n} curves on {curves.grid_size} points ({curves.steps} steps) -> {path}")
    return 0


def _curves_for(args, rate, model, cfg) -> CriticalCurveSet:
    need = _budget(cfg, rate)
    if getattr(args, "curves", None) is not None:
        curves = load_curves(args.curves)
        if curves.n < need:
            raise CliError(f"{args.curves} has {curves.n} curves, the k grid needs {need}")
        if curves.rate_hash and curves.rate_hash != rate.digest():
            log.warning("curves were solved for a different rate model")
        return curves
    return _solve(rate, model, max(need, 1), cfg)


def cmd_bounds(args, cfg) -> int:
    rate, model = _load_pair(args)
    curves = _curves_for(args, rate, model, cfg) if "dynamic" in cfg["methods"] else None
    res = experiment.analytic_curves(model, rate, cfg["k_grid"], cfg["methods"], curves,
                                     alpha=cfg["alpha"], reps=cfg["reps"], seed=cfg["seed"])
    path = cfg["out_dir"] / "bounds.csv"
    experiment.write_bounds(res, path)
    print(f"wrote {path}")
    return 0


def _episodes_for(args, rate, model, cfg, held_out: list[Episode] | None = None) -> list[Episode]:
    if cfg["mode"] == "real":
        if held_out is not None:
            return held_out
        if getattr(args, "input", None) is None:
            raise CliError("real mode needs --input")
        return _read_input(args.input, cfg)
    return experiment.make_episodes(rate, model, cfg["episodes"], cfg["seed"])


def _simulate(eps, rate, model, curves, cfg):
    outcomes = experiment.run_policies(eps, model, rate, cfg["k_grid"], cfg["policies"], curves,
                                       alpha=cfg["alpha"], seed=cfg["seed"], workers=cfg["workers"])
    return outcomes, experiment.summarize(outcomes, cfg["k_grid"], cfg["policies"])


def cmd_simulate(args, cfg) -> int:
    rate, model = _load_pair(args)
    curves = _curves_for(args, rate, model, cfg) if "dynamic" in cfg["policies"] else None
    eps = _episodes_for(args, rate, model, cfg)
    outcomes, tradeoff = _simulate(eps, rate, model, curves, cfg)
    out = cfg["out_dir"]
    write_outcomes(outcomes, out / "outcomes.csv")
    write_tradeoff(tradeoff, out / "tradeoff.csv")
    print(f"ran {len(cfg['policies'])} policies on {len(eps)} episodes -> {out / 'tradeoff.csv'}")
    return 0


def cmd_sweep(args, cfg) -> int:
    out = cfg["out_dir"]
    held_out = None
    if args.rate is not None and args.model is not None:
        rate, model = _load_pair(args)
    elif args.input is not None:
        eps = _read_input(args.input, cfg)
        cut = int(round(len(eps) * cfg["split"]))
        if cfg["mode"] == "real" and not 0 < cut < len(eps):
            raise CliError("real mode needs episodes on both sides of --split")
        fit_on = eps[:cut] if cfg["mode"] == "real" else eps
        held_out = eps[cut:]
        rate, model = _estimate(fit_on, cfg)
    else:
        raise CliError("sweep needs --input, or both --rate and --model")
    save_rate(rate, out / "rate.json")
    save_model(model, out / "model.json")

    need_curves = "dynamic" in cfg["policies"] or "dynamic" in cfg["methods"]
    curves = _solve(rate, model, _budget(cfg, rate), cfg) if need_curves else None
    if curves is not None:
        save_curves(curves, out / "curves.csv")
    methods = [m for m in cfg["methods"] if not (m == "upper" and model.beta == 0)]
    analytic = experiment.analytic_curves(model, rate, cfg["k_grid"], methods, curves,
                                          alpha=cfg["alpha"], reps=cfg["reps"], seed=cfg["seed"])
    experiment.write_bounds(analytic, out / "bounds.csv")

    eps = _episodes_for(args, rate, model, cfg, held_out)
    outcomes, tradeoff = _simulate(eps, rate, model, curves, cfg)
    write_outcomes(outcomes, out / "outcomes.csv")
    write_tradeoff(tradeoff, out / "tradeoff.csv")
    experiment.write_combined(experiment.combined_rows(tradeoff, analytic), out / "combined.csv")

    table = experiment.summary_table(tradeoff, analytic)
    (out / "summary.txt").write_text(table + "\n")
    print(table)
    failures = experiment.self_checks(tradeoff, analytic, model.beta)
    for f in failures:
        print(f"self-check failed: {f}", file=sys.stderr)
    if failures:
        return 1
    print("all self-checks passed")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return args.func(args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
