"""Command-line entry point.

Exit codes: 0 success, 1 bad usage or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, dump_config, load_config
from .gp import GpModel, RobotPrior, TrainingSet, fit
from .harness import build_model, experiment_config, run_experiment
from .sim import Mode, Reference, generate_training_data, run_closed_loop

log = logging.getLogger("ejcbf")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; we reserve 2 for runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ejcbf", description="GP-based safe control of elastic-joint robots.")
    p.add_argument("--config", help="TOML file merged over the shipped defaults")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="sample a training set")
    g.add_argument("--out", required=True, help="CSV path")
    g.add_argument("--seed", type=int)
    g.add_argument("--n", type=int, help="number of samples")

    f = sub.add_parser("fit", help="fit the GP and save it as JSON")
    f.add_argument("--data", help="training CSV from gen-data (default: generate)")
    f.add_argument("--out", required=True, help="model JSON path")
    f.add_argument("--seed", type=int, help="optimizer seed")
    f.add_argument("--no-optimize", action="store_true", help="keep the initial hyperparameters")

    s = sub.add_parser("simulate", help="run one closed-loop trajectory")
    s.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.SWITCHING.value)
    s.add_argument("--c", type=float, default=15.0, help="reference period parameter")
    s.add_argument("--horizon", type=float, help="seconds (default from config)")
    s.add_argument("--model", help="model JSON from fit (default: fit now)")
    s.add_argument("--out", default="trajectory.csv", help="trajectory CSV path")
    s.add_argument("--summary", help="optional JSON summary path")

    e = sub.add_parser("experiment", help="Monte-Carlo comparison of the controller modes")
    e.add_argument("--trials", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--horizon", type=float)
    e.add_argument("--workers", type=int, help="processes (0 = all cores)")
    e.add_argument("--model", help="model JSON from fit (default: fit now)")
    e.add_argument("--out-dir", default="results")
    e.add_argument("--no-trajectories", action="store_true", help="skip per-trial CSV files")
    return p


def _model(args, config) -> GpModel:
    if args.model:
        if not Path(args.model).is_file():
            raise ConfigError(f"model file not found: {args.model}")
        return GpModel.load(args.model)
    log.info("no --model given; generating data and fitting the GP")
    return build_model(config)


def _gen_data(args, config):
    d = config["data"]
    if args.seed is not None or args.n is not None:
        over = {k: v for k, v in (("seed", args.seed), ("n", args.n)) if v is not None}
        config = config.override("data", **over).validate()
        d = config["data"]
    tset = generate_training_data(
        config.robot(), config.region(), n=d["n"], noise_std=d["noise_std"], u_box=tuple(d["u_box"]),
        seed=d["seed"], grid_shape=config.grid_shape(), lattice_generator=d["lattice_generator"] or None)
    tset.to_csv(args.out)
    log.info("wrote %d samples to %s", tset.count, args.out)


def _fit(args, config):
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.no_optimize:
        over["optimize"] = False
    if over:
        config = config.override("gp", **over).validate()
    if args.data:
        if not Path(args.data).is_file():
            raise ConfigError(f"data file not found: {args.data}")
        g = config["gp"]
        tset = TrainingSet.from_csv(args.data)
        prior = RobotPrior(config.prior_params(), config["prior"]["use_g"])
        model = fit(tset, prior, beta=g["beta"], delta=g["delta"], optimize=g["optimize"],
                    restarts=g["restarts"], max_evals=g["max_evals"], seed=g["seed"],
                    optimizer=g["optimizer"])
    else:
        model = build_model(config)
    model.save(args.out)
    log.info("wrote model to %s", args.out)


def _simulate(args, config):
    model = _model(args, config)
    ctl = config["control"]
    horizon = args.horizon if args.horizon is not None else config["experiment"]["horizon"]
    if not horizon > 0 or not args.c > 0:
        raise ConfigError("--horizon and --c must be positive")
    t0 = time.perf_counter()
    tl = run_closed_loop(config.robot(), model, config.bounds(), config.chain(), config.gain(),
                         Reference(args.c, horizon), args.mode, dt_ctrl=ctl["dt"],
                         substeps=ctl["substeps"], zeta=config["switch"]["zeta"], solver=ctl["solver"])
    tl.to_csv(args.out)
    if args.summary:
        tl.write_summary(args.summary)
    s = tl.summary()
    print(f"{s['mode']}: steps={s['steps']} mse={s['mse']:.6g} max_q1={s['max_q1']:.6g} "
          f"infeasible={s['infeasible']} diverged={s['diverged']} "
          f"({time.perf_counter() - t0:.1f} s)")


def _experiment(args, config):
    model = _model(args, config)
    cfg = experiment_config(
        config, n_trials=args.trials, seed=args.seed, horizon=args.horizon, workers=args.workers,
        output_dir=args.out_dir, write_trajectories=False if args.no_trajectories else None)
    summary = run_experiment(cfg, config, model)
    print(summary.to_markdown(), end="")


COMMANDS = {"gen-data": _gen_data, "fit": _fit, "simulate": _simulate, "experiment": _experiment}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config)
        if args.print_config:
            print(dump_config(config), end="")
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("ejcbf: error: a subcommand is required", file=sys.stderr)
            return EXIT_CONFIG
        COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"ejcbf: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        log.debug("failure", exc_info=True)
        print(f"ejcbf: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
