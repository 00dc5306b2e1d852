"""Monte-Carlo comparison of the three controller modes on random references."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .gp import GpModel, RobotPrior, fit
from .sim import Mode, Reference, generate_training_data, run_closed_loop

MODE_TITLES = {
    Mode.SWITCHING: "switching",
    Mode.GP_ONLY: "GP only",
    Mode.BACKUP_ONLY: "prior bounds only",
}


@dataclass(frozen=True)
class ExperimentConfig:
    n_trials: int = 100
    c_range: tuple = (4.0, 100.0)
    horizon: float = 30.0
    modes: tuple = (Mode.SWITCHING, Mode.GP_ONLY, Mode.BACKUP_ONLY)
    seed: int = 0
    output_dir: str | None = None
    workers: int = 1
    write_trajectories: bool = True

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        lo, hi = self.c_range
        if not 0 < lo <= hi:
            raise ValueError("c_range must be positive and ordered")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "modes", tuple(Mode(m) for m in self.modes))
        object.__setattr__(self, "c_range", (float(lo), float(hi)))

    def trial_c(self) -> np.ndarray:
        """One ``c`` per trial, each from its own stream split off the master seed."""
        lo, hi = self.c_range
        streams = np.random.SeedSequence(self.seed).spawn(self.n_trials)
        return np.array([np.random.default_rng(s).uniform(lo, hi) for s in streams])


@dataclass
class ModeSummary:
    mode: Mode
    records: list = field(default_factory=list)

    def _count(self, key) -> int:
        return sum(1 for r in self.records if r[key])

    @property
    def infeasible(self) -> int:
        return self._count("infeasible")

    @property
    def diverged(self) -> int:
        return self._count("diverged")

    @property
    def completed(self) -> int:
        return self._count("completed")

    @property
    def failed(self) -> int:
        return self.infeasible + self.diverged

    @property
    def mean_mse(self) -> float | None:
        """Mean MSE over completed runs; ``None`` if there are none."""
        vals = [r["mse"] for r in self.records if r["completed"]]
        return float(np.mean(vals)) if vals else None

    @property
    def mean_mse_all(self) -> float | None:
        """Mean MSE over every run, failed runs scored up to their failure time."""
        vals = [r["mse"] for r in self.records if np.isfinite(r["mse"])]
        return float(np.mean(vals)) if vals else None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "mean_mse_completed": self.mean_mse,
            "mean_mse_all_truncated": self.mean_mse_all,
            "infeasible": self.infeasible,
            "diverged": self.diverged,
            "completed": self.completed,
            "trials": self.records,
        }


@dataclass
class ExperimentSummary:
    cfg: ExperimentConfig
    modes: dict

    def __getitem__(self, mode) -> ModeSummary:
        return self.modes[Mode(mode)]

    def to_dict(self) -> dict:
        return {
            "n_trials": self.cfg.n_trials,
            "c_range": list(self.cfg.c_range),
            "horizon": self.cfg.horizon,
            "seed": self.cfg.seed,
            "modes": {m.value: s.to_dict() for m, s in self.modes.items()},
        }

    def to_markdown(self) -> str:
        fmt = lambda v: "---" if v is None else f"{v:.4g}"
        cols = list(self.modes)
        head = "| | " + " | ".join(MODE_TITLES[m] for m in cols) + " |"
        sep = "|---|" + "---|" * len(cols)
        rows = [
            "| mean squared error | " + " | ".join(fmt(self.modes[m].mean_mse) for m in cols) + " |",
            "| # infeasibilities | " + " | ".join(str(self.modes[m].infeasible) for m in cols) + " |",
            "| # diverged | " + " | ".join(str(self.modes[m].diverged) for m in cols) + " |",
            "| mean squared error (all runs, truncated) | "
            + " | ".join(fmt(self.modes[m].mean_mse_all) for m in cols) + " |",
        ]
        return "\n".join([head, sep] + rows) + "\n"

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        (out / "summary.md").write_text(
            f"{self.cfg.n_trials} random references, c ~ U{list(self.cfg.c_range)}, "
            f"horizon {self.cfg.horizon} s\n\n" + self.to_markdown())


def build_model(config: Config) -> GpModel:
    """Generate training data and fit the GP as configured."""
    robot = config.robot()
    d, g = config["data"], config["gp"]
    tset = generate_training_data(
        robot, config.region(), n=d["n"], noise_std=d["noise_std"], u_box=tuple(d["u_box"]),
        seed=d["seed"], grid_shape=config.grid_shape(),
        lattice_generator=d["lattice_generator"] or None)
    prior = RobotPrior(config.prior_params(), config["prior"]["use_g"])
    return fit(tset, prior, beta=g["beta"], delta=g["delta"], optimize=g["optimize"],
               restarts=g["restarts"], max_evals=g["max_evals"], seed=g["seed"],
               optimizer=g["optimizer"])


# worker state for the process pool
_W: dict = {}


def _init_worker(config_raw, model_json):
    _W["config"] = Config(config_raw)
    _W["model"] = GpModel.from_json(model_json)


def _run_trial(job):
    k, c, modes, horizon, out_dir = job
    return _trial(_W["config"], _W["model"], k, c, modes, horizon, out_dir)


def _trial(config: Config, model, k, c, modes, horizon, out_dir):
    robot, bounds, chain, gain = config.robot(), config.bounds(), config.chain(), config.gain()
    ctl = config["control"]
    ref = Reference(c, horizon)
    out = {}
    for mode in modes:
        log = run_closed_loop(robot, model, bounds, chain, gain, ref, mode, dt_ctrl=ctl["dt"],
                              substeps=ctl["substeps"], zeta=config["switch"]["zeta"],
                              solver=ctl["solver"])
        if out_dir is not None:
            log.to_csv(Path(out_dir) / f"trial_{k}_{mode.value}.csv")
        rec = log.summary()
        rec["trial"] = k
        out[mode] = rec
    return k, out


def run_experiment(cfg: ExperimentConfig, config: Config, model: GpModel | None = None) -> ExperimentSummary:
    """Run every mode on ``cfg.n_trials`` shared references and aggregate."""
    if model is None:
        model = build_model(config)
    out_dir = None
    if cfg.output_dir is not None:
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        out_dir = cfg.output_dir if cfg.write_trajectories else None
    cs = cfg.trial_c()
    jobs = [(k, float(c), cfg.modes, cfg.horizon, out_dir) for k, c in enumerate(cs)]
    workers = max(1, min(cfg.workers or os.cpu_count() or 1, len(jobs)))
    if workers == 1:
        results = [_trial(config, model, *j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(config.raw, model.to_json())) as pool:
            results = list(pool.map(_run_trial, jobs, chunksize=1))
    results.sort(key=lambda r: r[0])
    modes = {m: ModeSummary(m) for m in cfg.modes}
    for _, recs in results:
        for m, rec in recs.items():
            modes[m].records.append(rec)
    summary = ExperimentSummary(cfg, modes)
    if cfg.output_dir is not None:
        summary.write(cfg.output_dir)
    return summary


def experiment_config(config: Config, **overrides) -> ExperimentConfig:
    e = dict(config["experiment"])
    e.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(
        n_trials=int(e["n_trials"]), c_range=tuple(e["c_range"]), horizon=float(e["horizon"]),
        modes=tuple(e["modes"]), seed=int(e["seed"]), workers=int(e["workers"]),
        output_dir=e["output_dir"] or None, write_trajectories=bool(e["write_trajectories"]))
