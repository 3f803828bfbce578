"""Command-line pipeline: generate, gs-test, train, forecast, lyapunov, sweep.

Every subcommand reads the config, reads what earlier subcommands left in
the output directory, writes its own products plus figures, and refreshes
``manifest.json`` (file checksums, timings, host info).

Exit codes: 0 success, 1 other error, 2 invalid input or config,
3 missing prerequisite, 4 divergence, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .config import RunConfig
from .drivers import (Standardizer, Trajectory, fit_standardizer, generate, get_system, lyapunov_spectrum_ode,
                      read_bundle, write_bundle, write_csv)
from .errors import GSRCError, PrerequisiteError, ValidationError
from .evaluation import lyapunov_spectrum_rc, mean_valid_time, spectrum_match
from .gs import auxiliary_test, write_distance_csv, write_scatter_csv
from .lyapunov import LyapunovSpectrum
from .reservoir import Reservoir, load_reservoir, save_reservoir, synchronize
from .search import (SearchData, run_search, savings_report, sr_sweep, write_results_csv, write_summary_json,
                     write_sweep_csv)
from .training import load_readout, save_readout, train

log = logging.getLogger("gsrc")

DATA = "data"
MODEL = "model"


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_plain) + "\n")


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise PrerequisiteError(f"missing {path}; run `gsrc {producer}` with the same --out first")
    return path


class Run:
    """Output-directory context shared by the subcommands."""

    def __init__(self, cfg: RunConfig, workers: int = 1):
        self.cfg = cfg
        self.out = Path(cfg.output["directory"])
        self.workers = workers
        self.timings = {}

    # -- artifacts ---------------------------------------------------------

    def input_data(self) -> Trajectory:
        """The (standardized, if configured) driver trajectory."""
        _require(self.out / DATA / "raw" / "meta.json", "generate")
        name = "standardized" if self.cfg.driver["standardize"] else "raw"
        return read_bundle(_require(self.out / DATA / name, "generate"))

    def standardizer(self):
        p = self.out / DATA / "standardizer.json"
        return Standardizer.from_dict(json.loads(p.read_text())) if p.exists() else None

    def driver_spectrum(self) -> LyapunovSpectrum:
        p = _require(self.out / DATA / "driver_spectrum.json", "generate")
        return LyapunovSpectrum.from_dict(json.loads(p.read_text()))

    def split(self) -> SearchData:
        t = self.cfg.training
        return SearchData.split(self.input_data(), t["washout"], t["train_time"],
                                driver_spectrum=self.driver_spectrum())

    def model(self):
        _require(self.out / MODEL / "reservoir" / "meta.json", "train")
        _require(self.out / MODEL / "readout" / "readout.json", "train")
        return load_reservoir(self.out / MODEL / "reservoir"), load_readout(self.out / MODEL / "readout")

    # -- bookkeeping ---------------------------------------------------------

    def echo_config(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.yaml").write_text(self.cfg.dump())

    def write_manifest(self, command: str, extra=None) -> None:
        path = self.out / "manifest.json"
        old = json.loads(path.read_text()) if path.exists() else {}
        files = {}
        for p in sorted(self.out.rglob("*")):
            if p.is_file() and p.name != "manifest.json":
                files[p.relative_to(self.out).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
        runs = old.get("runs", {})
        runs[command] = {"timings_s": self.timings, **(extra or {})}
        manifest = {
            "package_version": __version__,
            "files": files,
            "runs": runs,
            "host": {
                "python": platform.python_version(),
                "platform": platform.platform(),
                "numpy": np.__version__,
                "workers": self.workers,
            },
        }
        _write_json(path, manifest)

    def timed(self, name, fn, *args, **kw):
        t = time.perf_counter()
        out = fn(*args, **kw)
        self.timings[name] = round(time.perf_counter() - t, 3)
        return out


# -- subcommands ---------------------------------------------------------------

def cmd_generate(run: Run) -> dict:
    d = run.cfg.driver
    system = get_system(d["system"], **d["params"])
    traj = run.timed("integrate", generate, system, d["duration"], d["dt"], d["transient"], d["seed"])
    data = run.out / DATA
    write_csv(traj, data / "trajectory.csv")
    write_bundle(traj, data / "raw")
    if d["standardize"]:
        st = fit_standardizer(traj)
        write_bundle(st.apply(traj), data / "standardized")
        _write_json(data / "standardizer.json", st.to_dict())
    n = int(round(d["lyapunov_time"] / d["dt"]))
    spec = run.timed("lyapunov", lyapunov_spectrum_ode, system, traj.states[-1], d["dt"], n, transient=0.0)
    _write_json(data / "driver_spectrum.json", spec.to_dict())
    plotting.plot_attractor(traj, run.out / "figures" / "attractor.png", title=system.name)
    log.info("driver exponents %s (converged=%s)", np.round(spec.exponents, 4), spec.converged)
    return {"exponents": [float(v) for v in spec.exponents], "converged": spec.converged}


def cmd_gs_test(run: Run) -> dict:
    data = run.split()
    params = run.cfg.reservoir_params(data.train.dim)
    res = run.timed("build", Reservoir.build, params)
    g = run.cfg.gs
    report = run.timed("gs", auxiliary_test, res, data.train, seed_pair=tuple(g["seeds"]),
                       test_time=g["test_time"], transient_time=g["transient"], tolerance=g["tolerance"])
    out = run.out / "gs"
    _write_json(out / "report.json", report.summary())
    write_scatter_csv(report, out / "scatter.csv")
    write_distance_csv(report, out / "distance.csv")
    plotting.plot_gs(report, run.out / "figures" / "gs.png")
    log.info("GS verdict: %s (final distance %.3g)", "pass" if report.converged else "fail", report.final_distance)
    return {"converged": report.converged}


def cmd_train(run: Run) -> dict:
    data = run.split()
    res = run.timed("build", Reservoir.build, run.cfg.reservoir_params(data.train.dim))
    t = run.cfg.training
    readout = run.timed("train", train, res, data.train, run.cfg.feature_spec(), t["beta"], t["washout"],
                        standardizer=run.standardizer())
    save_reservoir(res, run.out / MODEL / "reservoir")
    save_readout(readout, run.out / MODEL / "readout")
    log.info("trained: rmse %s, normal residual %.2e", np.round(readout.diagnostics["train_rmse"], 6),
             readout.diagnostics["normal_residual"])
    return {"normal_residual": readout.diagnostics["normal_residual"]}


def cmd_forecast(run: Run) -> dict:
    res, readout = run.model()
    data = run.split()
    e = run.cfg.evaluation
    metrics = run.timed("forecast", mean_valid_time, res, readout, data.test, e["n_starts"], e["sync_time"],
                        e["horizon"], e["threshold"], data.lambda1, seed=e["seed"], workers=run.workers,
                        keep_paths=1)
    out = run.out / "forecast"
    out.mkdir(parents=True, exist_ok=True)
    metrics.write(out / "metrics.csv", out / "summary.json")
    # first start, full horizon, for plotting
    start = metrics.start_indices[0]
    pred = metrics.paths[0]
    truth = data.test.segment(start, start + len(pred))
    pred_traj = Trajectory(truth.dt, pred[: len(truth)], truth.t0)
    with open(out / "example.csv", "w") as fh:
        D = truth.dim
        fh.write("t," + ",".join(f"true_u{i}" for i in range(D)) + "," + ",".join(f"pred_u{i}" for i in range(D)) + "\n")
        for tt, a, b in zip(truth.times, truth.states, pred_traj.states):
            fh.write(",".join("%.17g" % v for v in (tt, *a, *b)) + "\n")
    plotting.plot_forecast(truth, pred_traj, run.out / "figures" / "forecast.png", data.lambda1,
                           valid=metrics.per_start_valid_time[0])
    log.info("mean valid time %.3f +- %.3f Lyapunov times over %d starts",
             metrics.mean_valid_time, metrics.std_valid_time, metrics.n_starts)
    return {"mean_valid_time": metrics.mean_valid_time}


def cmd_lyapunov(run: Run) -> dict:
    res, readout = run.model()
    data = run.split()
    e = run.cfg.evaluation
    sync = int(round(e["sync_time"] / data.test.dt))
    r0 = synchronize(res, data.test.segment(0, sync + 1), res.random_state(e["seed"]))
    spec = run.timed("lyapunov", lyapunov_spectrum_rc, res, readout, r0, k=e["k_exponents"],
                     n_steps=e["lyapunov_steps"], seed=e["seed"])
    report = spectrum_match(data.driver_spectrum, spec, e["spectrum_tol"])
    _write_json(run.out / "lyapunov" / "spectrum_report.json", report.to_dict())
    plotting.plot_spectrum(report, run.out / "figures" / "spectrum.png")
    log.info("RC exponents %s; leading_match=%s tail_negative=%s", np.round(spec.exponents, 4),
             report.leading_match, report.tail_negative)
    return {"leading_match": report.leading_match, "tail_negative": report.tail_negative}


def cmd_sweep(run: Run) -> dict:
    data = run.split()
    plan = run.cfg.search_plan(data.train.dim)
    out = run.out / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    if list(plan.axes) == ["spectral_radius"] and plan.spectrum:
        points, results = run.timed("sweep", sr_sweep, plan, data, run.workers)
        write_sweep_csv(points, out / "sr_sweep.csv")
        plotting.plot_sr_sweep(points, run.out / "figures" / "sr_sweep.png", data.lambda1)
    else:
        results = run.timed("sweep", run_search, plan, data, run.workers)
        if {"spectral_radius", "pnz"} <= set(plan.axes):
            plotting.plot_search_heatmaps(results, run.out / "figures" / "search.png")
    write_results_csv(results, out / "results.csv")
    write_summary_json(plan, results, out / "summary.json")
    wall = savings_report(results, cost="wall_clock")
    log.info("sweep: %d results, %d GS pass, %d trained, wall-clock savings ratio %s",
             len(results), sum(r.gs_passed for r in results), sum(r.trained for r in results), wall["ratio"])
    return {"wall_clock_savings": wall}


COMMANDS = {
    "generate": cmd_generate,
    "gs-test": cmd_gs_test,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "lyapunov": cmd_lyapunov,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsrc", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", help="YAML run configuration (defaults: reference Lorenz63 setup)")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--workers", type=int, default=1, help="worker process cap")
    p.add_argument("--seed", type=int, help="override the reservoir and search seeds")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ValidationError("--workers must be >= 1")
        cfg = RunConfig.load(args.config) if args.config else RunConfig.from_dict({})
        cfg = cfg.with_overrides(seed=args.seed, out=args.out)
        run = Run(cfg, args.workers)
        run.echo_config()
        extra = COMMANDS[args.command](run)
        run.write_manifest(args.command, extra)
    except GSRCError as exc:
        print(f"gsrc {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"gsrc {args.command}: I/O error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
