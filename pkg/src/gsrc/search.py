"""Two-stage hyperparameter search: GS gate first, train/evaluate survivors.

Every (cell, trial) pair is an independent task whose seeds derive from the
base seed and the cell coordinates, so results do not depend on execution
order or on which other cells are in the plan.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Optional

import numpy as np

from .drivers import Trajectory
from .errors import GSRCError, ValidationError
from .evaluation import (DEFAULT_HORIZON, DEFAULT_N_STARTS, DEFAULT_SYNC_TIME, DEFAULT_THRESHOLD,
                         lyapunov_spectrum_rc, mean_valid_time, spectrum_match)
from .gs import DEFAULT_TEST_TIME, DEFAULT_TOLERANCE, DEFAULT_TRANSIENT, auxiliary_test, cell_key, trial_seeds
from .lyapunov import LyapunovSpectrum
from .parallel import derive_seed, pmap
from .reservoir import Reservoir, ReservoirParams, synchronize
from .training import DEFAULT_BETA, DEFAULT_WASHOUT, FeatureSpec, train

log = logging.getLogger(__name__)

GATES = ("gs_only", "gs_then_train", "train_all")
AXES = ("spectral_radius", "pnz", "gamma", "sigma")
RESULTS_SCHEMA_VERSION = 1
RESULT_COLUMNS = (
    "schema_version", "sr", "pnz", "gamma", "sigma", "n_nodes", "trial", "seed",
    "gs_converged", "gs_final_distance", "gs_conditional_le", "trained",
    "mean_valid_time", "std_valid_time", "n_starts", "lambda1_rc", "leading_match", "tail_negative",
    "rc_exponents", "error",
)


@dataclass
class SearchPlan:
    base: ReservoirParams
    axes: dict = field(default_factory=dict)
    trials_per_cell: int = 1
    gate: str = "gs_then_train"
    base_seed: int = 0
    # training
    features: FeatureSpec = field(default_factory=FeatureSpec)
    beta: float = DEFAULT_BETA
    washout: float = DEFAULT_WASHOUT
    train_time: float = 500.0
    # GS test
    gs_test_time: float = DEFAULT_TEST_TIME
    gs_transient: float = DEFAULT_TRANSIENT
    gs_tolerance: float = DEFAULT_TOLERANCE
    # evaluation
    n_starts: int = DEFAULT_N_STARTS
    horizon: float = DEFAULT_HORIZON
    sync_time: float = DEFAULT_SYNC_TIME
    threshold: float = DEFAULT_THRESHOLD
    spectrum: bool = False
    k_exponents: Optional[int] = None
    lyapunov_steps: int = 20_000
    spectrum_tol: float = 0.15

    def __post_init__(self):
        if self.gate not in GATES:
            raise ValidationError(f"gate must be one of {GATES}, got {self.gate!r}")
        unknown = set(self.axes) - set(AXES)
        if unknown:
            raise ValidationError(f"unknown search axes {sorted(unknown)}; allowed {AXES}")
        self.axes = {k: [float(v) for v in self.axes[k]] for k in AXES if self.axes.get(k)}
        if not self.axes:
            raise ValidationError("search plan needs at least one non-empty axis")
        if self.trials_per_cell < 1:
            raise ValidationError("trials_per_cell must be >= 1")

    def cells(self) -> list:
        """Cartesian product of the axes, in axis order, as parameter sets."""
        names = list(self.axes)
        return [self.base.replace(**dict(zip(names, combo)))
                for combo in itertools.product(*(self.axes[n] for n in names))]

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.axes.values())

    def echo(self) -> dict:
        d = asdict(self)
        d["features"] = asdict(self.features)
        return d


@dataclass
class CellResult:
    coords: tuple
    params: ReservoirParams
    trial: int
    seed: int
    gs: Optional[dict] = None
    trained: bool = False
    metrics: Optional[dict] = None
    spectrum: Optional[dict] = None
    rc_exponents: Optional[list] = None
    wall_clock: dict = field(default_factory=dict)
    work: dict = field(default_factory=dict)
    error: Optional[str] = None
    normal_residual: Optional[float] = None

    @property
    def gs_passed(self) -> bool:
        return bool(self.gs and self.gs["converged"])

    @property
    def mean_valid_time(self) -> float:
        return self.metrics["mean_valid_time"] if self.metrics else math.nan

    def row(self) -> dict:
        sr, pnz, gamma, sigma = self.coords
        m = self.metrics or {}
        s = self.spectrum or {}
        return {
            "schema_version": RESULTS_SCHEMA_VERSION,
            "sr": repr(sr), "pnz": repr(pnz), "gamma": repr(gamma), "sigma": repr(sigma),
            "n_nodes": self.params.n_nodes, "trial": self.trial, "seed": self.seed,
            "gs_converged": "" if self.gs is None else int(self.gs["converged"]),
            "gs_final_distance": "" if self.gs is None else repr(self.gs["final_distance"]),
            "gs_conditional_le": "" if self.gs is None else repr(self.gs["conditional_le"]),
            "trained": int(self.trained),
            "mean_valid_time": repr(m["mean_valid_time"]) if m else "",
            "std_valid_time": repr(m["std_valid_time"]) if m else "",
            "n_starts": m.get("n_starts", ""),
            "lambda1_rc": repr(self.rc_exponents[0]) if self.rc_exponents else "",
            "leading_match": int(s["leading_match"]) if s else "",
            "tail_negative": int(s["tail_negative"]) if s else "",
            "rc_exponents": ";".join(repr(v) for v in self.rc_exponents) if self.rc_exponents else "",
            "error": self.error or "",
        }


@dataclass(frozen=True)
class SearchData:
    """Standardized input split into the training span and the held-out tail."""

    train: Trajectory
    test: Trajectory
    lambda1: float
    driver_spectrum: Optional[LyapunovSpectrum] = None

    @classmethod
    def split(cls, data: Trajectory, washout: float, train_time: float, lambda1=None, driver_spectrum=None):
        n_train = int(round((washout + train_time) / data.dt)) + 1
        if n_train >= len(data):
            raise ValidationError(
                f"input has {data.duration:g} time units, training alone needs {washout + train_time:g}")
        if lambda1 is None:
            if driver_spectrum is None:
                raise ValidationError("need lambda1 or a driver spectrum")
            lambda1 = driver_spectrum.leading
        return cls(data.segment(0, n_train), data.segment(n_train), float(lambda1), driver_spectrum)


def _evaluate_cell(task, plan: SearchPlan, data: SearchData) -> CellResult:
    params, trial = task
    res_seed, pair = trial_seeds(plan.base_seed, params, trial)
    p = params.replace(seed=res_seed)
    out = CellResult(cell_key(params), p, trial, res_seed)
    dt = data.train.dt
    try:
        t = time.perf_counter()
        res = Reservoir.build(p)
        # the verdict is recorded under every gate, train_all included
        report = auxiliary_test(res, data.train, seed_pair=pair, test_time=plan.gs_test_time,
                                transient_time=plan.gs_transient, tolerance=plan.gs_tolerance)
        out.gs = report.summary()
        out.work["gs"] = 2 * int(round((plan.gs_test_time + plan.gs_transient) / dt))
        out.wall_clock["gs"] = time.perf_counter() - t
        if plan.gate == "gs_only" or (plan.gate == "gs_then_train" and not out.gs_passed):
            return out

        t = time.perf_counter()
        readout = train(res, data.train, plan.features, plan.beta, plan.washout)
        out.trained = True
        out.normal_residual = readout.diagnostics["normal_residual"]
        out.wall_clock["train"] = time.perf_counter() - t
        out.work["train"] = len(data.train) - 1

        t = time.perf_counter()
        metrics = mean_valid_time(res, readout, data.test, plan.n_starts, plan.sync_time, plan.horizon,
                                  plan.threshold, data.lambda1, seed=derive_seed(plan.base_seed, "eval", trial))
        out.metrics = metrics.summary()
        sync_steps = int(round(plan.sync_time / dt))
        out.work["evaluate"] = sum(sync_steps + int(round(v / data.lambda1 / dt))
                                   for v in metrics.per_start_valid_time)
        if plan.spectrum:
            r0 = synchronize(res, data.test.segment(0, sync_steps + 1),
                             res.random_state(derive_seed(plan.base_seed, "lyap-r0", trial)))
            spec = lyapunov_spectrum_rc(res, readout, r0, k=plan.k_exponents, n_steps=plan.lyapunov_steps)
            out.rc_exponents = [float(v) for v in spec.exponents]
            out.work["evaluate"] += plan.lyapunov_steps * (spec.k + 1)
            if data.driver_spectrum is not None:
                rep = spectrum_match(data.driver_spectrum, spec, plan.spectrum_tol)
                out.spectrum = {
                    "leading_match": rep.leading_match,
                    "tail_negative": rep.tail_negative,
                    "per_exponent_error": rep.per_exponent_error,
                    "n_matched": rep.n_matched,
                }
        out.wall_clock["evaluate"] = time.perf_counter() - t
    except GSRCError as exc:
        out.error = f"{type(exc).__name__}: {exc}"
        log.warning("cell %s trial %d failed: %s", out.coords, trial, exc)
    return out


def run_search(plan: SearchPlan, data: SearchData, workers: int = 1, cells=None) -> list:
    """Evaluate every (cell, trial); failures are recorded, never raised.

    ``cells`` restricts the run to a subset of the plan's cells (same
    seeds as in the full run).
    """
    cells = plan.cells() if cells is None else list(cells)
    log.info("search: %d cells x %d trials, gate=%s", len(cells), plan.trials_per_cell, plan.gate)
    tasks = [(p, i) for p in cells for i in range(plan.trials_per_cell)]
    return pmap(partial(_evaluate_cell, plan=plan, data=data), tasks, workers)


def savings_report(results: list, cost: str = "wall_clock") -> dict:
    """Gated cost versus the counterfactual of training every cell.

    The counterfactual charges every result the mean train+evaluate cost
    measured on the cells that did train. ``cost`` selects measured wall
    clock seconds or deterministic work units (reservoir RK4 steps).
    """
    if cost not in ("wall_clock", "work"):
        raise ValidationError("cost must be 'wall_clock' or 'work'")

    def stage(r, name):
        return float(getattr(r, cost).get(name, 0.0))

    trained = [r for r in results if r.trained]
    gs_total = sum(stage(r, "gs") for r in results)
    te = [stage(r, "train") + stage(r, "evaluate") for r in trained]
    gated = gs_total + sum(te)
    if not trained:
        return {"cost": cost, "gated_cost": gated, "ungated_cost_estimate": None, "ratio": "undefined",
                "n_results": len(results), "n_trained": 0}
    ungated = len(results) * float(np.mean(te))
    return {
        "cost": cost,
        "gated_cost": gated,
        "ungated_cost_estimate": ungated,
        "ratio": ungated / gated if gated > 0 else "undefined",
        "n_results": len(results),
        "n_trained": len(trained),
    }


@dataclass
class SweepPoint:
    sr: float
    pass_fraction: float
    mean_valid_time: float
    std_valid_time: float
    lambda1_rc: float
    exponents: list


def sr_sweep(plan: SearchPlan, data: SearchData, workers: int = 1):
    """Skill and RC exponents against spectral radius.

    Returns ``(points, results)``; trials of a cell are averaged.
    """
    if list(plan.axes) != ["spectral_radius"]:
        raise ValidationError("sr_sweep needs a plan whose only axis is spectral_radius")
    if not plan.spectrum:
        plan = SearchPlan(**{**plan.__dict__, "spectrum": True})
    results = run_search(plan, data, workers)
    points = []
    for sr in plan.axes["spectral_radius"]:
        rs = [r for r in results if r.coords[0] == sr]
        vt = [r.mean_valid_time for r in rs if r.metrics]
        std = [r.metrics["std_valid_time"] for r in rs if r.metrics]
        ex = [r.rc_exponents for r in rs if r.rc_exponents]
        mean_ex = np.mean(np.array(ex), axis=0).tolist() if ex else []
        points.append(SweepPoint(
            sr=sr,
            pass_fraction=float(np.mean([r.gs_passed for r in rs])),
            mean_valid_time=float(np.mean(vt)) if vt else math.nan,
            std_valid_time=float(np.mean(std)) if std else math.nan,
            lambda1_rc=mean_ex[0] if mean_ex else math.nan,
            exponents=mean_ex,
        ))
    return points, results


# -- output ------------------------------------------------------------------

def write_results_csv(results: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in results:
            w.writerow(r.row())


def write_sweep_csv(points: list, path) -> None:
    k = max((len(p.exponents) for p in points), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sr", "pass_fraction", "mean_valid_time", "std_valid_time"] + [f"lambda{i + 1}" for i in range(k)])
        for p in points:
            ex = list(p.exponents) + [math.nan] * (k - len(p.exponents))
            w.writerow([repr(p.sr), repr(p.pass_fraction), repr(p.mean_valid_time), repr(p.std_valid_time)]
                       + [repr(float(v)) for v in ex])


def summary(plan: SearchPlan, results: list) -> dict:
    """Deterministic run summary (work-unit savings; wall clock is reported elsewhere)."""
    return {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "plan": plan.echo(),
        "n_cells": plan.size,
        "n_results": len(results),
        "gs_pass": sum(r.gs_passed for r in results),
        "trained": sum(r.trained for r in results),
        "savings": savings_report(results, cost="work"),
        "failures": [{"coords": list(r.coords), "trial": r.trial, "error": r.error} for r in results if r.error],
    }


def write_summary_json(plan: SearchPlan, results: list, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary(plan, results), fh, indent=2, sort_keys=True)
        fh.write("\n")
