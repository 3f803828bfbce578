"""Auxiliary-system test for generalized synchronization.

Two copies of the same reservoir, started from different states, are driven
by the same input. If they forget their initial conditions and collapse onto
one trajectory, the response is a function of the drive and a readout
``u = phi(r)`` exists. The test needs no training and only a short stretch
of data, which makes it a cheap gate in front of a hyperparameter search.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Optional

import numpy as np

from .drivers import Trajectory
from .errors import DivergenceError, GSRCError, ValidationError
from .parallel import derive_seed, pmap
from .reservoir import Reservoir, ReservoirParams, iter_drive

log = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-8
DEFAULT_TRANSIENT = 10.0
DEFAULT_TEST_TIME = 50.0
DISTANCE_FLOOR = 1e-14
SUSTAIN_FRACTION = 0.1
SCAN_COLUMNS = ("sr", "pnz", "gamma", "sigma", "pass_fraction", "mean_cond_le", "trials")


@dataclass
class GSReport:
    """Outcome of one auxiliary test.

    ``final_distance`` is the largest RMS per-node distance
    ``|r_A - r_B| / sqrt(N)`` over the final tenth of the test window, so
    ``converged`` is exactly ``final_distance < tolerance_used``.
    """

    converged: bool
    final_distance: float
    conditional_le: float
    transient_time: float
    tolerance_used: float
    scatter_sample: np.ndarray
    times: np.ndarray = field(repr=False)
    distances: np.ndarray = field(repr=False)
    floor_time: Optional[float] = None
    diagnostic: Optional[str] = None

    def summary(self) -> dict:
        return {
            "converged": bool(self.converged),
            "final_distance": float(self.final_distance),
            "conditional_le": float(self.conditional_le),
            "transient_time": float(self.transient_time),
            "tolerance_used": float(self.tolerance_used),
            "floor_time": self.floor_time,
            "diagnostic": self.diagnostic,
        }


def floor_crossing_time(t, d, floor: float = DISTANCE_FLOOR) -> Optional[float]:
    below = np.flatnonzero(np.asarray(d) <= floor)
    return float(np.asarray(t)[below[0]]) if below.size else None


def estimate_conditional_le(t, d, floor: float = DISTANCE_FLOOR, saturation: float = math.inf) -> float:
    """Least-squares slope of ``log d`` against ``t``.

    Uses the leading stretch of samples before ``d`` first drops to
    ``floor``, ignoring samples at or above ``saturation``. When fewer than
    two usable samples remain because the floor was hit almost at once,
    returns ``-inf`` ("faster than measurable"); see
    :func:`floor_crossing_time` for when that happened.
    """
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    if t.shape != d.shape or t.size < 10:
        raise ValidationError("need matching t and d with at least 10 points")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValidationError("distances must be finite and non-negative")
    hit = np.flatnonzero(d <= floor)
    stop = hit[0] if hit.size else d.size
    tt, dd = t[:stop], d[:stop]
    keep = dd < saturation
    tt, dd = tt[keep], dd[keep]
    if tt.size < 2:
        if hit.size:
            return -math.inf
        raise ValidationError("no samples below saturation")
    slope = np.polyfit(tt, np.log(dd), 1)[0]
    return float(slope)


def auxiliary_test(res: Reservoir, input: Trajectory, seed_pair=(1, 2), test_time: float = DEFAULT_TEST_TIME,
                   transient_time: float = DEFAULT_TRANSIENT, tolerance: float = DEFAULT_TOLERANCE,
                   chi_index: int = 0, scatter_points: int = 500, r0_pair=None) -> GSReport:
    """Drive two copies of ``res`` with the same input and compare them.

    Initial states are uniform on [-1, 1]^N from ``seed_pair`` unless
    ``r0_pair`` gives them explicitly.
    """
    n_samples = int(round((transient_time + test_time) / input.dt)) + 1
    if len(input) < n_samples:
        raise ValidationError(
            f"input covers {input.duration:g} time units; the test needs {transient_time + test_time:g}")
    if r0_pair is None:
        r0_pair = (res.random_state(seed_pair[0]), res.random_state(seed_pair[1]))
    R0 = np.column_stack([np.asarray(r0_pair[0], float), np.asarray(r0_pair[1], float)])
    n = res.n_nodes
    u = input.states[:n_samples]
    t = np.arange(n_samples) * input.dt
    d = np.full(n_samples, np.nan)
    first_post = int(round(transient_time / input.dt))
    chi = np.empty((n_samples - first_post, 2))
    diagnostic = None
    try:
        for k, R in enumerate(iter_drive(res, u, input.dt, R0)):
            diff = R[:, 0] - R[:, 1]
            d[k] = math.sqrt(float(diff @ diff))
            if k >= first_post:
                chi[k - first_post] = R[chi_index]
            if not math.isfinite(d[k]):
                raise DivergenceError("distance is not finite", step=k)
    except DivergenceError as exc:
        diagnostic = f"diverged: {exc}"
        log.warning("auxiliary test: reservoir diverged (%s)", exc)

    if diagnostic is not None:
        valid = np.isfinite(d)
        return GSReport(False, math.inf, math.nan, transient_time, tolerance, np.empty((0, 2)),
                        t[valid], d[valid], None, diagnostic)

    tail = max(1, int(round(SUSTAIN_FRACTION * test_time / input.dt)))
    final = float(np.max(d[-tail:]) / math.sqrt(n))
    cle = estimate_conditional_le(t, d)
    floor_t = floor_crossing_time(t, d)
    if cle == -math.inf:
        diagnostic = "faster than measurable"
    converged = final < tolerance
    # the scatter covers the window the verdict is judged on
    chi = chi[-tail:]
    stride = max(1, len(chi) // scatter_points)
    return GSReport(converged, final, cle, transient_time, tolerance, chi[::stride].copy(), t, d, floor_t,
                    diagnostic)


def write_scatter_csv(report: GSReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chi_a", "chi_b"])
        for a, b in report.scatter_sample:
            w.writerow([repr(float(a)), repr(float(b))])


def write_distance_csv(report: GSReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "distance"])
        for a, b in zip(report.times, report.distances):
            w.writerow([repr(float(a)), repr(float(b))])


# -- grid scan ---------------------------------------------------------------

def cell_key(p: ReservoirParams):
    return (p.spectral_radius, p.pnz, p.gamma, p.sigma)


@dataclass
class ScanCell:
    params: ReservoirParams
    pass_fraction: float
    mean_cond_le: float
    trials: int
    reports: list = field(default_factory=list, repr=False)
    errors: list = field(default_factory=list)


def trial_seeds(base_seed: int, params: ReservoirParams, trial: int):
    """``(reservoir seed, (seed r_A, seed r_B))`` for one trial of one cell."""
    key = cell_key(params)
    return (derive_seed(base_seed, "reservoir", key, trial),
            (derive_seed(base_seed, "r0A", key, trial), derive_seed(base_seed, "r0B", key, trial)))


def run_trial(params: ReservoirParams, input: Trajectory, trial: int, base_seed: int = 0, **kw):
    res_seed, pair = trial_seeds(base_seed, params, trial)
    res = Reservoir.build(params.replace(seed=res_seed))
    return auxiliary_test(res, input, seed_pair=pair, **kw)


def _scan_task(job, input, base_seed, kw):
    params, trial = job
    try:
        return run_trial(params, input, trial, base_seed, **kw), None
    except GSRCError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def aggregate(params, outcomes) -> ScanCell:
    reports = [r for r, e in outcomes if r is not None]
    errors = [e for r, e in outcomes if e is not None]
    if reports:
        frac = sum(r.converged for r in reports) / len(outcomes)
        mean_le = float(np.mean([r.conditional_le for r in reports]))
    else:
        frac, mean_le = 0.0, math.nan
    return ScanCell(params, frac, mean_le, len(outcomes), reports, errors)


def gs_region_scan(grid, input: Trajectory, trials_per_cell: int = 3, base_seed: int = 0, workers: int = 1,
                   **kw) -> dict:
    """Auxiliary test on every cell of ``grid`` with independent reservoir seeds.

    Returns ``{(sr, pnz, gamma, sigma): ScanCell}`` in grid order. Extra
    keyword arguments go to :func:`auxiliary_test`.
    """
    grid = list(grid)
    if not grid:
        raise ValidationError("grid is empty")
    if trials_per_cell < 1:
        raise ValidationError("trials_per_cell must be >= 1")
    jobs = [(p, i) for p in grid for i in range(trials_per_cell)]
    outcomes = pmap(partial(_scan_task, input=input, base_seed=base_seed, kw=kw), jobs, workers)
    out = {}
    for j, p in enumerate(grid):
        out[cell_key(p)] = aggregate(p, outcomes[j * trials_per_cell:(j + 1) * trials_per_cell])
    return out


def write_scan_csv(scan: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCAN_COLUMNS)
        for (sr, pnz, gamma, sigma), cell in scan.items():
            w.writerow([repr(sr), repr(pnz), repr(gamma), repr(sigma), repr(float(cell.pass_fraction)),
                        repr(float(cell.mean_cond_le)), cell.trials])


def read_scan_csv(path) -> list:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
