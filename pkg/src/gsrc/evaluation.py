"""Forecast skill and Lyapunov-spectrum certification of trained reservoirs."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .drivers import Trajectory
from .errors import ValidationError
from .lyapunov import LyapunovSpectrum, benettin, initial_tangent
from .parallel import derive_seed, pmap
from .reservoir import Reservoir, iter_drive, iter_forecast

DEFAULT_THRESHOLD = 0.4
DEFAULT_SYNC_TIME = 10.0
DEFAULT_HORIZON = 20.0
DEFAULT_N_STARTS = 20
EXTRA_EXPONENTS = 5
ZERO_EXPONENT_BAND = 0.05


def forecast_error(truth, prediction) -> np.ndarray:
    """``|u_hat - u|_2 / sqrt(D)`` per sample."""
    diff = np.asarray(prediction) - np.asarray(truth)
    return np.sqrt(np.mean(diff * diff, axis=-1))


def valid_time(truth: Trajectory, prediction: Trajectory, threshold: float = DEFAULT_THRESHOLD,
               lambda1: float = 1.0) -> float:
    """Time until the normalized error first exceeds ``threshold``, times ``lambda1``.

    Sample 0 is the forecast start. Returns the full horizon if the error
    never exceeds the threshold.
    """
    if truth.dim != prediction.dim or len(truth) != len(prediction):
        raise ValidationError("truth and prediction must have the same shape")
    if not math.isclose(truth.dt, prediction.dt, rel_tol=1e-12):
        raise ValidationError(f"dt mismatch: {truth.dt} vs {prediction.dt}")
    if abs(truth.t0 - prediction.t0) > 1e-9 * max(1.0, abs(truth.t0)):
        raise ValidationError(f"trajectories start at different times ({truth.t0} vs {prediction.t0})")
    err = forecast_error(truth.states, prediction.states)
    over = np.flatnonzero(err > threshold)
    steps = over[0] if over.size else len(truth) - 1
    return float(steps * truth.dt * lambda1)


@dataclass
class ForecastMetrics:
    per_start_valid_time: list
    start_indices: list
    t_starts: list
    threshold: float
    lambda1_driver: float
    horizon: float
    sync_time: float
    paths: list = field(default_factory=list, repr=False)

    @property
    def n_starts(self) -> int:
        return len(self.per_start_valid_time)

    @property
    def mean_valid_time(self) -> float:
        return float(np.mean(self.per_start_valid_time))

    @property
    def std_valid_time(self) -> float:
        return float(np.std(self.per_start_valid_time))

    def summary(self) -> dict:
        return {
            "mean_valid_time": self.mean_valid_time,
            "std_valid_time": self.std_valid_time,
            "n_starts": self.n_starts,
            "threshold": self.threshold,
            "lambda1_driver": self.lambda1_driver,
            "horizon": self.horizon,
            "sync_time": self.sync_time,
        }

    def write(self, csv_path, json_path) -> None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["start_index", "t_start", "valid_time_lyap"])
            for i, t, v in zip(self.start_indices, self.t_starts, self.per_start_valid_time):
                w.writerow([i, repr(float(t)), repr(float(v))])
        with open(json_path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def forecast_start_indices(n_samples: int, n_starts: int, sync_steps: int, horizon_steps: int) -> list:
    """Window offsets spread evenly over the data, non-overlapping."""
    window = sync_steps + horizon_steps + 1
    feasible = n_samples // window
    if n_starts < 1 or n_starts > feasible:
        raise ValidationError(
            f"truth has {n_samples} samples: room for at most {feasible} non-overlapping "
            f"windows of {window} samples, {n_starts} requested")
    if n_starts == 1:
        return [0]
    spacing = (n_samples - window) // (n_starts - 1)
    return [i * spacing for i in range(n_starts)]


def _one_start(offset, res, readout, truth_states, dt, sync_steps, horizon_steps, threshold, seed, keep_path):
    r0 = res.random_state(seed)
    seg = truth_states[offset:offset + sync_steps + 1]
    r = None
    for r in iter_drive(res, seg, dt, r0):
        pass
    target = truth_states[offset + sync_steps:offset + sync_steps + horizon_steps + 1]
    preds = []
    steps = None
    for k, (_, u_hat) in enumerate(iter_forecast(res, readout, r, dt)):
        if keep_path:
            preds.append(u_hat)
        if steps is None and math.sqrt(float(np.mean((u_hat - target[k]) ** 2))) > threshold:
            steps = k
            if not keep_path:
                break
        if k == horizon_steps:
            break
    steps = horizon_steps if steps is None else steps
    return steps, (np.array(preds) if keep_path else None)


def mean_valid_time(res: Reservoir, readout, truth: Trajectory, n_starts: int = DEFAULT_N_STARTS,
                    sync_time: float = DEFAULT_SYNC_TIME, horizon: float = DEFAULT_HORIZON,
                    threshold: float = DEFAULT_THRESHOLD, lambda1: float = 1.0, seed: int = 0,
                    workers: int = 1, keep_paths: int = 0) -> ForecastMetrics:
    """Synchronize-then-forecast from ``n_starts`` evenly spaced points of ``truth``.

    ``truth`` must be in the readout's (standardized) units. Each start
    drives a fresh random state over ``sync_time`` and then runs the closed
    loop, stopping once the error exceeds ``threshold`` unless the path is
    kept for plotting (the first ``keep_paths`` starts keep it).
    """
    dt = truth.dt
    if not math.isclose(dt, readout.dt, rel_tol=1e-12):
        raise ValidationError(f"truth dt {dt} differs from the training dt {readout.dt}")
    sync_steps = int(round(sync_time / dt))
    horizon_steps = int(round(horizon / dt))
    offsets = forecast_start_indices(len(truth), n_starts, sync_steps, horizon_steps)
    jobs = list(enumerate(offsets))
    fn = partial(_start_job, res=res, readout=readout, truth_states=truth.states, dt=dt, sync_steps=sync_steps,
                 horizon_steps=horizon_steps, threshold=threshold, base_seed=seed, keep_paths=keep_paths)
    out = pmap(fn, jobs, workers)
    steps = [s for s, _ in out]
    paths = [p for _, p in out if p is not None]
    starts = [o + sync_steps for o in offsets]
    return ForecastMetrics(
        per_start_valid_time=[s * dt * lambda1 for s in steps],
        start_indices=starts,
        t_starts=[truth.t0 + s * dt for s in starts],
        threshold=threshold,
        lambda1_driver=lambda1,
        horizon=horizon,
        sync_time=sync_time,
        paths=paths,
    )


def _start_job(job, res, readout, truth_states, dt, sync_steps, horizon_steps, threshold, base_seed, keep_paths):
    i, offset = job
    return _one_start(offset, res, readout, truth_states, dt, sync_steps, horizon_steps, threshold,
                      derive_seed(base_seed, "forecast-start", i), i < keep_paths)


# -- tangent dynamics of the autonomous reservoir ----------------------------

def _preactivation(res, readout, r):
    return res.adjacency @ r + res.input_drive(readout.predict(r))


def rc_vector_field(res: Reservoir, readout, r) -> np.ndarray:
    """Right-hand side of the closed-loop (forecast) reservoir."""
    r = np.asarray(r, dtype=float)
    return res.params.gamma * (np.tanh(_preactivation(res, readout, r)) - r)


def rc_jacobian(res: Reservoir, readout, r) -> LinearOperator:
    """Matrix-free Jacobian of the closed-loop reservoir at ``r``.

    ``J v = gamma * (-v + (1 - tanh(a)^2) * (A v + sigma W (dphi/dr) v))`` with
    ``a = A r + sigma W phi(r)``.
    """
    r = np.asarray(r, dtype=float)
    n = res.n_nodes
    if r.shape != (n,):
        raise ValidationError(f"r must have length N={n}")
    if readout.n_nodes != n or readout.output_dim != res.input_dim:
        raise ValidationError("readout does not match the reservoir dimensions")
    gain = 1.0 - np.tanh(_preactivation(res, readout, r)) ** 2
    dphi = readout.state_jacobian(r)
    gamma = res.params.gamma

    def matmat(V):
        V = np.asarray(V, dtype=float)
        col = V.ndim == 1
        V2 = V[:, None] if col else V
        out = gamma * (-V2 + gain[:, None] * (res.adjacency @ V2 + res.input_drive(dphi @ V2)))
        return out[:, 0] if col else out

    return LinearOperator((n, n), matvec=matmat, matmat=matmat, dtype=float)


def closed_loop_flow(res: Reservoir, readout):
    """``flow(x, V) -> (F(x), J(x) V)`` for the closed-loop reservoir."""
    A = res.adjacency
    gamma = res.params.gamma

    def flow(x, V):
        AX = A @ np.column_stack([x, V])
        a = AX[:, 0] + res.input_drive(readout.predict(x))
        th = np.tanh(a)
        dx = gamma * (th - x)
        dV = gamma * (-V + (1.0 - th * th)[:, None] * (AX[:, 1:] + res.input_drive(readout.state_jacobian(x) @ V)))
        return dx, dV

    return flow


def lyapunov_spectrum_rc(res: Reservoir, readout, r0, k: Optional[int] = None, dt: Optional[float] = None,
                         n_steps: int = 20_000, renorm_interval: int = 10, align_steps: int = 1000,
                         seed: int = 0) -> LyapunovSpectrum:
    """Leading ``k`` (default D + 5) exponents of the trained autonomous reservoir."""
    k = res.input_dim + EXTRA_EXPONENTS if k is None else k
    dt = readout.dt if dt is None else dt
    if not 1 <= k <= res.n_nodes:
        raise ValidationError(f"need 1 <= k <= N={res.n_nodes}")
    q0 = initial_tangent(res.n_nodes, k, seed)
    spec = benettin(closed_loop_flow(res, readout), np.asarray(r0, dtype=float), dt, n_steps, k,
                    renorm_interval, q0=q0, transient_discarded=align_steps * dt, align_steps=align_steps)
    spec.meta.update({"dt": dt, "n_steps": n_steps, "renorm_interval": renorm_interval, "k": k})
    return spec


def divergence_rate(res: Reservoir, readout, r0, dt: Optional[float] = None, n_steps: int = 20_000,
                    renorm_interval: int = 10, eps: float = 1e-8, seed: int = 0,
                    align_steps: int = 1000) -> float:
    """Leading exponent from two nearby closed-loop trajectories, renormalized periodically.

    Uses only the nonlinear vector field, never the Jacobian.
    """
    dt = readout.dt if dt is None else dt
    rng = np.random.default_rng(seed)
    x = np.asarray(r0, dtype=float).copy()
    p = rng.standard_normal(x.shape)
    y = x + eps * p / np.linalg.norm(p)
    f = partial(rc_vector_field, res, readout)

    def step(z):
        k1 = f(z)
        k2 = f(z + 0.5 * dt * k1)
        k3 = f(z + 0.5 * dt * k2)
        k4 = f(z + dt * k3)
        return z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    total = 0.0
    blocks = n_steps // renorm_interval
    skip = align_steps // renorm_interval
    for j in range(skip + blocks):
        for _ in range(renorm_interval):
            x = step(x)
            y = step(y)
        d = np.linalg.norm(y - x)
        if j >= skip:
            total += math.log(d / eps)
        y = x + (eps / d) * (y - x)
    return total / (blocks * renorm_interval * dt)


@dataclass
class SpectrumMatchReport:
    driver_spectrum: LyapunovSpectrum
    rc_spectrum: LyapunovSpectrum
    per_exponent_error: list
    kinds: list
    matched: list
    leading_match: bool
    tail_negative: bool
    tol: float

    @property
    def n_matched(self) -> int:
        """Length of the leading run of matched exponents."""
        n = 0
        for m in self.matched:
            if not m:
                break
            n += 1
        return n

    def to_dict(self) -> dict:
        return {
            "driver_spectrum": self.driver_spectrum.to_dict(),
            "rc_spectrum": self.rc_spectrum.to_dict(),
            "per_exponent_error": [float(v) for v in self.per_exponent_error],
            "kinds": self.kinds,
            "matched": [bool(m) for m in self.matched],
            "leading_match": bool(self.leading_match),
            "tail_negative": bool(self.tail_negative),
            "tol": self.tol,
        }


def spectrum_match(driver: LyapunovSpectrum, rc: LyapunovSpectrum, tol: float = 0.15) -> SpectrumMatchReport:
    """Compare the leading ``D`` RC exponents with the driver's.

    Positive exponents match within relative ``tol``. An exponent within
    ``0.05 * lambda_1`` of zero is the flow's neutral direction and matches
    within that absolute band. Negative driver exponents are compared for
    information only. ``tail_negative`` asks that every RC exponent past the
    first ``D`` be negative.
    """
    D = driver.k
    if rc.k < D:
        raise ValidationError(f"RC spectrum has {rc.k} exponents, driver has {D}")
    lam1 = abs(driver.leading)
    band = ZERO_EXPONENT_BAND * lam1
    errs, kinds, matched = [], [], []
    for i in range(D):
        a, b = float(driver.exponents[i]), float(rc.exponents[i])
        e = abs(b - a)
        if abs(a) <= band:
            kind, ok = "zero", e <= band
        elif a > 0:
            kind, ok = "positive", e <= tol * a
        else:
            kind, ok = "negative", e <= tol * abs(a)
        errs.append(e)
        kinds.append(kind)
        matched.append(ok)
    leading = all(m for m, kd in zip(matched, kinds) if kd != "negative")
    tail = bool(np.all(rc.exponents[D:] < 0))
    return SpectrumMatchReport(driver, rc, errs, kinds, matched, leading, tail, tol)
