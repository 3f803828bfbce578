"""Benettin/QR estimation of Lyapunov spectra.

The same routine serves the driver ODEs and the autonomous (trained)
reservoir: callers supply a ``flow(x, V) -> (dx, dV)`` returning the
vector field at ``x`` and the tangent action ``J(x) @ V``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, ValidationError

log = logging.getLogger(__name__)

Flow = Callable[[np.ndarray, np.ndarray], "tuple[np.ndarray, np.ndarray]"]

#: fraction of the renormalization history checked for drift
DRIFT_WINDOW = 0.2
#: drift tolerance as a fraction of the leading exponent
DRIFT_RTOL = 0.01


@dataclass(frozen=True)
class LyapunovSpectrum:
    """Sorted Lyapunov exponents plus convergence diagnostics.

    ``convergence_history`` holds the running-mean estimate of every
    exponent after each QR renormalization (rows) at ``history_times``.
    """

    exponents: np.ndarray
    transient_discarded: float
    convergence_history: np.ndarray
    history_times: np.ndarray
    tolerance: float
    drift: np.ndarray
    converged: bool
    escape_time: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.exponents)

    @property
    def leading(self) -> float:
        return float(self.exponents[0])

    def to_dict(self, max_history: int = 200) -> dict:
        n = len(self.history_times)
        idx = np.unique(np.linspace(0, n - 1, min(n, max_history)).astype(int)) if n else []
        return {
            "exponents": [float(v) for v in self.exponents],
            "k": self.k,
            "transient_discarded": float(self.transient_discarded),
            "tolerance": float(self.tolerance),
            "drift": [float(v) for v in self.drift],
            "converged": bool(self.converged),
            "escape_time": None if self.escape_time is None else float(self.escape_time),
            "history_times": [float(self.history_times[i]) for i in idx],
            "convergence_history": [[float(v) for v in self.convergence_history[i]] for i in idx],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LyapunovSpectrum":
        hist = np.asarray(d.get("convergence_history", []), dtype=float)
        k = len(d["exponents"])
        return cls(
            exponents=np.asarray(d["exponents"], dtype=float),
            transient_discarded=float(d.get("transient_discarded", 0.0)),
            convergence_history=hist.reshape(-1, k),
            history_times=np.asarray(d.get("history_times", []), dtype=float),
            tolerance=float(d.get("tolerance", 0.0)),
            drift=np.asarray(d.get("drift", [0.0] * k), dtype=float),
            converged=bool(d.get("converged", True)),
            escape_time=d.get("escape_time"),
            meta=dict(d.get("meta", {})),
        )


def rk4_pair(flow: Flow, x: np.ndarray, V: np.ndarray, dt: float):
    """One classical RK4 step of the state and its tangent block together."""
    k1x, k1v = flow(x, V)
    h = 0.5 * dt
    k2x, k2v = flow(x + h * k1x, V + h * k1v)
    k3x, k3v = flow(x + h * k2x, V + h * k2v)
    k4x, k4v = flow(x + dt * k3x, V + dt * k3v)
    x = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    V = V + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return x, V


def initial_tangent(dim: int, k: int, seed: int = 0) -> np.ndarray:
    """Orthonormal ``dim x k`` starting block, reproducible from ``seed``."""
    g = np.random.default_rng(seed).standard_normal((dim, k))
    q, _ = np.linalg.qr(g)
    return q


def drift_check(history: np.ndarray, rtol: float = DRIFT_RTOL, window: float = DRIFT_WINDOW):
    """Per-exponent spread of the running means over the final window.

    Returns ``(drift, tolerance)``; the tolerance is ``rtol * |lambda_1|``.
    """
    if len(history) == 0:
        return np.full(history.shape[1] if history.ndim == 2 else 0, np.inf), 0.0
    start = int(np.floor(len(history) * (1.0 - window)))
    start = min(start, len(history) - 1)
    tail = history[start:]
    drift = tail.max(axis=0) - tail.min(axis=0)
    tol = rtol * abs(float(np.max(history[-1])))
    return drift, tol


def benettin(
    flow: Flow,
    x0: np.ndarray,
    dt: float,
    n_steps: int,
    k: int,
    renorm_interval: int = 10,
    q0: Optional[np.ndarray] = None,
    transient_discarded: float = 0.0,
    rtol: float = DRIFT_RTOL,
    guard: float = 1e12,
    align_steps: int = 0,
) -> LyapunovSpectrum:
    """Time-averaged log-stretching rates of ``k`` tangent directions.

    The tangent block is re-orthonormalized by QR every ``renorm_interval``
    steps; exponents are the accumulated ``log|diag(R)|`` divided by elapsed
    time. The first ``align_steps`` steps only rotate the tangent block
    toward its asymptotic orientation and are not averaged. If the state
    leaves the ``guard`` ball the run stops and the result carries
    ``escape_time`` and ``converged=False``.
    """
    x = np.array(x0, dtype=float)
    dim = x.shape[0]
    if not 1 <= k <= dim:
        raise ValidationError(f"need 1 <= k <= {dim}, got k={k}")
    if dt <= 0 or n_steps < renorm_interval or renorm_interval < 1:
        raise ValidationError("need dt > 0 and n_steps >= renorm_interval >= 1")
    V = initial_tangent(dim, k) if q0 is None else np.array(q0, dtype=float)
    if V.shape != (dim, k):
        raise ValidationError(f"tangent block must be {dim}x{k}")

    for j in range(align_steps // renorm_interval):
        for _ in range(renorm_interval):
            x, V = rk4_pair(flow, x, V, dt)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(V))) or np.linalg.norm(x) > guard:
            raise DivergenceError("trajectory left the overflow guard during alignment")
        V, _ = np.linalg.qr(V)

    n_renorm = n_steps // renorm_interval
    log_sums = np.zeros(k)
    history = np.empty((n_renorm, k))
    times = np.empty(n_renorm)
    escape_time = None
    done = 0
    for j in range(n_renorm):
        try:
            for _ in range(renorm_interval):
                x, V = rk4_pair(flow, x, V, dt)
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(V))) or np.linalg.norm(x) > guard:
                raise DivergenceError("trajectory left the overflow guard", step=(j + 1) * renorm_interval)
        except (DivergenceError, FloatingPointError) as exc:
            escape_time = (j + 1) * renorm_interval * dt
            log.warning("Lyapunov run escaped at t=%.3f: %s", escape_time, exc)
            break
        V, R = np.linalg.qr(V)
        diag = np.abs(np.diag(R))
        log_sums += np.log(np.maximum(diag, np.finfo(float).tiny))
        t = (j + 1) * renorm_interval * dt
        history[j] = log_sums / t
        times[j] = t
        done = j + 1

    history = history[:done]
    times = times[:done]
    if done:
        exps = history[-1].copy()
    else:
        exps = np.full(k, np.nan)
    order = np.argsort(-exps, kind="stable")
    exps = exps[order]
    history = history[:, order]
    drift, tol = drift_check(history, rtol=rtol) if done else (np.full(k, np.inf), 0.0)
    converged = escape_time is None and bool(np.all(drift <= tol))
    if not converged and escape_time is None:
        log.warning("Lyapunov estimate not converged: drift %s exceeds %.3g", drift, tol)
    return LyapunovSpectrum(
        exponents=exps,
        transient_discarded=transient_discarded,
        convergence_history=history,
        history_times=times,
        tolerance=tol,
        drift=drift,
        converged=converged,
        escape_time=escape_time,
    )
