"""Chaotic driver systems, RK4 trajectories and reference Lyapunov spectra."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, ValidationError
from .lyapunov import LyapunovSpectrum, benettin

log = logging.getLogger(__name__)

OVERFLOW_GUARD = 1e12
DEFAULT_DT = 0.01
DEFAULT_TRANSIENT = 100.0
TRAJECTORY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class DriverSystem:
    """A named autonomous ODE ``du/dt = F(u)`` with its analytic Jacobian."""

    name: str
    dim: int
    params: dict
    vector_field: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    jacobian: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)

    def __call__(self, x):
        return self.vector_field(x)


def _check_finite(x, what="state"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{what} contains non-finite values")
    return x


def lorenz63_vector_field(state, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    """``(sigma (y - x), x (rho - z) - y, x y - beta z)``."""
    return _l63(_check_finite(state), sigma, rho, beta)


def _l63(s, sigma, rho, beta):
    x, y, z = s
    return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])


def lorenz63_jacobian(state, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    x, y, z = np.asarray(state, dtype=float)
    return np.array([
        [-sigma, sigma, 0.0],
        [rho - z, -1.0, -x],
        [y, x, -beta],
    ])


def lorenz96_vector_field(state, forcing=8.0):
    """``dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F`` with cyclic indices."""
    x = _check_finite(state)
    if x.ndim != 1 or x.shape[0] < 4:
        raise ValidationError("Lorenz96 needs D >= 4")
    return _l96(x, forcing)


def _l96(x, forcing):
    return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + forcing


def _l96_fast(dim, forcing):
    i = np.arange(dim)
    ip1, im1, im2 = (i + 1) % dim, (i - 1) % dim, (i - 2) % dim
    base = -np.eye(dim)

    def field(x):
        return (x[ip1] - x[im2]) * x[im1] - x + forcing

    def jac(x):
        J = base.copy()
        J[i, ip1] = x[im1]
        J[i, im2] = -x[im1]
        J[i, im1] = x[ip1] - x[im2]
        return J

    return field, jac


def lorenz96_jacobian(state, forcing=8.0):
    x = np.asarray(state, dtype=float)
    d = x.shape[0]
    if d < 4:
        raise ValidationError("Lorenz96 needs D >= 4")
    i = np.arange(d)
    ip1, im1, im2 = (i + 1) % d, (i - 1) % d, (i - 2) % d
    J = -np.eye(d)
    J[i, ip1] = x[im1]
    J[i, im2] = -x[im1]
    J[i, im1] = x[ip1] - x[im2]
    return J


def lorenz63(sigma=10.0, rho=28.0, beta=8.0 / 3.0) -> DriverSystem:
    p = {"sigma": float(sigma), "rho": float(rho), "beta": float(beta)}
    s, r, b = p["sigma"], p["rho"], p["beta"]
    return DriverSystem(
        "lorenz63", 3, p,
        lambda x: _l63(x, s, r, b),
        lambda x: lorenz63_jacobian(x, s, r, b),
    )


def lorenz96(dim=5, forcing=8.0) -> DriverSystem:
    if dim < 4:
        raise ValidationError("Lorenz96 needs D >= 4")
    f = float(forcing)
    field, jac = _l96_fast(int(dim), f)
    return DriverSystem("lorenz96", int(dim), {"dim": int(dim), "forcing": f}, field, jac)


def linear_system(rates) -> DriverSystem:
    """``du/dt = diag(rates) u``; exponents equal ``rates`` exactly."""
    a = np.asarray(rates, dtype=float)
    return DriverSystem(
        "linear", a.size, {"rates": a.tolist()},
        lambda x: a * np.asarray(x, dtype=float),
        lambda x: np.diag(a),
    )


SYSTEMS = {"lorenz63": lorenz63, "lorenz96": lorenz96}


def get_system(name: str, **params) -> DriverSystem:
    try:
        factory = SYSTEMS[name]
    except KeyError:
        raise ValidationError(f"unknown driver system {name!r}; choose from {sorted(SYSTEMS)}") from None
    return factory(**params)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled states; row ``k`` is the state at ``t0 + k*dt``."""

    dt: float
    states: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        s = np.array(self.states, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValidationError("trajectory states must be an S x dim matrix with S >= 1")
        if not np.all(np.isfinite(s)):
            raise ValidationError("trajectory contains non-finite values")
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __len__(self):
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) * self.dt

    @property
    def duration(self) -> float:
        return (len(self) - 1) * self.dt

    def segment(self, start: int, stop: Optional[int] = None) -> "Trajectory":
        """Rows ``start:stop`` with the start time shifted accordingly."""
        stop = len(self) if stop is None else stop
        if not 0 <= start < stop <= len(self):
            raise ValidationError(f"bad segment [{start}, {stop}) of {len(self)} samples")
        return Trajectory(self.dt, self.states[start:stop], self.t0 + start * self.dt)


def integrate_rk4(system, x0, dt, n_steps, t0=0.0, guard=OVERFLOW_GUARD) -> Trajectory:
    """Classical fixed-step RK4; returns ``n_steps + 1`` rows including ``x0``."""
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    f = system.vector_field if isinstance(system, DriverSystem) else system
    x = _check_finite(x0, "x0").copy()
    out = np.empty((n_steps + 1, x.shape[0]))
    out[0] = x
    h = 0.5 * dt
    for i in range(1, n_steps + 1):
        k1 = f(x)
        k2 = f(x + h * k1)
        k3 = f(x + h * k2)
        k4 = f(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > guard:
            raise DivergenceError(f"integration diverged at step {i} (t={t0 + i * dt:g})", step=i, time=t0 + i * dt)
        out[i] = x
    return Trajectory(dt, out, t0)


def _default_x0(system: DriverSystem, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if system.name == "lorenz96":
        x = np.full(system.dim, system.params["forcing"])
        x += 0.01 * rng.standard_normal(system.dim)
        return x
    return rng.uniform(-1.0, 1.0, system.dim) + np.array([0.0, 0.0, 20.0])[: system.dim]


def relax(system: DriverSystem, x0=None, dt=DEFAULT_DT, transient=DEFAULT_TRANSIENT, seed=0) -> np.ndarray:
    """Integrate ``transient`` time units and return the end state."""
    x = _default_x0(system, seed) if x0 is None else _check_finite(x0, "x0")
    n = int(round(transient / dt))
    if n == 0:
        return x
    return integrate_rk4(system, x, dt, n).states[-1].copy()


def generate(system: DriverSystem, duration: float, dt=DEFAULT_DT, transient=DEFAULT_TRANSIENT,
             seed=0, x0=None) -> Trajectory:
    """On-attractor trajectory of ``duration`` time units, starting at t=0."""
    if not duration > 0:
        raise ValidationError("duration must be positive")
    start = relax(system, x0, dt, transient, seed)
    return integrate_rk4(system, start, dt, int(round(duration / dt)))


def lyapunov_spectrum_ode(system: DriverSystem, x0, dt=DEFAULT_DT, n_steps=200_000, k=None,
                          renorm_interval=10, transient=DEFAULT_TRANSIENT) -> LyapunovSpectrum:
    """Benettin spectrum of the driver, after relaxing ``x0`` for ``transient``."""
    k = system.dim if k is None else k
    if not 1 <= k <= system.dim:
        raise ValidationError(f"need 1 <= k <= {system.dim}")
    x = relax(system, x0, dt, transient)
    f, jac = system.vector_field, system.jacobian

    def flow(x, V):
        return f(x), jac(x) @ V

    spec = benettin(flow, x, dt, n_steps, k, renorm_interval, q0=np.eye(system.dim)[:, :k],
                    transient_discarded=transient)
    spec.meta.update({"system": system.name, "params": system.params, "dt": dt, "n_steps": n_steps,
                      "renorm_interval": renorm_interval})
    return spec


@dataclass(frozen=True)
class Standardizer:
    """Per-component affine map ``(u - mean) / scale``."""

    mean: np.ndarray
    scale: np.ndarray

    def apply(self, u):
        if isinstance(u, Trajectory):
            return Trajectory(u.dt, (u.states - self.mean) / self.scale, u.t0)
        return (np.asarray(u, dtype=float) - self.mean) / self.scale

    def invert(self, z):
        if isinstance(z, Trajectory):
            return Trajectory(z.dt, z.states * self.scale + self.mean, z.t0)
        return np.asarray(z, dtype=float) * self.scale + self.mean

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "scale": [float(v) for v in self.scale]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float))

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))


def fit_standardizer(traj: Trajectory) -> Standardizer:
    if len(traj) < 2:
        raise ValidationError("standardization needs at least 2 samples")
    mean = traj.states.mean(axis=0)
    scale = traj.states.std(axis=0, ddof=1)
    bad = np.flatnonzero(~(scale > 0))
    if bad.size:
        raise ValidationError(f"component u{bad[0]} has zero variance")
    return Standardizer(mean, scale)


def standardize(traj: Trajectory):
    """Zero sample mean, unit sample (n-1) standard deviation per component."""
    st = fit_standardizer(traj)
    return st.apply(traj), st


# -- serialization -----------------------------------------------------------

def write_csv(traj: Trajectory, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = "t," + ",".join(f"u{i}" for i in range(traj.dim))
    data = np.column_stack([traj.times, traj.states])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def read_csv(path) -> Trajectory:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "t":
        raise ValidationError(f"{path}: expected header starting with 't'")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    return Trajectory(dt, data[:, 1:], float(t[0]))


def write_bundle(traj: Trajectory, directory) -> None:
    """``meta.json`` + ``states.bin`` (row-major little-endian float64)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": TRAJECTORY_FORMAT_VERSION,
        "dim": traj.dim,
        "dt": traj.dt,
        "t0": traj.t0,
        "rows": len(traj),
        "dtype": "float64",
        "endianness": "little",
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    np.ascontiguousarray(traj.states, dtype="<f8").tofile(d / "states.bin")


def read_bundle(directory) -> Trajectory:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    if meta.get("endianness", "little") != "little":
        raise ValidationError("only little-endian bundles are supported")
    states = np.fromfile(d / "states.bin", dtype="<f8")
    rows, dim = int(meta["rows"]), int(meta["dim"])
    if states.size != rows * dim:
        raise ValidationError(f"{d}: states.bin holds {states.size} values, expected {rows * dim}")
    return Trajectory(float(meta["dt"]), states.reshape(rows, dim).astype(float), float(meta["t0"]))
