"""Random tanh reservoir: construction, driven and autonomous dynamics.

The reservoir ODE is

    dr/dt = gamma * (-r + tanh(A r + sigma W u))

with a sparse random adjacency ``A`` rescaled to a prescribed spectral
radius and a dense input matrix ``W``. In the driven (listening/training)
mode ``u`` comes from data; in forecast mode it is replaced by the trained
readout ``phi(r)``, which makes the system autonomous.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigs

from .drivers import OVERFLOW_GUARD, Trajectory
from .errors import ConvergenceError, DivergenceError, ValidationError

log = logging.getLogger(__name__)

BUNDLE_FORMAT_VERSION = 1
DENSE_EIG_MAX_N = 500
_CHUNK_ENTRIES = 1 << 22


@dataclass(frozen=True)
class ReservoirParams:
    n_nodes: int
    input_dim: int
    spectral_radius: float = 0.9
    pnz: float = 0.02
    gamma: float = 5.0
    sigma: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 1:
            raise ValidationError(f"n_nodes must be a positive integer, got {self.n_nodes}")
        if int(self.input_dim) != self.input_dim or self.input_dim < 1:
            raise ValidationError(f"input_dim must be a positive integer, got {self.input_dim}")
        if not self.spectral_radius > 0:
            raise ValidationError(f"spectral_radius must be > 0, got {self.spectral_radius}")
        if not 0 < self.pnz <= 1:
            raise ValidationError(f"pnz must lie in (0, 1], got {self.pnz}")
        if not self.gamma > 0:
            raise ValidationError(f"gamma must be > 0, got {self.gamma}")
        if not self.sigma >= 0:
            raise ValidationError(f"sigma must be >= 0, got {self.sigma}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    def replace(self, **changes) -> "ReservoirParams":
        d = asdict(self)
        d.update(changes)
        return ReservoirParams(**d)


def _streams(seed: int):
    adj, inp = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(adj), np.random.default_rng(inp)


def _raw_adjacency(params: ReservoirParams) -> sp.csr_matrix:
    n = params.n_nodes
    rng, _ = _streams(params.seed)
    rows_per_chunk = max(1, _CHUNK_ENTRIES // n)
    rows, cols, vals = [], [], []
    for start in range(0, n, rows_per_chunk):
        stop = min(n, start + rows_per_chunk)
        mask = rng.random((stop - start, n)) < params.pnz
        r, c = np.nonzero(mask)
        rows.append(r + start)
        cols.append(c)
        vals.append(rng.uniform(-1.0, 1.0, r.size))
    rows = np.concatenate(rows).astype(np.int64)
    cols = np.concatenate(cols).astype(np.int64)
    vals = np.concatenate(vals)
    if vals.size == 0 or not np.any(vals != 0):
        raise ValidationError(
            f"adjacency draw is all zero (N={n}, pnz={params.pnz}); use another seed or a larger pnz")
    return _csr_from_triplets(n, rows, cols, vals)


def _csr_from_triplets(n, rows, cols, vals) -> sp.csr_matrix:
    order = np.lexsort((cols, rows))
    if np.any(np.diff(order) < 0):
        rows, cols, vals = rows[order], cols[order], np.asarray(vals)[order]
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n))]).astype(np.int64)
    return sp.csr_matrix((np.asarray(vals, dtype=float), np.asarray(cols, dtype=np.int64), indptr),
                         shape=(n, n))


def _triplets(m: sp.csr_matrix):
    rows = np.repeat(np.arange(m.shape[0], dtype=np.int64), np.diff(m.indptr))
    return rows, m.indices.astype(np.int64), m.data


def build_adjacency(params: ReservoirParams) -> sp.csr_matrix:
    """Bernoulli(pnz) sparsity, U[-1, 1] weights, rescaled to spectral radius SR."""
    raw = _raw_adjacency(params)
    rho = estimate_spectral_radius(raw)
    if rho == 0:
        raise ValidationError("adjacency draw is nilpotent (spectral radius 0); use another seed or a larger pnz")
    scaled = raw.copy()
    scaled.data = raw.data * (params.spectral_radius / rho)
    return scaled


def build_input_matrix(params: ReservoirParams) -> np.ndarray:
    """Dense N x D matrix with U[-1, 1] entries; independent of sigma and SR."""
    _, rng = _streams(params.seed)
    return rng.uniform(-1.0, 1.0, (params.n_nodes, params.input_dim))


# -- spectral radius ---------------------------------------------------------

def _power_quadratic(m, tol, max_iter, seed=0):
    """Power iteration with a two-iterate quadratic fit.

    Three consecutive iterates ``y0, y1 = M y0, y2 = M y1`` are fit to
    ``y2 = a y1 + b y0``; the roots of ``z^2 - a z - b`` give the dominant
    eigenvalue or complex-conjugate pair. A single real dominant eigenvalue
    makes that fit degenerate, so a Rayleigh-quotient fit is tried first.
    """
    n = m.shape[0]
    y = np.random.default_rng(seed).standard_normal(n)
    y /= np.linalg.norm(y)
    prev = None
    est = np.nan
    resid = np.inf
    for it in range(max_iter):
        y1 = m @ y
        y2 = m @ y1
        lam = float(y @ y1)
        r1 = np.linalg.norm(y1 - lam * y)
        if r1 <= tol * max(abs(lam), 1e-300) * 1e-2 or np.linalg.norm(y1) == 0:
            est, resid = abs(lam), r1
        else:
            basis = np.column_stack([y1, y])
            (a, b), *_ = np.linalg.lstsq(basis, y2, rcond=None)
            roots = np.roots([1.0, -a, -b])
            est = float(np.max(np.abs(roots)))
            resid = np.linalg.norm(y2 - a * y1 - b * y) / max(np.linalg.norm(y2), 1e-300)
        if prev is not None and abs(est - prev) <= tol * est and resid <= 1e-3:
            return est
        prev = est
        norm = np.linalg.norm(y2)
        if norm == 0:
            return 0.0
        y = y2 / norm
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations "
        f"(last estimate {est:.8g}, fit residual {resid:.3g})")


def estimate_spectral_radius(matrix, tol: float = 1e-6, method: str = "auto", max_iter: int = 5000) -> float:
    """Magnitude of the dominant eigenvalue.

    ``method`` is ``"dense"`` (full eigendecomposition), ``"arnoldi"``
    (implicitly restarted Arnoldi via ARPACK), ``"power"`` (power iteration
    with a quadratic fit for complex pairs) or ``"auto"``, which uses the
    dense solver up to N=500 and Arnoldi above.
    """
    n = matrix.shape[0]
    if matrix.shape != (n, n):
        raise ValidationError("matrix must be square")
    if sp.issparse(matrix):
        if matrix.nnz == 0 or not np.any(matrix.data):
            raise ValidationError("matrix is zero")
    elif not np.any(matrix):
        raise ValidationError("matrix is zero")
    if method == "auto":
        method = "dense" if n <= DENSE_EIG_MAX_N else "arnoldi"
    if method == "dense" or (method == "arnoldi" and n < 8):
        dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
        return float(np.max(np.abs(np.linalg.eigvals(dense))))
    if method == "arnoldi":
        k = min(6, n - 2)
        v0 = np.ones(n) / np.sqrt(n)
        try:
            vals = eigs(matrix, k=k, which="LM", v0=v0, tol=min(tol, 1e-10) * 1e-2,
                        ncv=min(n, max(2 * k + 1, 30)), maxiter=max_iter * 10, return_eigenvectors=False)
        except ArpackNoConvergence as exc:
            raise ConvergenceError(
                f"Arnoldi did not converge (N={n}, converged {len(exc.eigenvalues)} of {k})") from exc
        return float(np.max(np.abs(vals)))
    if method == "power":
        return _power_quadratic(matrix, tol, max_iter)
    raise ValidationError(f"unknown method {method!r}")


# -- the reservoir -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Reservoir:
    params: ReservoirParams
    adjacency: sp.csr_matrix
    input_matrix: np.ndarray

    @classmethod
    def build(cls, params: ReservoirParams) -> "Reservoir":
        return cls(params, build_adjacency(params), build_input_matrix(params))

    @property
    def n_nodes(self) -> int:
        return self.params.n_nodes

    @property
    def input_dim(self) -> int:
        return self.params.input_dim

    def input_drive(self, u):
        """``sigma * W @ u`` for a D-vector, or for each column of a D x m block."""
        return self.params.sigma * (self.input_matrix @ u)

    def random_state(self, seed: int) -> np.ndarray:
        """Initial state uniform on [-1, 1]^N."""
        return np.random.default_rng(seed).uniform(-1.0, 1.0, self.n_nodes)


@dataclass(frozen=True)
class ReservoirTrajectory:
    dt: float
    states: np.ndarray
    t0: float = 0.0

    def __len__(self):
        return self.states.shape[0]


def spmm(A, X):
    """``A @ X``; narrow blocks go column by column, which scipy does faster."""
    if X.ndim == 1 or X.shape[1] > 4:
        return A @ X
    return np.column_stack([A @ X[:, j] for j in range(X.shape[1])])


def _field(res: Reservoir, r, b):
    return res.params.gamma * (np.tanh(spmm(res.adjacency, r) + b) - r)


def reservoir_vector_field(res: Reservoir, r, u) -> np.ndarray:
    """``gamma * (-r + tanh(A r + sigma W u))``."""
    r = np.asarray(r, dtype=float)
    u = np.asarray(u, dtype=float)
    if r.shape[0] != res.n_nodes:
        raise ValidationError(f"state has length {r.shape[0]}, reservoir has N={res.n_nodes}")
    if u.shape[0] != res.input_dim:
        raise ValidationError(f"input has length {u.shape[0]}, reservoir expects D={res.input_dim}")
    return _field(res, r, res.input_drive(u))


def _guard(r, step, dt, t0=0.0):
    if not np.all(np.isfinite(r)) or np.max(np.abs(r)) > OVERFLOW_GUARD:
        raise DivergenceError(f"reservoir state diverged at step {step}", step=step, time=t0 + step * dt)


def iter_drive(res: Reservoir, inputs: np.ndarray, dt: float, r0) -> Iterator[np.ndarray]:
    """Yield the reservoir state at every input sample time.

    ``r0`` may be an N-vector or an N x m block of independent copies driven
    by the same signal. Between samples the input enters RK4 linearly
    interpolated (the midpoint stages see the average of the two samples).
    """
    u = np.asarray(inputs, dtype=float)
    if u.ndim != 2 or u.shape[1] != res.input_dim:
        raise ValidationError(f"input must be S x {res.input_dim}")
    if u.shape[0] < 2:
        raise ValidationError("input too short: need at least 2 samples")
    r = np.array(r0, dtype=float)
    if r.shape[0] != res.n_nodes or not np.all(np.isfinite(r)):
        raise ValidationError(f"r0 must be a finite array with leading dimension N={res.n_nodes}")
    block = r.ndim == 2
    h = 0.5 * dt
    c = dt / 6.0
    b0 = res.input_drive(u[0])
    if block:
        b0 = b0[:, None]
    yield r
    for k in range(1, u.shape[0]):
        b1 = res.input_drive(u[k])
        if block:
            b1 = b1[:, None]
        bm = 0.5 * (b0 + b1)
        k1 = _field(res, r, b0)
        k2 = _field(res, r + h * k1, bm)
        k3 = _field(res, r + h * k2, bm)
        k4 = _field(res, r + dt * k3, b1)
        r = r + c * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _guard(r, k, dt)
        b0 = b1
        yield r


def drive(res: Reservoir, input: Trajectory, r0) -> ReservoirTrajectory:
    """Integrate the driven reservoir and sample it at the input times."""
    states = np.array(list(iter_drive(res, input.states, input.dt, r0)))
    return ReservoirTrajectory(input.dt, states, input.t0)


def synchronize(res: Reservoir, input: Trajectory, r0) -> np.ndarray:
    """Final state of a driven run (no history kept)."""
    r = None
    for r in iter_drive(res, input.states, input.dt, r0):
        pass
    return r


def iter_forecast(res: Reservoir, readout, r0, dt: Optional[float] = None):
    """Yield ``(r, phi(r))`` along the autonomous (closed-loop) trajectory."""
    dt = readout.dt if dt is None else dt
    r = np.array(r0, dtype=float)
    if r.shape != (res.n_nodes,):
        raise ValidationError(f"r0 must have length N={res.n_nodes}")
    if readout.n_nodes != res.n_nodes or readout.output_dim != res.input_dim:
        raise ValidationError(
            f"readout maps N={readout.n_nodes} -> D={readout.output_dim}, "
            f"reservoir is N={res.n_nodes}, D={res.input_dim}")
    h = 0.5 * dt
    c = dt / 6.0

    def f(x):
        return _field(res, x, res.input_drive(readout.predict(x)))

    step = 0
    yield r, readout.predict(r)
    while True:
        k1 = f(r)
        k2 = f(r + h * k1)
        k3 = f(r + h * k2)
        k4 = f(r + dt * k3)
        r = r + c * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        step += 1
        _guard(r, step, dt)
        yield r, readout.predict(r)


def forecast(res: Reservoir, readout, r0, n_steps: int, t0: float = 0.0):
    """Closed-loop prediction; returns ``(predicted u, reservoir path)``, both with ``n_steps + 1`` rows."""
    if n_steps < 0:
        raise ValidationError("n_steps must be >= 0")
    rs, us = [], []
    for i, (r, u) in enumerate(iter_forecast(res, readout, r0)):
        rs.append(r)
        us.append(u)
        if i == n_steps:
            break
    return Trajectory(readout.dt, np.array(us), t0), ReservoirTrajectory(readout.dt, np.array(rs), t0)


# -- bundle I/O --------------------------------------------------------------

def save_reservoir(res: Reservoir, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows, cols, vals = _triplets(res.adjacency)
    meta = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "params": asdict(res.params),
        "nnz": int(vals.size),
        "adjacency_layout": "rows:int64[nnz], cols:int64[nnz], values:float64[nnz]; little-endian",
        "input_matrix_shape": list(res.input_matrix.shape),
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    with open(d / "adjacency.bin", "wb") as fh:
        fh.write(rows.astype("<i8").tobytes())
        fh.write(cols.astype("<i8").tobytes())
        fh.write(np.asarray(vals, dtype="<f8").tobytes())
    np.ascontiguousarray(res.input_matrix, dtype="<f8").tofile(d / "input_matrix.bin")


def load_reservoir(directory) -> Reservoir:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    if meta.get("format_version") != BUNDLE_FORMAT_VERSION:
        raise ValidationError(f"{d}: unsupported reservoir bundle version {meta.get('format_version')}")
    params = ReservoirParams(**meta["params"])
    nnz = int(meta["nnz"])
    raw = (d / "adjacency.bin").read_bytes()
    if len(raw) != nnz * 24:
        raise ValidationError(f"{d}: adjacency.bin has {len(raw)} bytes, expected {nnz * 24}")
    rows = np.frombuffer(raw, dtype="<i8", count=nnz, offset=0).astype(np.int64)
    cols = np.frombuffer(raw, dtype="<i8", count=nnz, offset=8 * nnz).astype(np.int64)
    vals = np.frombuffer(raw, dtype="<f8", count=nnz, offset=16 * nnz).astype(float)
    W = np.fromfile(d / "input_matrix.bin", dtype="<f8").astype(float)
    W = W.reshape(params.n_nodes, params.input_dim)
    return Reservoir(params, _csr_from_triplets(params.n_nodes, rows, cols, vals), W)
