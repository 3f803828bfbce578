"""Readout training: polynomial features of reservoir states + ridge regression."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .drivers import Standardizer, Trajectory
from .errors import SingularSystemError, ValidationError
from .reservoir import Reservoir, iter_drive

KINDS = ("linear", "linear_plus_squares")
DEFAULT_BETA = 1e-6
DEFAULT_WASHOUT = 20.0
_BLOCK = 512


@dataclass(frozen=True)
class FeatureSpec:
    kind: str = "linear_plus_squares"
    includes_bias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"feature kind must be one of {KINDS}, got {self.kind!r}")

    def dim(self, n_nodes: int) -> int:
        """Feature count: N, doubled with squares, plus one for the bias."""
        f = n_nodes * (2 if self.kind == "linear_plus_squares" else 1)
        return f + int(self.includes_bias)


def features(spec: FeatureSpec, r) -> np.ndarray:
    """``(r)`` or ``(r, r*r)``, with a trailing 1 when ``spec`` includes a bias.

    Accepts one state or an S x N block (one state per row).
    """
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValidationError("reservoir state contains non-finite values")
    parts = [r]
    if spec.kind == "linear_plus_squares":
        parts.append(r * r)
    if spec.includes_bias:
        parts.append(np.ones(r.shape[:-1] + (1,)))
    return np.concatenate(parts, axis=-1)


@dataclass(frozen=True, eq=False)
class Readout:
    """Trained map ``phi(r) = W_out @ features(r)`` in standardized units."""

    spec: FeatureSpec
    weights: np.ndarray
    ridge_beta: float
    n_nodes: int
    dt: float
    standardizer: Optional[Standardizer] = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[1] != self.spec.dim(self.n_nodes):
            raise ValidationError(
                f"weights must be D x {self.spec.dim(self.n_nodes)}, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValidationError("readout weights are not finite")
        object.__setattr__(self, "weights", w)

    @property
    def output_dim(self) -> int:
        return self.weights.shape[0]

    def predict(self, r) -> np.ndarray:
        return features(self.spec, r) @ self.weights.T

    def state_jacobian(self, r) -> np.ndarray:
        """``d phi / d r`` as a D x N matrix."""
        n = self.n_nodes
        J = self.weights[:, :n].copy()
        if self.spec.kind == "linear_plus_squares":
            J += self.weights[:, n:2 * n] * (2.0 * np.asarray(r))[None, :]
        return J

    @classmethod
    def zero(cls, n_nodes, output_dim, spec=FeatureSpec(), dt=0.01):
        return cls(spec, np.zeros((output_dim, spec.dim(n_nodes))), 0.0, n_nodes, dt)


def harvest(res: Reservoir, input: Trajectory, washout: float, r0=None):
    """Drive the reservoir and keep ``(r(t_k), u(t_k))`` for samples after the washout.

    Returns ``(states S x N, targets S x D)``. Holds every retained state in
    memory; :func:`train` streams instead.
    """
    first = _washout_index(input, washout)
    r0 = np.zeros(res.n_nodes) if r0 is None else r0
    states = np.empty((len(input) - first, res.n_nodes))
    for k, r in enumerate(iter_drive(res, input.states, input.dt, r0)):
        if k >= first:
            states[k - first] = r
    return states, np.array(input.states[first:])


def _washout_index(input: Trajectory, washout: float) -> int:
    if washout < 0:
        raise ValidationError("washout must be >= 0")
    first = int(round(washout / input.dt))
    if first >= len(input) - 1 or washout >= input.duration:
        raise ValidationError(
            f"washout {washout} is not shorter than the input duration {input.duration}")
    return first


def ridge_fit(phi, targets, beta: float) -> np.ndarray:
    """Ridge solution ``W_out`` (D x F) of ``min |Phi W^T - U|^2 + beta |W|^2``."""
    phi = np.asarray(phi, dtype=float)
    U = np.asarray(targets, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if phi.ndim != 2 or phi.shape[0] != U.shape[0] or phi.shape[0] < 1:
        raise ValidationError("features and targets need the same number (>= 1) of rows")
    if beta < 0:
        raise ValidationError("beta must be >= 0")
    if beta == 0 and phi.shape[1] > phi.shape[0]:
        raise ValidationError(f"beta > 0 required when features ({phi.shape[1]}) outnumber samples ({phi.shape[0]})")
    return solve_normal_equations(phi.T @ phi, phi.T @ U, beta)


def solve_normal_equations(gram, cross, beta: float) -> np.ndarray:
    """Solve ``(G + beta I) W^T = C`` by Cholesky with one refinement pass."""
    M = np.array(gram, dtype=float)
    M[np.diag_indices_from(M)] += beta
    try:
        factor = sla.cho_factor(M, lower=False, check_finite=True)
    except sla.LinAlgError as exc:
        if beta == 0:
            raise SingularSystemError("normal equations are singular; use a ridge parameter beta > 0") from exc
        raise SingularSystemError(f"normal equations not positive definite at beta={beta}") from exc
    X = sla.cho_solve(factor, cross)
    X += sla.cho_solve(factor, cross - M @ X)
    if not np.all(np.isfinite(X)):
        raise SingularSystemError("ridge solution is not finite; increase beta")
    return X.T


def normal_residual(gram, cross, beta, weights) -> float:
    M = np.array(gram, dtype=float)
    M[np.diag_indices_from(M)] += beta
    num = np.linalg.norm(M @ weights.T - cross)
    den = np.linalg.norm(cross)
    return float(num / den) if den > 0 else float(num)


def accumulate(res: Reservoir, input: Trajectory, spec: FeatureSpec, washout: float, r0=None):
    """Stream the driven run into ``(Phi^T Phi, Phi^T U, U^T U, count)``."""
    first = _washout_index(input, washout)
    r0 = np.zeros(res.n_nodes) if r0 is None else r0
    F = spec.dim(res.n_nodes)
    D = input.dim
    gram = np.zeros((F, F))
    cross = np.zeros((F, D))
    utu = np.zeros(D)
    buf = np.empty((_BLOCK, res.n_nodes))
    fill = 0
    count = 0
    u = input.states

    def flush(n, end):
        nonlocal count
        Phi = features(spec, buf[:n])
        Ub = u[end - n:end]
        gram[...] += Phi.T @ Phi
        cross[...] += Phi.T @ Ub
        utu[...] += np.einsum("ij,ij->j", Ub, Ub)
        count += n

    for k, r in enumerate(iter_drive(res, u, input.dt, r0)):
        if k < first:
            continue
        buf[fill] = r
        fill += 1
        if fill == _BLOCK:
            flush(fill, k + 1)
            fill = 0
    if fill:
        flush(fill, len(u))
    return gram, cross, utu, count


def train(res: Reservoir, input: Trajectory, spec: FeatureSpec = FeatureSpec(), beta: float = DEFAULT_BETA,
          washout: float = DEFAULT_WASHOUT, r0=None, standardizer: Optional[Standardizer] = None) -> Readout:
    """Fit the readout on a driven run; ``input`` should already be standardized."""
    if input.dim != res.input_dim:
        raise ValidationError(f"input has D={input.dim}, reservoir expects {res.input_dim}")
    if res.n_nodes <= res.input_dim:
        raise ValidationError(f"embedding needs N > D (N={res.n_nodes}, D={res.input_dim})")
    gram, cross, utu, count = accumulate(res, input, spec, washout, r0)
    F = spec.dim(res.n_nodes)
    if beta == 0 and F > count:
        raise ValidationError(f"beta > 0 required when features ({F}) outnumber samples ({count})")
    W = solve_normal_equations(gram, cross, beta)
    # per-component residual sum of squares from the accumulated moments
    sse = np.einsum("df,fg,dg->d", W, gram, W) - 2.0 * np.einsum("df,fd->d", W, cross) + utu
    rmse = np.sqrt(np.maximum(sse, 0.0) / count)
    diag = np.diag(gram) + beta
    diagnostics = {
        "samples": int(count),
        "train_rmse": [float(v) for v in rmse],
        "normal_residual": normal_residual(gram, cross, beta, W),
        "gram_diag_ratio": float(diag.max() / diag.min()),
        "washout": float(washout),
    }
    return Readout(spec, W, float(beta), res.n_nodes, input.dt, standardizer, diagnostics)


def save_readout(readout: Readout, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "spec": {"kind": readout.spec.kind, "includes_bias": readout.spec.includes_bias},
        "ridge_beta": readout.ridge_beta,
        "n_nodes": readout.n_nodes,
        "output_dim": readout.output_dim,
        "dt": readout.dt,
        "standardizer": None if readout.standardizer is None else readout.standardizer.to_dict(),
        "diagnostics": readout.diagnostics,
    }
    (d / "readout.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    np.ascontiguousarray(readout.weights, dtype="<f8").tofile(d / "wout.bin")


def load_readout(directory) -> Readout:
    d = Path(directory)
    meta = json.loads((d / "readout.json").read_text())
    spec = FeatureSpec(**meta["spec"])
    W = np.fromfile(d / "wout.bin", dtype="<f8").astype(float)
    W = W.reshape(int(meta["output_dim"]), spec.dim(int(meta["n_nodes"])))
    st = meta.get("standardizer")
    return Readout(spec, W, float(meta["ridge_beta"]), int(meta["n_nodes"]), float(meta["dt"]),
                   None if st is None else Standardizer.from_dict(st), dict(meta.get("diagnostics", {})))
