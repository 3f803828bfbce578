"""End-to-end acceptance checks at full size (N=2000).

Each test records one PASS/FAIL line; the lines are printed together in the
terminal summary (see ``conftest.py``). The assertions use the same
thresholds as the recorded verdicts.

These runs are slow on a single core: the Lorenz96 spectral radius sweep
alone takes close to an hour.
"""

import json
import math

import numpy as np
import pytest
import scipy.sparse as sp

from gsrc.cli import main
from gsrc.drivers import generate, lorenz63, lorenz96, lyapunov_spectrum_ode, standardize
from gsrc.evaluation import lyapunov_spectrum_rc, mean_valid_time, rc_jacobian, rc_vector_field, spectrum_match
from gsrc.gs import run_trial
from gsrc.reservoir import Reservoir, ReservoirParams, build_adjacency, estimate_spectral_radius, synchronize
from gsrc.search import SearchData, SearchPlan, cell_key, run_search, savings_report, sr_sweep
from gsrc.training import FeatureSpec, train

from oracles import dense_spectral_radius, rk4_self_convergence_order, spearman
from test_cli import STAGES, write_config

pytestmark = pytest.mark.acceptance

N = 2000
FEATURES = FeatureSpec("linear_plus_squares", includes_bias=True)
BETA = 1e-6
WASHOUT = 20.0
TRAIN_TIME = 500.0
N_STARTS = 20
THRESHOLD = 0.4

# filled by the tests, printed by the terminal summary hook
RESULTS = {}
CRITERIA = {
    1: ("GS dichotomy", "test_gs_dichotomy"),
    2: ("driver Lyapunov oracle", "test_driver_lyapunov_oracle"),
    3: ("forecast skill", "test_forecast_skill"),
    4: ("spectrum reproduction", "test_spectrum_reproduction"),
    5: ("edge-of-chaos peak", "test_edge_of_chaos_peak"),
    6: ("GS-gate savings", "test_gs_gate_savings"),
    7: ("numerical hygiene", "test_numerical_hygiene"),
}
# normal-equation residuals of every readout trained in this module
RESIDUALS = []


def record(num, ok, detail):
    RESULTS[num] = (bool(ok), detail)


def fmt(v):
    return f"{v:.4g}"


# -- shared inputs --------------------------------------------------------------

@pytest.fixture(scope="module")
def l63_spectrum():
    # 10^4 time units, about 9000 Lyapunov times
    return lyapunov_spectrum_ode(lorenz63(), [1.0, 1.0, 20.0], n_steps=1_000_000, transient=100.0)


@pytest.fixture(scope="module")
def l63_data(l63_spectrum):
    traj, _ = standardize(generate(lorenz63(), 1200.0, transient=100.0, seed=0))
    return SearchData.split(traj, WASHOUT, TRAIN_TIME, driver_spectrum=l63_spectrum)


def l63_params(sr, seed=7):
    return ReservoirParams(N, 3, spectral_radius=sr, pnz=0.02, gamma=5.0, sigma=0.2, seed=seed)


def fit_and_score(params, data):
    res = Reservoir.build(params)
    readout = train(res, data.train, FEATURES, BETA, WASHOUT)
    RESIDUALS.append(readout.diagnostics["normal_residual"])
    metrics = mean_valid_time(res, readout, data.test, n_starts=N_STARTS, threshold=THRESHOLD,
                              lambda1=data.lambda1)
    return res, readout, metrics


@pytest.fixture(scope="module")
def good_model(l63_data):
    return fit_and_score(l63_params(0.9), l63_data)


@pytest.fixture(scope="module")
def bad_model(l63_data):
    return fit_and_score(l63_params(1.6), l63_data)


# -- 1 ----------------------------------------------------------------------------

def test_gs_dichotomy(l63_data):
    verdicts = {}
    for sr in (0.9, 1.6):
        base = ReservoirParams(N, 3, spectral_radius=sr, pnz=0.02)
        verdicts[sr] = [run_trial(base, l63_data.train, trial, base_seed=0) for trial in range(3)]
    good = [r.converged for r in verdicts[0.9]]
    bad = [r.converged for r in verdicts[1.6]]
    ok = all(good) and not any(bad)
    dist = {sr: [fmt(r.final_distance) for r in reps] for sr, reps in verdicts.items()}
    record(1, ok, f"SR 0.9 pass={good} d={dist[0.9]}; SR 1.6 pass={bad} d={dist[1.6]}")
    assert ok


# -- 2 ----------------------------------------------------------------------------

def test_driver_lyapunov_oracle(l63_spectrum):
    ex = l63_spectrum.exponents
    errs = (abs(ex[0] - 0.906), abs(ex[1]), abs(ex.sum() + 41.0 / 3.0))
    ok = errs[0] <= 0.02 and errs[1] <= 0.01 and errs[2] <= 0.02
    record(2, ok, f"exponents {[fmt(v) for v in ex]}, sum {fmt(ex.sum())}")
    assert ok


# -- 3 ----------------------------------------------------------------------------

def test_forecast_skill(good_model, bad_model):
    vt_good = good_model[2].mean_valid_time
    vt_bad = bad_model[2].mean_valid_time
    n = good_model[2].n_starts
    ok = n >= 20 and vt_good >= 3.0 and vt_good > vt_bad
    record(3, ok, f"SR 0.9 mean valid time {fmt(vt_good)} over {n} starts; forced SR 1.6 {fmt(vt_bad)}")
    assert ok


# -- 4 ----------------------------------------------------------------------------

def test_spectrum_reproduction(good_model, l63_data):
    res, readout, _ = good_model
    sync = int(round(10.0 / l63_data.test.dt))
    r0 = synchronize(res, l63_data.test.segment(0, sync + 1), res.random_state(3))
    spec = lyapunov_spectrum_rc(res, readout, r0, n_steps=20_000)
    rep = spectrum_match(l63_data.driver_spectrum, spec)
    lam = l63_data.driver_spectrum.leading
    err = abs(spec.leading - lam)
    ok = err <= 0.15 * lam and rep.tail_negative
    record(4, ok, f"RC {[fmt(v) for v in spec.exponents]} vs driver lambda1 {fmt(lam)}; "
                  f"|err| {fmt(err)} (limit {fmt(0.15 * lam)}), tail_negative={rep.tail_negative}")
    assert ok


# -- 5 ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def l96_sweep():
    system = lorenz96(5, 8.0)
    traj, _ = standardize(generate(system, 1200.0, transient=100.0, seed=0))
    drv = lyapunov_spectrum_ode(system, [1.0, 2.0, 3.0, 4.0, 5.0], n_steps=500_000, transient=100.0)
    data = SearchData.split(traj, WASHOUT, TRAIN_TIME, driver_spectrum=drv)
    srs = [round(0.1 * i, 1) for i in range(1, 15)]
    plan = SearchPlan(ReservoirParams(N, 5, pnz=0.02), axes={"spectral_radius": srs}, gate="train_all",
                      spectrum=True, features=FEATURES, beta=BETA, washout=WASHOUT, train_time=TRAIN_TIME,
                      n_starts=N_STARTS, threshold=THRESHOLD)
    points, results = sr_sweep(plan, data)
    RESIDUALS.extend(r.normal_residual for r in results if r.trained)
    return drv, points, results


def test_edge_of_chaos_peak(l96_sweep):
    drv, points, results = l96_sweep
    lam = drv.leading
    vt = np.array([p.mean_valid_time for p in points])
    closeness = np.array([-abs(p.lambda1_rc - lam) for p in points])
    best = points[int(np.nanargmax(vt))].sr
    rho = spearman(closeness, vt)
    errors = [r.error for r in results if r.error]
    ok = best < 1.0 and rho >= 0.5 and not errors
    table = ", ".join(f"{p.sr:g}:{p.mean_valid_time:.2f}/{p.lambda1_rc:.3f}" for p in points)
    record(5, ok, f"argmax SR {best:g}, Spearman {fmt(rho)}, driver lambda1 {fmt(lam)}; "
                  f"SR:valid/lambda1_rc {table}" + (f"; errors {errors}" if errors else ""))
    assert ok


# -- 6 ----------------------------------------------------------------------------

def test_gs_gate_savings(l63_data):
    axes = {"spectral_radius": [0.8, 1.2, 1.6, 2.0, 2.4], "pnz": [0.01, 0.015, 0.02, 0.025, 0.03]}
    kw = dict(features=FEATURES, beta=BETA, washout=WASHOUT, train_time=TRAIN_TIME, n_starts=N_STARTS,
              threshold=THRESHOLD)
    base = ReservoirParams(N, 3)
    gated_plan = SearchPlan(base, axes=axes, gate="gs_then_train", **kw)
    gated = run_search(gated_plan, l63_data)
    RESIDUALS.extend(r.normal_residual for r in gated if r.trained)
    rep = savings_report(gated)
    work = savings_report(gated, cost="work")

    failing = {r.coords for r in gated if not r.gs_passed}
    cells = [p for p in gated_plan.cells() if cell_key(p) in failing]
    forced = run_search(SearchPlan(base, axes=axes, gate="train_all", **kw), l63_data, cells=cells)
    RESIDUALS.extend(r.normal_residual for r in forced if r.trained)
    exceptions = [(r.coords[:2], r.mean_valid_time) for r in forced if r.mean_valid_time > 1.0]
    errors = [r.error for r in gated + forced if r.error]

    ratio = rep["ratio"]
    ok = ratio != "undefined" and ratio >= 2.0 and not exceptions and not errors
    worst = max((r.mean_valid_time for r in forced if r.metrics), default=math.nan)
    record(6, ok, f"wall-clock ratio {fmt(ratio) if ratio != 'undefined' else ratio} "
                  f"(work-unit ratio {fmt(work['ratio']) if work['ratio'] != 'undefined' else 'undefined'}), "
                  f"{rep['n_trained']}/{rep['n_results']} cells passed GS; {len(exceptions)} exceptions among "
                  f"{len(forced)} forced cells (best forced valid time {fmt(worst)})"
                  + (f"; errors {errors}" if errors else ""))
    assert ok


# -- 7 ----------------------------------------------------------------------------

def test_numerical_hygiene(good_model, bad_model, tmp_path):
    checks = {}

    order, _ = rk4_self_convergence_order()
    checks["rk4_order"] = (3.8 <= order <= 4.2, fmt(order))

    res, readout, _ = good_model
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        r = rng.uniform(-1, 1, N)
        v = rng.normal(size=N)
        v /= np.linalg.norm(v)
        h = 1e-6
        fd = (rc_vector_field(res, readout, r + h * v) - rc_vector_field(res, readout, r - h * v)) / (2 * h)
        jv = rc_jacobian(res, readout, r) @ v
        worst = max(worst, np.linalg.norm(jv - fd) / np.linalg.norm(jv))
    checks["rc_jacobian"] = (worst <= 1e-5, fmt(worst))

    # readouts from every other acceptance test plus the two fixtures here
    resid = [x for x in RESIDUALS if x is not None]
    max_resid = max(resid)
    checks["ridge_residual"] = (max_resid <= 1e-8, f"max {fmt(max_resid)} over {len(resid)} models")

    worst_sr = 0.0
    for i in range(50):
        n = 50 + 9 * i
        if i % 2:
            # plain scipy sparse matrix, entries uniform on [-1, 1]
            m = sp.random(n, n, density=0.05, random_state=i, format="csr")
            m.data = 2.0 * m.data - 1.0
        else:
            m = build_adjacency(ReservoirParams(n, 3, spectral_radius=0.5 + 0.03 * i, pnz=0.05, seed=i))
        truth = dense_spectral_radius(m)
        for method in ("auto", "arnoldi"):
            worst_sr = max(worst_sr, abs(estimate_spectral_radius(m, method=method) - truth) / truth)
    checks["spectral_radius"] = (worst_sr <= 1e-6, fmt(worst_sr))

    digests = []
    for run in ("a", "b"):
        cfg = write_config(tmp_path / f"{run}.yaml")
        codes = [main([s, "--config", str(cfg), "--out", str(tmp_path / "run"), "-q"]) for s in STAGES]
        man = json.loads((tmp_path / "run" / "manifest.json").read_text())
        digests.append((codes, man["files"]))
        # second run overwrites the first in place, so every file must be reproduced
        (tmp_path / "run").rename(tmp_path / f"run_{run}")
    same = digests[0][1] == digests[1][1] and all(c == 0 for c in digests[0][0] + digests[1][0])
    checks["byte_identical"] = (same, f"{len(digests[0][1])} files")

    ok = all(v[0] for v in checks.values())
    record(7, ok, "; ".join(f"{k} {'ok' if v[0] else 'FAIL'} {v[1]}" for k, v in checks.items()))
    assert ok
