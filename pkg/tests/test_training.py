import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsrc.drivers import Trajectory
from gsrc.errors import SingularSystemError, ValidationError
from gsrc.training import (FeatureSpec, Readout, accumulate, features, harvest, load_readout, normal_residual,
                           ridge_fit, save_readout, solve_normal_equations, train)

from oracles import central_difference, normal_equations_solution


def test_feature_examples():
    assert np.array_equal(features(FeatureSpec("linear", False), [1.0, 2.0]), [1, 2])
    assert np.array_equal(features(FeatureSpec(), [1.0, 2.0]), [1, 2, 1, 4, 1])
    assert np.array_equal(features(FeatureSpec(), np.zeros(4)), [0, 0, 0, 0, 0, 0, 0, 0, 1])


@pytest.mark.parametrize("kind,bias,n,expected", [("linear", False, 7, 7), ("linear", True, 7, 8),
                                                  ("linear_plus_squares", False, 7, 14),
                                                  ("linear_plus_squares", True, 7, 15)])
def test_feature_dimension(kind, bias, n, expected):
    spec = FeatureSpec(kind, bias)
    assert spec.dim(n) == expected == features(spec, np.ones(n)).size


def test_feature_block_matches_rows():
    r = np.random.default_rng(0).normal(size=(6, 4))
    block = features(FeatureSpec(), r)
    assert np.array_equal(block, np.array([features(FeatureSpec(), row) for row in r]))


def test_unknown_feature_kind():
    with pytest.raises(ValidationError):
        FeatureSpec("cubic")


# -- ridge solver ------------------------------------------------------------------

def test_exactly_determined_system():
    rng = np.random.default_rng(1)
    phi = rng.normal(size=(6, 6))
    W = rng.normal(size=(2, 6))
    assert np.allclose(ridge_fit(phi, phi @ W.T, 0.0), W, atol=1e-10)


def test_against_normal_equations_oracle():
    rng = np.random.default_rng(2)
    phi = rng.normal(size=(50, 10))
    U = rng.normal(size=(50, 3))
    assert np.allclose(ridge_fit(phi, U, 1e-3), normal_equations_solution(phi, U, 1e-3), atol=1e-8, rtol=0)


def test_against_augmented_least_squares():
    # second independent route: ridge as ordinary least squares on [Phi; sqrt(beta) I]
    rng = np.random.default_rng(3)
    phi = rng.normal(size=(40, 12))
    U = rng.normal(size=(40, 2))
    beta = 0.3
    aug = np.vstack([phi, np.sqrt(beta) * np.eye(12)])
    rhs = np.vstack([U, np.zeros((12, 2))])
    ref = np.linalg.lstsq(aug, rhs, rcond=None)[0].T
    assert np.allclose(ridge_fit(phi, U, beta), ref, atol=1e-10)


def test_large_beta_shrinks_monotonically():
    rng = np.random.default_rng(4)
    phi = rng.normal(size=(30, 8))
    U = rng.normal(size=(30, 2))
    norms = [np.linalg.norm(ridge_fit(phi, U, b)) for b in 10.0 ** np.arange(-4, 14, 2)]
    assert all(a > b for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-9


def test_gradient_vanishes_and_perturbation_never_helps():
    rng = np.random.default_rng(5)
    phi = rng.normal(size=(60, 9))
    U = rng.normal(size=(60, 2))
    beta = 1e-2
    W = ridge_fit(phi, U, beta)
    grad = 2 * phi.T @ (phi @ W.T - U) + 2 * beta * W.T
    assert np.linalg.norm(grad) <= 1e-8 * np.linalg.norm(2 * phi.T @ U)

    def loss(w):
        return np.sum((phi @ w.T - U) ** 2) + beta * np.sum(w ** 2)

    base = loss(W)
    for i in range(W.shape[0]):
        for j in range(W.shape[1]):
            for s in (1e-4, -1e-4):
                Wp = W.copy()
                Wp[i, j] += s
                assert loss(Wp) >= base


def test_row_order_independence():
    rng = np.random.default_rng(6)
    phi = rng.normal(size=(80, 10))
    U = rng.normal(size=(80, 3))
    perm = rng.permutation(80)
    assert np.allclose(ridge_fit(phi, U, 1e-4), ridge_fit(phi[perm], U[perm], 1e-4), atol=1e-12)


def test_singular_without_ridge():
    phi = np.ones((10, 3))
    with pytest.raises(SingularSystemError, match="beta"):
        ridge_fit(phi, np.ones(10), 0.0)


def test_underdetermined_needs_beta():
    with pytest.raises(ValidationError):
        ridge_fit(np.ones((3, 5)), np.ones(3), 0.0)


def test_negative_beta_rejected():
    with pytest.raises(ValidationError):
        ridge_fit(np.eye(3), np.ones(3), -1.0)


@settings(max_examples=30, deadline=None)
@given(s=st.integers(5, 40), f=st.integers(1, 8), beta=st.floats(1e-6, 10.0), seed=st.integers(0, 10_000))
def test_normal_residual_small(s, f, beta, seed):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=(s, f))
    U = rng.normal(size=(s, 2))
    W = ridge_fit(phi, U, beta)
    assert normal_residual(phi.T @ phi, phi.T @ U, beta, W) < 1e-8


# -- harvesting and training -----------------------------------------------------------

def test_harvest_counts(small_res, l63):
    seg = l63.segment(0, 301)
    states, targets = harvest(small_res, seg, washout=0.0)
    assert states.shape == (301, 120) and np.array_equal(targets, seg.states)
    states, targets = harvest(small_res, seg, washout=1.0)
    assert len(states) == 301 - 100 == len(targets)


def test_harvest_washout_too_long(small_res, l63):
    with pytest.raises(ValidationError):
        harvest(small_res, l63.segment(0, 100), washout=5.0)


def test_harvest_independent_of_initial_state(small_res, l63):
    seg = l63.segment(0, 3001)
    a, _ = harvest(small_res, seg, 20.0, r0=small_res.random_state(1))
    b, _ = harvest(small_res, seg, 20.0, r0=small_res.random_state(2))
    assert np.max(np.linalg.norm(a - b, axis=1)) / np.sqrt(120) < 1e-8


def test_streamed_gram_matches_dense(small_res, l63):
    seg = l63.segment(0, 1500)
    spec = FeatureSpec()
    gram, cross, utu, count = accumulate(small_res, seg, spec, 2.0)
    states, targets = harvest(small_res, seg, 2.0)
    phi = features(spec, states)
    assert count == len(phi)
    assert np.allclose(gram, phi.T @ phi, rtol=1e-12, atol=1e-9)
    assert np.allclose(cross, phi.T @ targets, rtol=1e-12, atol=1e-9)
    assert np.allclose(utu, np.sum(targets ** 2, axis=0))


def test_train_matches_dense_ridge(small_res, l63):
    seg = l63.segment(0, 2000)
    readout = train(small_res, seg, FeatureSpec(), 1e-4, 5.0)
    states, targets = harvest(small_res, seg, 5.0)
    ref = normal_equations_solution(features(FeatureSpec(), states), targets, 1e-4)
    assert np.allclose(readout.weights, ref, rtol=1e-6, atol=1e-6)
    assert readout.diagnostics["normal_residual"] < 1e-8
    assert readout.diagnostics["samples"] == len(states)
    pred = readout.predict(states)
    rmse = np.sqrt(np.mean((pred - targets) ** 2, axis=0))
    assert np.allclose(rmse, readout.diagnostics["train_rmse"], rtol=1e-4, atol=1e-8)


def test_train_constant_signal(small_res):
    const = Trajectory(0.01, np.tile([0.5, -1.0, 2.0], (1500, 1)))
    readout = train(small_res, const, FeatureSpec(), 1e-6, 5.0)
    states, _ = harvest(small_res, const, 5.0)
    assert np.allclose(readout.predict(states), [0.5, -1.0, 2.0], atol=1e-8)


def test_train_deterministic_bytes(small_res, l63):
    seg = l63.segment(0, 1000)
    a = train(small_res, seg, FeatureSpec(), 1e-6, 2.0)
    b = train(small_res, seg, FeatureSpec(), 1e-6, 2.0)
    assert a.weights.tobytes() == b.weights.tobytes()


def test_train_requires_more_nodes_than_inputs(l63):
    from gsrc.reservoir import Reservoir, ReservoirParams

    res = Reservoir.build(ReservoirParams(n_nodes=3, input_dim=3, pnz=1.0))
    with pytest.raises(ValidationError, match="N > D"):
        train(res, l63.segment(0, 500), FeatureSpec(), 1e-6, 1.0)


def test_train_dimension_mismatch(small_res):
    with pytest.raises(ValidationError):
        train(small_res, Trajectory(0.01, np.zeros((500, 2))), FeatureSpec(), 1e-6, 1.0)


def test_state_jacobian_matches_finite_differences():
    rng = np.random.default_rng(7)
    n = 6
    for spec in (FeatureSpec(), FeatureSpec("linear", True)):
        W = rng.normal(size=(2, spec.dim(n)))
        ro = Readout(spec, W, 0.0, n, 0.01)
        r = rng.uniform(-1, 1, n)
        assert np.allclose(ro.state_jacobian(r), central_difference(ro.predict, r), atol=1e-8)


def test_readout_round_trip(tmp_path, small_res, l63):
    ro = train(small_res, l63.segment(0, 800), FeatureSpec(), 1e-6, 1.0)
    save_readout(ro, tmp_path / "ro")
    back = load_readout(tmp_path / "ro")
    assert np.array_equal(back.weights, ro.weights)
    assert back.spec == ro.spec and back.dt == ro.dt and back.ridge_beta == ro.ridge_beta


def test_readout_shape_validation():
    with pytest.raises(ValidationError):
        Readout(FeatureSpec(), np.zeros((3, 10)), 0.0, 5, 0.01)


def test_solve_refinement_handles_moderate_conditioning():
    rng = np.random.default_rng(8)
    Q, _ = np.linalg.qr(rng.normal(size=(30, 30)))
    G = Q @ np.diag(np.logspace(0, -10, 30)) @ Q.T
    C = rng.normal(size=(30, 2))
    W = solve_normal_equations(G, C, 1e-6)
    assert normal_residual(G, C, 1e-6, W) < 1e-10
