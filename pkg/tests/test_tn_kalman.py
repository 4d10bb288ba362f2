import numpy as np
import pytest

from src.kalman.dense_kalman import dense_kalman_step
from src.kalman.tn_kalman import (
    KalmanState,
    ModelSpec,
    initial_state,
    innovation,
    innovation_variance,
    kalman_gain,
    kk_outer_tn,
    predict_cov,
    predict_mean,
    step,
    step_detailed,
    update_cov,
    update_mean,
)
from src.tensor.dense import colwise_outer
from src.tensor.tensor_train import (
    RoundingPolicy,
    identity_ttm,
    random_tt,
    random_ttm,
    rank1_tt_from_vector,
    scaled_identity_ttm,
    tt_add,
    tt_to_matrix,
    ttm_to_matrices,
    zeros_tt,
)
from src.utils.errors import CovarianceError, DimensionMismatchError
from src.volterra.signals import make_rng

EXACT = RoundingPolicy()

def relative(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b)

def spd_ttm(rng, l, n, d):
    """Positive definite TT-matrix: 2 I plus a rank-2 outer product per slice"""
    K = random_tt(l, n, [2] * (d - 1), rng)
    return tt_add(scaled_identity_ttm([2.0] * l, n, d), kk_outer_tn(K))

def input_tt(rng, n, d):
    ut = np.concatenate([[1.0], rng.standard_normal(n - 1)])
    return rank1_tt_from_vector(ut, d)

def column(tt):
    return tt_to_matrix(tt)[:, 0]

class TestScalarChain:
    """n = d = l = 1 reduces to the scalar Kalman recursion"""

    def setup_method(self):
        self.state = initial_state(1, 1, 1, 1000.0, EXACT)
        self.model = ModelSpec.time_invariant([0.01], 1, 1)
        self.c = rank1_tt_from_vector(np.array([1.0]), 1)

    def test_variance_gain_and_covariance(self):
        s = innovation_variance(self.state.cov, self.c, self.model.r_diag)
        assert s[0] == pytest.approx(1000.01)
        K = kalman_gain(self.state.cov, self.c, s, EXACT)
        assert column(K)[0] == pytest.approx(1000.0 / 1000.01)
        P = update_cov(self.state.cov, K, s, EXACT)
        assert ttm_to_matrices(P)[0, 0, 0] == pytest.approx(1000.0 * 0.01 / 1000.01)

    def test_full_step(self):
        state = step(self.state, self.model, self.c, np.array([2.0]))
        assert state.t == 1
        assert column(state.mean)[0] == pytest.approx(2.0 * 1000.0 / 1000.01)
        assert ttm_to_matrices(state.cov)[0, 0, 0] == pytest.approx(0.0099999, rel=1e-6)

    def test_dense_oracle_agrees(self):
        mean, cov = dense_kalman_step(np.zeros(1), 1000.0 * np.ones((1, 1, 1)), None,
                                      np.ones(1), None, [0.01], [2.0])
        assert mean[0, 0] == pytest.approx(0.99999 * 2.0, rel=1e-6)
        assert cov[0, 0, 0] == pytest.approx(0.01 * 1000.0 / 1000.01)

def test_predict_mean_identity(make_tt):
    mean = make_tt(l=2, n=3, ranks=(2,))
    predicted = predict_mean(mean, identity_ttm(3, 2), EXACT)
    assert predicted.ranks == mean.ranks
    np.testing.assert_allclose(tt_to_matrix(predicted), tt_to_matrix(mean), atol=1e-12)

def test_predict_mean_dense_oracle(rng):
    mean = random_tt(1, 3, [1], rng)
    A = random_ttm(1, 3, [1], rng)
    expected = ttm_to_matrices(A)[0] @ tt_to_matrix(mean)
    assert relative(tt_to_matrix(predict_mean(mean, A, EXACT)), expected) < 1e-12

def test_predict_mean_rank_growth(rng):
    mean = random_tt(1, 3, [2, 2], rng)
    A = random_ttm(1, 3, [3, 3], rng)
    assert predict_mean(mean, A, None).ranks == (6, 6)

def test_predict_cov_dense_oracle(rng):
    P = random_ttm(1, 3, [1], rng)
    A = random_ttm(1, 3, [1], rng)
    Q = scaled_identity_ttm([0.5], 3, 2)
    a = ttm_to_matrices(A)[0]
    expected = a @ ttm_to_matrices(P)[0] @ a.T + 0.5 * np.eye(9)
    predicted = predict_cov(P, A, Q, EXACT)
    assert relative(ttm_to_matrices(predicted)[0], expected) < 1e-12

def test_predict_cov_shortcuts(make_ttm):
    P = make_ttm(l=2, n=3, ranks=(2,))
    assert predict_cov(P, None, None, EXACT) is P
    same = predict_cov(P, identity_ttm(3, 2), None, EXACT)
    np.testing.assert_allclose(ttm_to_matrices(same), ttm_to_matrices(P), atol=1e-10)

def test_predict_cov_rank_growth(rng):
    P = random_ttm(1, 3, [2, 2], rng)
    A = random_ttm(1, 3, [2, 2], rng)
    assert predict_cov(P, A, None, None).ranks == (8, 8)

def test_innovation(rng):
    c = random_tt(1, 3, [2], rng)
    y = np.array([1.5, -0.5])
    np.testing.assert_array_equal(innovation(y, zeros_tt(2, 3, 2), c), y)

    mean = random_tt(1, 3, [2], rng)
    expected = 0.7 - column(c) @ column(mean)
    assert innovation(np.array([0.7]), mean, c)[0] == pytest.approx(expected, rel=1e-12)

def test_innovation_rejects_bad_sizes(rng):
    mean = random_tt(2, 3, [2], rng)
    with pytest.raises(DimensionMismatchError):
        innovation(np.array([1.0]), mean, random_tt(1, 3, [1], rng))
    with pytest.raises(DimensionMismatchError):
        innovation(np.array([1.0, 2.0]), mean, random_tt(2, 3, [1], rng))

def test_innovation_variance_isotropic(rng):
    u = rng.standard_normal(3)
    c = rank1_tt_from_vector(u / np.linalg.norm(u), 2)
    s = innovation_variance(scaled_identity_ttm([4.0], 3, 2), c, np.array([0.25]))
    assert s[0] == pytest.approx(4.25, rel=1e-12)

def test_innovation_variance_dense_oracle(rng):
    P = spd_ttm(rng, 2, 3, 2)
    c = random_tt(1, 3, [2], rng)
    r_diag = np.array([0.1, 0.2])
    dense_c = column(c)
    expected = [dense_c @ slice_ @ dense_c + r for slice_, r in zip(ttm_to_matrices(P), r_diag)]
    np.testing.assert_allclose(innovation_variance(P, c, r_diag), expected, rtol=1e-12)

def test_innovation_variance_initial_filter_step(rng):
    u = np.concatenate([[1.0], rng.standard_normal(4)])
    c = rank1_tt_from_vector(u, 4)
    s = innovation_variance(scaled_identity_ttm([1000.0], 5, 4), c, np.array([0.01]))
    assert s[0] == pytest.approx(1000.0 * np.linalg.norm(u) ** 8 + 0.01, rel=1e-12)

def test_innovation_variance_rejects_non_positive(rng):
    c = input_tt(rng, 3, 2)
    with pytest.raises(CovarianceError):
        innovation_variance(scaled_identity_ttm([1e-3], 3, 2), c, np.array([-1e6]))

def test_kalman_gain(rng):
    c = random_tt(1, 3, [2], rng)
    K = kalman_gain(identity_ttm(3, 2), c, np.array([1.0]), EXACT)
    np.testing.assert_allclose(column(K), column(c), atol=1e-12)

    P = spd_ttm(rng, 2, 3, 2)
    s = np.array([3.0, 0.5])
    K = kalman_gain(P, c, s, EXACT)
    expected = np.stack([slice_ @ column(c) / sk for slice_, sk in zip(ttm_to_matrices(P), s)], axis=1)
    assert relative(tt_to_matrix(K), expected) < 1e-12

    with pytest.raises(CovarianceError):
        kalman_gain(P, c, np.array([1.0, 0.0]), EXACT)

def test_update_mean(rng):
    mean = random_tt(2, 3, [2], rng)
    K = random_tt(2, 3, [1], rng)
    unchanged = update_mean(mean, K, np.zeros(2), EXACT)
    np.testing.assert_allclose(tt_to_matrix(unchanged), tt_to_matrix(mean), atol=1e-12)

    v = np.array([0.3, -2.0])
    expected = tt_to_matrix(mean) + tt_to_matrix(K) * v
    assert relative(tt_to_matrix(update_mean(mean, K, v, EXACT)), expected) < 1e-12

def test_update_mean_rank_sum(rng):
    mean = random_tt(1, 3, [2, 2], rng)
    K = random_tt(1, 3, [3, 3], rng)
    assert update_mean(mean, K, np.array([1.0]), None).ranks == (5, 5)

def test_kk_outer_matches_colwise_outer(rng):
    K = random_tt(2, 3, [2], rng)
    dense_K = tt_to_matrix(K)
    expected = colwise_outer(dense_K, dense_K).array.transpose(2, 0, 1)
    np.testing.assert_allclose(ttm_to_matrices(kk_outer_tn(K)), expected, atol=1e-12)

def test_kk_outer_rank_one_and_ranks(rng):
    u = rng.standard_normal(3)
    outer = ttm_to_matrices(kk_outer_tn(rank1_tt_from_vector(u, 3)))[0]
    powered = column(rank1_tt_from_vector(u, 3))
    np.testing.assert_allclose(outer, np.outer(powered, powered), atol=1e-12)
    assert kk_outer_tn(random_tt(1, 3, [2, 3], rng)).ranks == (4, 9)

def test_update_cov(rng):
    P = spd_ttm(rng, 2, 3, 2)
    unchanged = update_cov(P, zeros_tt(2, 3, 2), np.array([1.0, 1.0]), EXACT)
    np.testing.assert_allclose(ttm_to_matrices(unchanged), ttm_to_matrices(P), atol=1e-12)

    K = random_tt(2, 3, [1], rng)
    s = np.array([2.0, 5.0])
    dense_K = tt_to_matrix(K)
    expected = np.stack([
        slice_ - sk * np.outer(dense_K[:, k], dense_K[:, k])
        for k, (slice_, sk) in enumerate(zip(ttm_to_matrices(P), s))
    ])
    assert relative(ttm_to_matrices(update_cov(P, K, s, EXACT)), expected) < 1e-12

class TestModelValidation:

    def test_measurement_variance_must_be_positive(self):
        with pytest.raises(ValueError):
            ModelSpec(r_diag=[0.0])

    def test_transition_must_be_unbatched(self):
        with pytest.raises(DimensionMismatchError):
            ModelSpec(r_diag=[1.0, 1.0], A=scaled_identity_ttm([1.0, 1.0], 2, 2))

    def test_process_noise_batch(self):
        with pytest.raises(DimensionMismatchError):
            ModelSpec(r_diag=[1.0, 1.0], Q=scaled_identity_ttm([1.0], 2, 2))

    def test_state_shapes(self):
        with pytest.raises(DimensionMismatchError):
            KalmanState(mean=zeros_tt(1, 3, 2), cov=scaled_identity_ttm([1.0], 2, 2))
        with pytest.raises(DimensionMismatchError):
            KalmanState(mean=zeros_tt(2, 3, 2), cov=scaled_identity_ttm([1.0], 3, 2))

    def test_step_rejects_output_mismatch(self, rng):
        state = initial_state(2, 3, 2, 1.0, EXACT)
        with pytest.raises(DimensionMismatchError):
            step(state, ModelSpec.time_invariant([1.0], 3, 2), input_tt(rng, 3, 2), np.zeros(2))

def run_against_dense(rng, model, l, n, d, steps, variances):
    """Step the TT and the dense filter together; return the worst deviations"""
    state = initial_state(l, n, d, variances, EXACT)
    states = n ** d
    variances = np.broadcast_to(np.asarray(variances, dtype=float), (l,))
    mean = np.zeros((states, l))
    cov = np.stack([v * np.eye(states) for v in variances])
    dense_a = None if model.A is None else ttm_to_matrices(model.A)[0]
    dense_q = None if model.Q is None else ttm_to_matrices(model.Q)

    worst_mean = worst_cov = 0.0
    for _ in range(steps):
        c = input_tt(rng, n, d)
        y = rng.standard_normal(l)
        state = step(state, model, c, y)
        mean, cov = dense_kalman_step(mean, cov, dense_a, column(c), dense_q, model.r_diag, y)
        worst_mean = max(worst_mean, relative(tt_to_matrix(state.mean), mean))
        worst_cov = max(worst_cov, relative(ttm_to_matrices(state.cov), cov))
    return state, worst_mean, worst_cov

def test_step_matches_dense_filter(rng):
    model = ModelSpec.time_invariant([0.01], 3, 2)
    state, worst_mean, worst_cov = run_against_dense(rng, model, 1, 3, 2, 20, 1000.0)
    assert state.t == 20
    assert worst_mean < 1e-8
    assert worst_cov < 1e-8
    cov = ttm_to_matrices(state.cov)[0]
    assert relative(cov, cov.T) < 1e-8

def test_step_matches_dense_filter_with_transition_and_noise(rng):
    model = ModelSpec(
        r_diag=[0.01, 0.05],
        A=identity_ttm(3, 2),
        Q=scaled_identity_ttm([1e-3, 1e-2], 3, 2),
    )
    _, worst_mean, worst_cov = run_against_dense(rng, model, 2, 3, 2, 20, [1000.0, 10.0])
    assert worst_mean < 1e-8
    assert worst_cov < 1e-8

def test_batch_equals_independent_runs(rng):
    n, d, steps = 3, 2, 15
    r_diag = np.array([0.01, 0.1, 1.0])
    variances = np.array([1000.0, 100.0, 10.0])
    inputs = [input_tt(rng, n, d) for _ in range(steps)]
    outputs = rng.standard_normal((3, steps))

    batched = initial_state(3, n, d, variances, EXACT)
    model = ModelSpec.time_invariant(r_diag, n, d)
    for t, c in enumerate(inputs):
        batched = step(batched, model, c, outputs[:, t])

    for k in range(3):
        single = initial_state(1, n, d, variances[k], EXACT)
        single_model = ModelSpec.time_invariant(r_diag[k:k + 1], n, d)
        for t, c in enumerate(inputs):
            single = step(single, single_model, c, outputs[k:k + 1, t])
        np.testing.assert_allclose(tt_to_matrix(batched.mean)[:, k], column(single.mean),
                                   rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(ttm_to_matrices(batched.cov)[k], ttm_to_matrices(single.cov)[0],
                                   rtol=1e-10, atol=1e-10)

def test_step_detailed_diagnostics(rng):
    state = initial_state(1, 3, 3, 1000.0, RoundingPolicy(tolerance=0.1))
    model = ModelSpec.time_invariant([0.01], 3, 3)
    state, diagnostics = step_detailed(state, model, input_tt(rng, 3, 3), np.array([1.0]))
    assert diagnostics.innovation[0] == pytest.approx(1.0)
    assert diagnostics.variance[0] > 0.01
    assert len(diagnostics.gain_ranks) == 2
    assert state.mean.ranks == (1, 1)

def test_kk_outer_matches_colwise_outer_on_random_instances():
    rng = make_rng(41)
    for _ in range(50):
        l, n, d = (int(v) for v in rng.integers(1, 5, size=3))
        ranks = [int(r) for r in rng.integers(1, 4, size=d - 1)]
        K = random_tt(l, n, ranks, rng)
        dense_K = tt_to_matrix(K)
        expected = colwise_outer(dense_K, dense_K).array.transpose(2, 0, 1)
        np.testing.assert_allclose(ttm_to_matrices(kk_outer_tn(K)), expected,
                                   rtol=1e-12, atol=1e-12 * np.abs(expected).max())

@pytest.mark.parametrize("n,d", [(4, 4), (2, 8)])
def test_step_matches_dense_filter_at_256_states(rng, n, d):
    model = ModelSpec.time_invariant([0.01], n, d)
    _, worst_mean, worst_cov = run_against_dense(rng, model, 1, n, d, 25, 1000.0)
    assert worst_mean < 1e-8
    assert worst_cov < 1e-8

@pytest.mark.slow
@pytest.mark.parametrize("n,d", [(8, 4), (4, 6), (16, 3)])
def test_step_matches_dense_filter_at_4096_states(rng, n, d):
    model = ModelSpec.time_invariant([0.01], n, d)
    _, worst_mean, worst_cov = run_against_dense(rng, model, 1, n, d, 8, 1000.0)
    assert worst_mean < 1e-8
    assert worst_cov < 1e-8

def test_mean_rounded_under_its_own_budget(rng):
    policy = RoundingPolicy(mean_max_rank=1)
    state = initial_state(1, 3, 3, 1000.0, policy)
    model = ModelSpec.time_invariant([0.01], 3, 3)
    for _ in range(6):
        state = step(state, model, input_tt(rng, 3, 3), rng.standard_normal(1))
    assert state.mean.ranks == (1, 1)
    assert max(state.cov.ranks) > 1
    assert state.mean.rounded_at == RoundingPolicy(max_rank=1)
    assert state.cov.rounded_at == policy
