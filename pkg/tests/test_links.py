import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmpanel.errors import InfeasibleCutsError
from lmpanel.links import (cumulative_logits, initial_probs, initial_probs_batch,
                           log_response, logits_from_probs, response_vector, transition_matrices,
                           transition_matrix)
from lmpanel.model import SHARED_UPDOWN, UNRESTRICTED_TRIDIAG, Layout, ModelConfig


def test_two_states_reduce_to_logistic():
    # k = 2: P(C = 2) = expit(x'beta)
    beta = np.array([0.4, -1.0])
    x = np.array([1.0, 2.0])
    pi = initial_probs(beta, x, 2)
    p2 = 1 / (1 + np.exp(-(x @ beta)))
    np.testing.assert_allclose(pi, [1 - p2, p2], rtol=1e-14)


def test_cut_shifts_define_differences_of_sigmoids():
    beta = np.array([-1.0, -2.5, 0.3])  # two cut shifts, one slope
    pi = initial_probs(beta, [2.0], 4)
    eta = 0.6 + np.array([0.0, -1.0, -2.5])
    sig = 1 / (1 + np.exp(-eta))
    np.testing.assert_allclose(pi, [1 - sig[0], sig[0] - sig[1], sig[1] - sig[2], sig[2]], rtol=1e-12)


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6))
@settings(max_examples=60, deadline=None)
def test_logit_round_trip(weights):
    pi = np.asarray(weights) / np.sum(weights)
    eta = logits_from_probs(pi)
    k = len(pi)
    # intercept carries eta_1, shifts carry the rest
    beta = np.concatenate([eta[1:] - eta[0], [eta[0]]])
    np.testing.assert_allclose(initial_probs(beta, [1.0], k), pi, atol=1e-12)


@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_initial_probs_are_distributions(k, seed):
    rng = np.random.default_rng(seed)
    cuts = -np.cumsum(rng.uniform(0, 2, k - 2))
    beta = np.concatenate([cuts, rng.normal(0, 3, 2)])
    pi = initial_probs_batch(beta, rng.normal(0, 3, (20, 2)), k)
    assert np.all(pi >= 0)
    np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-12)


def test_infeasible_cuts_raise():
    with pytest.raises(InfeasibleCutsError):
        initial_probs(np.array([1.0, 0.0]), [1.0], 3)


def test_extreme_logits_stay_finite():
    pi = initial_probs(np.array([-1e-9, 40.0]), [1.0], 3)
    assert np.all(np.isfinite(pi)) and abs(pi.sum() - 1) < 1e-12


@pytest.mark.parametrize("mode", [SHARED_UPDOWN, UNRESTRICTED_TRIDIAG])
@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_transition_rows_are_tridiagonal_distributions(mode, k):
    rng = np.random.default_rng(k)
    lay = Layout(ModelConfig(k, mode), 2, 3)
    gamma = rng.normal(0, 2, lay.gamma_shape)
    x = rng.normal(0, 1, (10, len(lay.trans_columns)))
    P = transition_matrices(gamma, x, lay)
    np.testing.assert_allclose(P.sum(axis=2), 1.0, atol=1e-12)
    c, d = np.indices((k, k))
    assert np.all(P[:, np.abs(c - d) > 1] == 0)


def test_shared_blocks_follow_direction():
    # improvement block only moves down, worsening block only moves up
    lay = Layout(ModelConfig(3, SHARED_UPDOWN, frozenset(), frozenset()), 1, 1)
    gamma = np.array([[np.log(2.0)], [np.log(3.0)]])   # intercept-only
    P = transition_matrices(gamma, np.ones((1, 1)), lay)[0]
    np.testing.assert_allclose(P[0], [1 / 4, 3 / 4, 0])
    np.testing.assert_allclose(P[1], [2 / 6, 1 / 6, 3 / 6])
    np.testing.assert_allclose(P[2], [0, 2 / 3, 1 / 3])


def test_transition_matrix_single_row_matches_batch():
    cfg = ModelConfig(3, UNRESTRICTED_TRIDIAG)
    lay = Layout(cfg, 2, 2)
    gamma = np.arange(np.prod(lay.gamma_shape)).reshape(lay.gamma_shape) * 0.01
    x = np.linspace(0.1, 1, len(lay.trans_columns))
    np.testing.assert_allclose(transition_matrix(gamma, x, cfg, 2, 2),
                               transition_matrices(gamma, x[None], lay)[0])


def test_log_response_conventions():
    lam = np.array([[0.0, 0.5, 1.0]])
    y = np.array([[1.0], [0.0]])
    lr = log_response(lam, y)
    assert lr[0, 0] == -np.inf and lr[0, 2] == 0.0
    assert lr[1, 0] == 0.0 and lr[1, 2] == -np.inf
    m, log_m = response_vector(lam, y[0])
    np.testing.assert_allclose(m, [0.0, 0.5, 1.0])


def test_cumulative_logits_shape():
    eta = cumulative_logits(np.array([-1.0, -2.0, 0.5]), np.ones((4, 1)), 4)
    assert eta.shape == (4, 3)
    np.testing.assert_allclose(eta[0], [0.5, -0.5, -1.5])
