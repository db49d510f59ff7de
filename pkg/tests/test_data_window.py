import numpy as np
import pytest

from swlqr.data_window import (
    DataWindow,
    build_hankel,
    min_window_length,
    numerical_rank,
    push_sample,
    rank_condition_holds,
)
from swlqr.switched_plant import seed_window_forward

from conftest import random_controllable_system


def test_hankel_scalar_order_two():
    hank = build_hankel([1.0, 2.0, 3.0, 4.0], 2)
    assert hank.entries.tolist() == [[1.0, 2.0, 3.0], [2.0, 3.0, 4.0]]
    assert hank.shape == (2, 3)


def test_hankel_single_sample():
    hank = build_hankel([5.0], 1)
    assert hank.entries.tolist() == [[5.0]]


def test_hankel_vector_signal_matches_index_oracle():
    rng = np.random.default_rng(3)
    signal = rng.uniform(-0.3, 0.3, size=(8, 2))
    hank = build_hankel(signal, 3)
    assert hank.shape == (6, 6)
    # independent reconstruction: block (r, c) must be sample r + c
    for r in range(3):
        for c in range(6):
            np.testing.assert_array_equal(
                hank.entries[2 * r:2 * r + 2, c], signal[r + c]
            )


def test_hankel_shape_and_reconstruction_property():
    rng = np.random.default_rng(11)
    for _ in range(25):
        sig_dim = int(rng.integers(1, 4))
        order = int(rng.integers(1, 5))
        nseq = order + int(rng.integers(0, 7))
        signal = rng.normal(size=(nseq, sig_dim))
        hank = build_hankel(signal, order)
        assert hank.shape == (sig_dim * order, nseq - order + 1)
        # first column holds samples 0..order-1, last block row samples order-1..nseq-1
        first_col = hank.entries[:, 0].reshape(order, sig_dim)
        last_row = hank.entries[-sig_dim:, :].T
        recovered = np.vstack([first_col, last_row[1:]])
        np.testing.assert_array_equal(recovered, signal)


def test_hankel_too_short_errors():
    with pytest.raises(ValueError, match="too short"):
        build_hankel([1.0, 2.0], 3)


def test_numerical_rank_zero_and_identity():
    assert numerical_rank(np.zeros((3, 3))) == 0
    assert numerical_rank(np.eye(3)) == 3


def test_numerical_rank_matches_gram_eigenvalue_oracle():
    M = np.array([[1.0, 2.0], [2.0, 4.0]])
    # rank via eigenvalues of the 2x2 Gram matrix, no SVD involved
    gram_eigs = np.linalg.eigvalsh(M.T @ M)
    oracle = int(np.sum(gram_eigs > 1e-12 * gram_eigs.max()))
    assert oracle == 1
    assert numerical_rank(M) == 1


def test_numerical_rank_explicit_tolerance():
    assert numerical_rank(np.eye(3), tol=2.0) == 0
    assert numerical_rank(np.diag([5.0, 1e-9]), tol=1e-6) == 1


def test_numerical_rank_transpose_invariant():
    rng = np.random.default_rng(5)
    for _ in range(20):
        rows, cols = rng.integers(1, 7, size=2)
        M = rng.normal(size=(rows, cols))
        if rng.random() < 0.4:  # force some rank deficiency
            M[:, 0] = M @ rng.normal(size=cols) if cols > 1 else 0.0
        assert numerical_rank(M) == numerical_rank(M.T)


def _window_from_trajectory(mode, inputs, x_start):
    states = [np.asarray(x_start, dtype=float)]
    for u in inputs:
        states.append(mode.A @ states[-1] + mode.B @ u)
    return DataWindow(inputs, states)


def test_rank_condition_on_excited_controllable_mode():
    rng = np.random.default_rng(7)
    mode = random_controllable_system(rng, n=2, m=2)
    window = seed_window_forward(mode, 15, (-0.3, 0.3), np.zeros(2), rng)
    assert rank_condition_holds(window)


def test_rank_condition_zero_window_false():
    T = min_window_length(1, 1)
    window = DataWindow([np.zeros(1)] * T, [np.zeros(1)] * (T + 1))
    assert not rank_condition_holds(window)


def test_rank_condition_constant_input_at_equilibrium_false():
    # constant input holding a scalar mode at equilibrium: both data rows
    # are constant, so the stacked 2xT matrix has rank 1
    a, b, u_const = 0.5, 1.0, 0.3
    x_eq = b * u_const / (1 - a)
    T = min_window_length(1, 1)
    inputs = [np.array([u_const])] * T
    states = [np.array([x_eq])] * (T + 1)
    window = DataWindow(inputs, states)
    stacked = window.stacked_data()
    # brute-force oracle: all 2x2 minors vanish iff rank < 2
    minors = [
        stacked[0, i] * stacked[1, j] - stacked[0, j] * stacked[1, i]
        for i in range(T) for j in range(i + 1, T)
    ]
    assert max(abs(m) for m in minors) < 1e-14
    assert not rank_condition_holds(window)


def test_rank_condition_invariant_under_column_permutation():
    rng = np.random.default_rng(13)
    mode = random_controllable_system(rng, n=2, m=1)
    window = seed_window_forward(mode, min_window_length(2, 1), (-1, 1), np.zeros(2), rng)
    stacked = window.stacked_data()
    perm = rng.permutation(stacked.shape[1])
    assert numerical_rank(stacked) == numerical_rank(stacked[:, perm])


def test_push_appends_input_as_last_column():
    rng = np.random.default_rng(1)
    mode = random_controllable_system(rng, n=1, m=1)
    window = seed_window_forward(mode, 5, (-1, 1), np.zeros(1), rng)
    u = np.array([0.25])
    x_next = np.array([0.5])
    pushed = push_sample(window, u, x_next)
    np.testing.assert_array_equal(pushed.input_matrix()[:, -1], u)
    np.testing.assert_array_equal(pushed.shifted_state_matrix()[:, -1], x_next)
    assert pushed.current_time == window.current_time + 1
    assert pushed.T == window.T


def test_window_holds_only_recent_data_after_t_pushes():
    rng = np.random.default_rng(2)
    mode = random_controllable_system(rng, n=1, m=1)
    T = 5
    window = seed_window_forward(mode, T, (-1, 1), np.zeros(1), rng)
    marks = [np.array([10.0 + i]) for i in range(T)]
    for mark in marks:
        window = push_sample(window, mark, mark * 2)
    np.testing.assert_array_equal(window.input_matrix(), np.array(marks).T)


def test_push_keeps_column_alignment():
    rng = np.random.default_rng(4)
    mode = random_controllable_system(rng, n=2, m=1)
    window = seed_window_forward(mode, min_window_length(2, 1), (-1, 1), np.zeros(2), rng)
    pushed = push_sample(window, np.array([0.1]), np.array([0.2, -0.2]))
    # column c of the shifted state matrix is column c+1 of the state buffer
    states = pushed.states
    for c in range(pushed.T):
        np.testing.assert_array_equal(pushed.shifted_state_matrix()[:, c], states[c + 1])


def test_push_overlap_is_shift_exact():
    rng = np.random.default_rng(6)
    mode = random_controllable_system(rng, n=2, m=2)
    window = seed_window_forward(mode, 15, (-1, 1), np.zeros(2), rng)
    old_next = window.shifted_state_matrix()
    pushed = push_sample(window, np.array([0.1, -0.1]), np.array([1.0, 2.0]))
    new_past = pushed.state_matrix()
    np.testing.assert_array_equal(new_past, old_next)


def test_push_dimension_mismatch():
    rng = np.random.default_rng(8)
    mode = random_controllable_system(rng, n=2, m=1)
    window = seed_window_forward(mode, min_window_length(2, 1), (-1, 1), np.zeros(2), rng)
    with pytest.raises(ValueError, match="input has dimension"):
        push_sample(window, np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError, match="state has dimension"):
        push_sample(window, np.zeros(1), np.zeros(3))


def test_window_length_minimum_enforced():
    with pytest.raises(ValueError, match="below minimum"):
        DataWindow([np.zeros(1)] * 3, [np.zeros(1)] * 4)


def test_window_needs_one_more_state():
    with pytest.raises(ValueError, match="one more state"):
        DataWindow([np.zeros(1)] * 5, [np.zeros(1)] * 5)
