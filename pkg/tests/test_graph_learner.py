import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from legato import tensor as T
from legato.graph_learner import learn_adjacency, sparsity_loss, threshold_adjacency
from legato.tensor import ShapeError, Tensor

from oracles import graph_learner as oracle_graph_learner


def test_zero_weights_give_half_everywhere():
    H = Tensor(np.random.default_rng(0).normal(size=(3, 4, 2)))
    raw = learn_adjacency(H, Tensor(np.zeros((2 + 4, 3))))
    np.testing.assert_array_equal(raw.data, 0.5)


def test_scalar_oracle_k2_d2():
    H = [[0.5, -1.0], [2.0, 0.3]]
    W = [[0.2, -0.4, 1.0], [0.7, 0.1, -0.3], [-0.5, 0.9, 0.2], [0.3, 0.3, -0.8]]
    raw = learn_adjacency(Tensor(np.array([H])), Tensor(np.array(W)))
    np.testing.assert_allclose(raw.data[0], oracle_graph_learner(H, W, 2), rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 10_000))
def test_raw_adjacency_exactly_symmetric(k, d, seed):
    rng = np.random.default_rng(seed)
    raw = learn_adjacency(Tensor(rng.normal(size=(3, k, d))), Tensor(rng.normal(size=(d + k, 3)))).data
    assert (raw == np.swapaxes(raw, 1, 2)).all()
    assert ((raw >= 0) & (raw <= 1)).all()  # sigmoid saturates to 1.0 in float64


def test_view_permutation_equivariance():
    rng = np.random.default_rng(1)
    k, d = 4, 3
    H = rng.normal(size=(2, k, d))
    W = rng.normal(size=(d + k, 5))
    perm = np.array([2, 0, 3, 1])
    # permuting views also permutes the one-hot rows of W
    W_perm = np.concatenate([W[:d], W[d:][perm]])
    raw = learn_adjacency(Tensor(H), Tensor(W)).data
    raw_p = learn_adjacency(Tensor(H[:, perm]), Tensor(W_perm)).data
    np.testing.assert_allclose(raw_p, raw[:, perm][:, :, perm], atol=1e-14)


def test_sample_permutation_equivariance():
    rng = np.random.default_rng(2)
    H, W = rng.normal(size=(5, 3, 2)), rng.normal(size=(5, 2))
    perm = rng.permutation(5)
    raw = learn_adjacency(Tensor(H), Tensor(W)).data
    np.testing.assert_array_equal(learn_adjacency(Tensor(H[perm]), Tensor(W)).data, raw[perm])


def test_dimension_mismatch_raises():
    with pytest.raises(ShapeError):
        learn_adjacency(Tensor(np.ones((1, 2, 3))), Tensor(np.ones((3, 2))))


def test_threshold_examples():
    raw = Tensor(np.array([[[0.05, 0.10], [0.10, 0.5]]]))
    gated = threshold_adjacency(raw, 0.1).data
    assert gated[0, 0, 0] == 0.0
    assert gated[0, 0, 1] == 0.10
    assert gated[0, 1, 1] == 0.5
    half = Tensor(np.full((2, 3, 3), 0.5))
    np.testing.assert_array_equal(threshold_adjacency(half).data, half.data)
    with pytest.raises(ValueError):
        threshold_adjacency(raw, 1.0)


def test_threshold_gradient_is_mask():
    raw = Tensor(np.array([[[0.05, 0.3], [0.3, 0.09]]]), requires_grad=True)
    T.backward(T.tsum(threshold_adjacency(raw)))
    np.testing.assert_array_equal(raw.grad, [[[0.0, 1.0], [1.0, 0.0]]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.99))
def test_gated_bounded_by_raw(seed, tau):
    raw = np.random.default_rng(seed).uniform(size=(2, 4, 4))
    raw = 0.5 * (raw + raw.transpose(0, 2, 1))
    gated = threshold_adjacency(Tensor(raw), tau).data
    assert (gated <= raw).all()
    assert (gated[raw < tau] == 0).all()
    assert (gated == gated.transpose(0, 2, 1)).all()


def test_sparsity_examples():
    assert sparsity_loss(Tensor(np.ones((3, 4, 4)))).item() == 1.0
    assert sparsity_loss(Tensor(np.zeros((2, 3, 3)))).item() == 0.0
    value = sparsity_loss(Tensor(np.array([[[0.5, 0.2], [0.2, 0.5]]]))).item()
    assert abs(value - 0.35) < 1e-10
