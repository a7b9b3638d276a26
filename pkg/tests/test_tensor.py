import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from procattn import tensor as T
from oracles import central_difference

RTOL = 1e-6
ATOL = 1e-9


def check_grad(build, *arrays, h=1e-6):
    """Compare backward() against central differences for every input array.

    ``build`` maps input tensors to a scalar tensor.
    """
    tensors = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    T.backward(build(*tensors))
    for t in tensors:
        def f():
            return float(build(*[T.Tensor(x.data) for x in tensors]).data)

        num = central_difference(f, t.data, h)
        np.testing.assert_allclose(t.grad, num, rtol=RTOL, atol=ATOL)


def weighted_sum(t):
    # random projection to a scalar so every output element gets its own weight
    w = np.random.default_rng(t.data.size).normal(size=t.shape)
    return T.sum_over_axis(T.mul(t, w))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestOpGradients:
    def test_add_broadcast(self, rng):
        check_grad(lambda a, b: weighted_sum(T.add(a, b)),
                   rng.normal(size=(3, 4)), rng.normal(size=(4,)))

    def test_mul_broadcast(self, rng):
        check_grad(lambda a, b: weighted_sum(T.mul(a, b)),
                   rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 1)))

    def test_tanh(self, rng):
        check_grad(lambda a: weighted_sum(T.tanh(a)), rng.normal(size=(5, 3)))

    def test_sigmoid(self, rng):
        check_grad(lambda a: weighted_sum(T.sigmoid(a)), rng.normal(scale=3, size=(5, 3)))

    def test_matmul_2d(self, rng):
        check_grad(lambda a, b: weighted_sum(T.matmul(a, b)),
                   rng.normal(size=(3, 4)), rng.normal(size=(4, 2)))

    def test_matmul_batched_lhs(self, rng):
        check_grad(lambda a, b: weighted_sum(T.matmul(a, b)),
                   rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)))

    def test_matmul_batched_both(self, rng):
        check_grad(lambda a, b: weighted_sum(T.matmul(a, b)),
                   rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 5)))

    def test_concat(self, rng):
        check_grad(lambda a, b, c: weighted_sum(T.concat_last_axis(a, b, c)),
                   rng.normal(size=(2, 3, 1)), rng.normal(size=(2, 3, 4)),
                   rng.normal(size=(2, 3, 2)))

    @pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False), (1, True), (2, False)])
    def test_sum(self, rng, axis, keepdims):
        check_grad(lambda a: weighted_sum(T.sum_over_axis(a, axis, keepdims)),
                   rng.normal(size=(2, 3, 4)))

    def test_mean(self, rng):
        check_grad(lambda a: T.mean(T.tanh(a)), rng.normal(size=(3, 4)))

    def test_reshape_and_expand(self, rng):
        check_grad(lambda a: weighted_sum(T.expand_last(T.reshape(a, (4, 3)))),
                   rng.normal(size=(2, 6)))

    def test_embedding_repeated_indices(self, rng):
        idx = np.array([[0, 2, 2], [1, 2, 0]])
        check_grad(lambda w: weighted_sum(T.embedding_lookup(w, idx)), rng.normal(size=(3, 4)))

    def test_masked_softmax(self, rng):
        mask = np.array([[False, True, True, True], [False, False, False, True]])
        check_grad(lambda a: weighted_sum(T.softmax_masked(a, mask, axis=1)),
                   rng.normal(size=(2, 4)))

    def test_cross_entropy(self, rng):
        targets = np.array([0, 2, 1, 2])
        check_grad(lambda a: T.cross_entropy(a, targets), rng.normal(scale=2, size=(4, 3)))

    def test_reused_input_accumulates(self, rng):
        # x feeds two branches; both contributions must add up
        check_grad(lambda x: weighted_sum(T.mul(T.tanh(x), x)), rng.normal(size=(3, 3)))


class TestForwardValues:
    def test_sigmoid_extremes_are_finite(self):
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            y = T.sigmoid(T.Tensor(np.array([-1000.0, -40.0, 0.0, 40.0, 1000.0]))).data
        assert y[0] == 0.0 and y[-1] == 1.0 and y[2] == 0.5

    def test_masked_softmax_zero_on_pads(self):
        x = T.Tensor(np.array([[5.0, 1.0, 2.0], [3.0, 3.0, 3.0]]))
        mask = np.array([[False, True, True], [True, True, True]])
        y = T.softmax_masked(x, mask, axis=1).data
        assert y[0, 0] == 0.0
        np.testing.assert_allclose(y.sum(axis=1), 1.0)
        np.testing.assert_allclose(y[1], 1 / 3)

    def test_all_masked_row_gives_zeros(self):
        y = T.softmax_masked(T.Tensor(np.ones((1, 3))), np.zeros((1, 3), bool), axis=1).data
        assert np.all(y == 0.0)

    def test_cross_entropy_value(self):
        logits = np.array([[1.0, 2.0, 0.5]])
        expected = -np.log(np.exp(2.0) / np.exp(logits).sum())
        got = float(T.cross_entropy(T.Tensor(logits), np.array([1])).data)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_cross_entropy_large_logits_stable(self):
        got = T.cross_entropy(T.Tensor(np.array([[1000.0, -1000.0]])), np.array([1]))
        assert float(got.data) == pytest.approx(2000.0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 8))
    def test_masked_softmax_sums_to_one(self, seed, rows, cols):
        rng = np.random.default_rng(seed)
        x = rng.normal(scale=10, size=(rows, cols))
        mask = rng.random((rows, cols)) < 0.6
        mask[:, -1] = True
        y = T.softmax_masked(T.Tensor(x), mask, axis=1).data
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(y[~mask] == 0.0)
        assert np.all(y >= 0.0)


class TestErrors:
    def test_add_shape_mismatch(self):
        with pytest.raises(ValueError, match="incompatible shapes"):
            T.add(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((4,))))

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ValueError, match="matmul"):
            T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))

    def test_backward_needs_scalar(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            T.backward(T.tanh(x))

    def test_backward_needs_trainable(self):
        with pytest.raises(ValueError, match="trainable"):
            T.backward(T.sum_over_axis(T.Tensor(np.ones(3))))

    def test_embedding_index_out_of_range(self):
        with pytest.raises(IndexError):
            T.embedding_lookup(T.Tensor(np.ones((3, 2))), np.array([3]))

    def test_cross_entropy_target_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            T.cross_entropy(T.Tensor(np.ones((1, 2))), np.array([2]))


class TestTape:
    def test_parents_precede_children(self, rng):
        a = T.Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        b = T.tanh(a)
        c = T.mul(b, a)
        loss = T.sum_over_axis(c)
        tape = T.Tape.record(loss)
        pos = {id(n): i for i, n in enumerate(tape.nodes)}
        for node in tape.nodes:
            for p in node._parents:
                if p.requires_grad:
                    assert pos[id(p)] < pos[id(node)]
        assert tape.nodes[-1] is loss
        assert len(tape) == 4

    def test_constants_receive_no_gradient(self):
        c = T.Tensor(np.ones(3))
        x = T.Tensor(np.ones(3), requires_grad=True)
        T.backward(T.sum_over_axis(T.mul(c, x)))
        assert c.grad is None
        np.testing.assert_array_equal(x.grad, np.ones(3))


class TestInitAndAdam:
    def test_glorot_bounds(self, rng):
        w = T.glorot_uniform(rng, (30, 20))
        limit = np.sqrt(6 / 50)
        assert w.requires_grad
        assert np.all(np.abs(w.data) <= limit)
        assert np.abs(w.data).max() > 0.8 * limit

    def test_first_adam_step(self):
        # with bias correction the first step is lr * g / (|g| + eps)
        p = T.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        opt = T.Adam([p], lr=0.001)
        p.grad = np.array([0.5, -4.0, 0.0])
        opt.step()
        expected = np.array([1.0, -2.0, 3.0]) - 0.001 * np.array([0.5, -4.0, 0.0]) / (
            np.abs([0.5, -4.0, 0.0]) + 1e-8
        )
        np.testing.assert_allclose(p.data, expected, rtol=0, atol=1e-15)

    def test_adam_matches_reference_recursion(self, rng):
        p = T.Tensor(rng.normal(size=4), requires_grad=True)
        ref = p.data.copy()
        m = np.zeros(4)
        v = np.zeros(4)
        opt = T.Adam([p], lr=0.01)
        for step in range(1, 6):
            g = rng.normal(size=4)
            p.grad = g.copy()
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.01 * (m / (1 - 0.9**step)) / (np.sqrt(v / (1 - 0.999**step)) + 1e-8)
        np.testing.assert_allclose(p.data, ref, rtol=1e-12)

    def test_adam_minimises_quadratic(self):
        p = T.Tensor(np.array([3.0, -2.0]), requires_grad=True)
        opt = T.Adam([p], lr=0.1)
        for _ in range(500):
            opt.zero_grad()
            T.backward(T.sum_over_axis(T.mul(p, p)))
            opt.step()
        assert np.abs(p.data).max() < 1e-2
