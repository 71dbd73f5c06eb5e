import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spclt import tensor as tn
from spclt.errors import ConfigurationError, ContractViolation, NumericDomainError, NumericError


def leaf(x):
    return tn.Tensor(np.asarray(x, dtype=float), requires_grad=True)


def test_exp_zero_is_one():
    assert tn.exp(tn.Tensor(0.0)).item() == 1.0


def test_sum_over_axis_of_ones():
    out = tn.sum(tn.Tensor(np.ones((2, 3))), axis=1)
    assert out.shape == (2,)
    np.testing.assert_array_equal(out.data, [3.0, 3.0])


def test_square_gradient_at_three():
    x = leaf(3.0)
    tn.backward(x * x)
    assert x.grad == pytest.approx(6.0, abs=0)


def test_mean_exp_gradient_is_quarter():
    x = leaf(np.zeros(4))
    tn.backward(tn.mean(tn.exp(x)))
    np.testing.assert_array_equal(x.grad, np.full(4, 0.25))


def test_backward_rejects_non_scalar_root():
    x = leaf(np.ones(3))
    with pytest.raises(ContractViolation):
        tn.backward(x * 2.0)


def test_backward_accumulates_without_reset():
    x = leaf(2.0)
    tn.backward(x * x)
    tn.backward(x * x)
    assert x.grad == pytest.approx(8.0)


def test_tape_replay_after_reset_is_identical():
    rng = np.random.default_rng(0)
    x = leaf(rng.standard_normal((3, 4)))
    w = rng.standard_normal((4, 2))

    def f():
        return tn.sum(tn.gelu(x @ w) * tn.exp(x[:, :2]))

    tn.backward(f())
    first = x.grad.copy()
    x.zero_grad()
    tn.backward(f())
    np.testing.assert_array_equal(first, x.grad)


def test_log_of_nonpositive_carries_op_name():
    with pytest.raises(NumericDomainError) as info:
        tn.log(tn.Tensor([1.0, 0.0]))
    assert info.value.op == "log"


def test_shape_mismatch_is_configuration_error():
    with pytest.raises(ConfigurationError):
        tn.add(tn.Tensor(np.ones((2, 3))), tn.Tensor(np.ones((4, 3))))
    with pytest.raises(ConfigurationError):
        tn.matmul(tn.Tensor(np.ones((2, 3))), tn.Tensor(np.ones((2, 3))))


def test_item_on_non_scalar_raises():
    with pytest.raises(ContractViolation):
        tn.Tensor(np.ones(2)).item()


def test_max_pool_gradient_routes_to_argmax_first_on_ties():
    x = leaf(np.array([[1.0], [3.0], [2.0], [2.0], [5.0]]))
    out = tn.max_pool_time(x, axis=0)
    np.testing.assert_array_equal(out.data.ravel(), [3.0, 2.0])
    tn.backward(tn.sum(out))
    np.testing.assert_array_equal(x.grad.ravel(), [0.0, 1.0, 1.0, 0.0, 0.0])


def test_no_grad_records_nothing():
    x = leaf(1.0)
    with tn.no_grad():
        y = x * 2.0
    assert not y.requires_grad
    assert y._parents == ()


def test_conv1d_is_causal():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((3, 2, 4))
    b = rng.standard_normal(4)
    x = rng.standard_normal((1, 12, 2))
    base = tn.conv1d_causal(x, w, b, dilation=2).data
    x2 = x.copy()
    x2[0, 7:] += 10.0
    moved = tn.conv1d_causal(x2, w, b, dilation=2).data
    np.testing.assert_array_equal(base[0, :7], moved[0, :7])
    assert not np.allclose(base[0, 7:], moved[0, 7:])


def test_conv1d_matches_direct_sum():
    rng = np.random.default_rng(2)
    K, cin, cout, T, d = 3, 2, 3, 9, 2
    w = rng.standard_normal((K, cin, cout))
    b = rng.standard_normal(cout)
    x = rng.standard_normal((T, cin))
    out = tn.conv1d_causal(x, w, b, dilation=d).data
    ref = np.tile(b, (T, 1))
    for t in range(T):
        for j in range(K):
            s = t - (K - 1 - j) * d
            if s >= 0:
                ref[t] += x[s] @ w[j]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_finite_diff_check_constant_function_is_zero():
    assert tn.finite_diff_check(lambda x: tn.Tensor(4.0), np.ones(3)) == 0.0


def test_finite_diff_check_sum_of_squares():
    x = np.random.default_rng(3).standard_normal(6)
    assert tn.finite_diff_check(lambda t: tn.sum(t * t), x) < 1e-7


def test_finite_diff_check_rejects_non_finite():
    with pytest.raises(NumericError):
        tn.finite_diff_check(lambda t: tn.sum(t) * np.inf, np.ones(2))


OPS = {
    "add": lambda x, c: tn.sum(x + c),
    "sub": lambda x, c: tn.sum(c - x * 2.0),
    "mul": lambda x, c: tn.sum(x * c * x),
    "div": lambda x, c: tn.sum(c / (x * x + 1.0)),
    "logaddexp": lambda x, c: tn.sum(tn.logaddexp(x, c)),
    "square": lambda x, c: tn.sum(tn.square(x)),
    "exp": lambda x, c: tn.mean(tn.exp(x)),
    "log": lambda x, c: tn.sum(tn.log(x * x + 0.5)),
    "sqrt": lambda x, c: tn.sum(tn.sqrt(x * x + 0.1)),
    "gelu": lambda x, c: tn.sum(tn.gelu(x) * c),
    "logsumexp": lambda x, c: tn.sum(tn.logsumexp(x * c, axis=1)),
    "amax": lambda x, c: tn.sum(tn.amax(x + c, axis=0)),
    "matmul": lambda x, c: tn.sum(tn.gelu(x @ c.data.T)),
    "transpose": lambda x, c: tn.sum(tn.transpose(x) * c.data.T),
    "getitem": lambda x, c: tn.sum(x[1:, ::2] * 3.0),
    "concat": lambda x, c: tn.sum(tn.square(tn.concat([x, x * c], axis=0))),
    "masked_fill": lambda x, c: tn.sum(tn.masked_fill(x * x, c.data > 0, 0.0)),
    "max_pool": lambda x, c: tn.sum(tn.max_pool_time(x * c, axis=0)),
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", range(10))
def test_op_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 3))
    c = tn.Tensor(rng.standard_normal((4, 3)))
    assert tn.finite_diff_check(lambda t: OPS[name](t, c), x) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_conv1d_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 7, 3))
    w = rng.standard_normal((3, 3, 2))
    b = rng.standard_normal(2)
    assert tn.finite_diff_check(lambda t: tn.sum(tn.gelu(tn.conv1d_causal(t, w, b, 2))), x) < 1e-4
    assert tn.finite_diff_check(lambda t: tn.sum(tn.gelu(tn.conv1d_causal(x, t, b, 2))), w) < 1e-4
    assert tn.finite_diff_check(lambda t: tn.sum(tn.gelu(tn.conv1d_causal(x, w, t, 2))), b) < 1e-4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8), st.lists(st.floats(-5, 5), min_size=2, max_size=8))
def test_broadcast_add_gradient_shapes(a, b):
    x = leaf(np.array(a)[:, None])
    y = leaf(np.array(b)[None, :])
    tn.backward(tn.sum(x * y))
    assert x.grad.shape == (len(a), 1)
    np.testing.assert_allclose(x.grad.ravel(), np.full(len(a), sum(b)), atol=1e-9)
    np.testing.assert_allclose(y.grad.ravel(), np.full(len(b), sum(a)), atol=1e-9)


def test_forward_is_deterministic():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 4))
    w = rng.standard_normal((3, 4, 4))
    a = tn.conv1d_causal(x, w, np.zeros(4), 2).data
    b = tn.conv1d_causal(x, w, np.zeros(4), 2).data
    assert a.tobytes() == b.tobytes()
