import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from autovocoder.autograd import (BatchNorm2d, GraphStateError, Linear, Parameter, Tensor,
                                  grad_check, kernels, no_grad, ops)


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------- examples
def test_linear_closed_form():
    W = Parameter(np.array([[2.0]]))
    b = Parameter(np.array([1.0]))
    y = ops.linear(Tensor(np.array([3.0])), W, b)
    assert y.data.tolist() == [7.0]
    ops.sum(y).backward()
    assert W.grad.tolist() == [[3.0]]
    assert b.grad.tolist() == [1.0]


def test_relu_and_mask():
    x = t64([-1.0, 0.0, 2.0])
    y = ops.relu(x)
    assert y.data.tolist() == [0.0, 0.0, 2.0]
    ops.sum(y).backward()
    assert x.grad.tolist() == [0.0, 0.0, 1.0]


def test_identity_kernel_conv():
    x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    y = ops.conv2d(x, Parameter(w), None)
    np.testing.assert_array_equal(y.data, x.data)


def test_sum_of_squares_grad():
    x = t64([1.0, 2.0, 3.0])
    ops.sum(ops.mul(x, x)).backward()
    assert x.grad.tolist() == [2.0, 4.0, 6.0]


def test_independent_graphs_accumulate():
    x = t64([1.0, 2.0])
    ops.sum(ops.mul(x, 3.0)).backward()
    ops.sum(ops.square(x)).backward()
    assert x.grad.tolist() == [3.0 + 2.0, 3.0 + 4.0]


def test_chain_linear_relu_sum_matches_fd():
    rng = np.random.default_rng(0)
    lin = Linear(5, 4, rng).astype(np.float64)
    x = t64(rng.standard_normal((3, 5)))
    assert grad_check(lambda t: ops.sum(ops.relu(lin(t))), x, eps=1e-6) < 1e-4
    assert grad_check(lambda _: ops.sum(ops.relu(lin(x))), lin.weight, eps=1e-6) < 1e-4


def test_backward_errors():
    with pytest.raises(ValueError):
        ops.mul(t64([1.0, 2.0]), 2.0).backward()
    with pytest.raises(GraphStateError):
        Tensor(np.array(1.0)).backward()
    x = t64([1.0, 2.0])
    loss = ops.sum(ops.square(x))
    loss.backward()
    with pytest.raises(GraphStateError):
        loss.backward()


def test_shape_mismatch_raises():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        Linear(3, 2, rng)(Tensor(np.ones((2, 4))))
    with pytest.raises(ValueError):
        ops.conv2d(Tensor(np.ones((1, 2, 4, 4))), Parameter(np.ones((1, 3, 3, 3))))


def test_no_grad_records_nothing():
    x = t64([1.0])
    with no_grad():
        y = ops.mul(x, 2.0)
    assert not y.requires_grad and y._ctx is None


def test_grad_check_exact_polynomial():
    x = t64(np.random.default_rng(1).standard_normal(6))
    assert grad_check(lambda t: ops.sum(ops.square(t)), x) < 1e-8


def test_grad_check_refines_step_near_kink():
    f = lambda t: ops.sum(ops.abs(t))  # noqa: E731
    x = t64([5e-7])
    # eps=1e-6 straddles the kink at 0: central difference is 0.5, true slope 1
    assert grad_check(f, x, eps=1e-6) == pytest.approx(0.5)
    assert grad_check(f, x, eps=1e-6, refine=1, tol=1e-3) < 1e-6


def test_grad_check_rejects_non_scalar():
    with pytest.raises(ValueError):
        grad_check(lambda t: ops.square(t), t64([1.0, 2.0]))


# -------------------------------------------------------- per-op gradients
RNG = np.random.default_rng(42)


def _away_from_zero(shape):
    x = RNG.standard_normal(shape)
    return x + 0.1 * np.sign(x)


_C0 = t64(RNG.standard_normal((1, 4)), False)
_C1 = t64(RNG.standard_normal(4), False)
_C2 = t64(RNG.standard_normal((3, 4)), False)
_C3 = t64(RNG.standard_normal((4, 3)), False)
_C4 = t64(RNG.standard_normal((2, 12)), False)
_C5 = t64(RNG.standard_normal((3, 8)), False)
_C6 = t64(RNG.standard_normal((4, 3, 5)), False)
_C7 = t64(RNG.standard_normal((2, 3, 5)), False)
_P = RNG.standard_normal((2, 3))

OP_CASES = {
    "add_broadcast": (lambda t: ops.sum(ops.square(ops.add(t, _C0))), (3, 4)),
    "sub": (lambda t: ops.sum(ops.square(ops.sub(1.5, t))), (3, 4)),
    "mul_broadcast": (lambda t: ops.sum(ops.mul(t, _C1)), (3, 4)),
    "abs": (lambda t: ops.sum(ops.abs(t)), None),
    "square": (lambda t: ops.sum(ops.square(t)), (3, 4)),
    "mean_axis": (lambda t: ops.sum(ops.square(ops.mean(t, axis=1))), (3, 4)),
    "log": (lambda t: ops.sum(ops.log(ops.add(ops.square(t), 1.0))), (3, 4)),
    "relu": (lambda t: ops.sum(ops.mul(ops.relu(t), _C2)), None),
    "leaky_relu": (lambda t: ops.sum(ops.square(ops.leaky_relu(t, 0.1))), None),
    "transpose": (lambda t: ops.sum(ops.mul(ops.transpose(t, (1, 0)), _C3)), (3, 4)),
    "getitem": (lambda t: ops.sum(ops.square(t[1:, ::2])), (3, 4)),
    "concat": (lambda t: ops.sum(ops.square(ops.concat([t, ops.mul(t, 2.0)], axis=1))), (3, 4)),
    "pad_reflect": (lambda t: ops.sum(ops.mul(ops.pad_last(t, 3, 2, "reflect"), _C4)), (2, 7)),
    "frame": (lambda t: ops.sum(ops.square(ops.frame(t, 4, 2))), (2, 11)),
    "overlap_add": (lambda t: ops.sum(ops.square(ops.overlap_add(t, 3))), (2, 5, 8)),
    "rdft": (lambda t: ops.sum(ops.square(ops.rdft(t))), (3, 8)),
    "irdft": (lambda t: ops.sum(ops.mul(ops.irdft(t, 8), _C5)), (3, 2, 5)),
    "avg_pool1d": (lambda t: ops.sum(ops.square(ops.avg_pool1d(t, 4, 2, 2))), (2, 13)),
    "complex_to_stack": (lambda t: ops.sum(ops.mul(ops.complex_to_stack(t), _C6)), (2, 3, 5)),
    "stack_polar": (lambda t: ops.sum(ops.mul(ops.stack_to_complex(t, "polar"), _C7)), (2, 3, 5)),
    "stack_mean4": (lambda t: ops.sum(ops.mul(ops.stack_to_complex(t, "mean4"), _C7)), (4, 3, 5)),
    "magnitude": (lambda t: ops.sum(ops.magnitude(t)), (2, 3, 5)),
    "project": (lambda t: ops.sum(ops.square(ops.project(_P, t))), (3, 5)),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradient_matches_fd(name):
    f, shape = OP_CASES[name]
    x = t64(_away_from_zero(shape if shape else (3, 4)))
    assert grad_check(f, x, eps=1e-6) < 1e-4


@pytest.fixture(params=["loops", "gemm"])
def conv_path(request, monkeypatch):
    monkeypatch.setattr(kernels, "GEMM_MIN_WEIGHT", 10 ** 9 if request.param == "loops" else 1)
    return request.param


@pytest.mark.parametrize("stride", [(1, 1), (1, 3), (2, 2)])
def test_conv2d_gradients(stride, conv_path):
    rng = np.random.default_rng(3)
    x = t64(rng.standard_normal((2, 3, 5, 9)))
    w = Parameter(rng.standard_normal((4, 3, 3, 3)))
    b = Parameter(rng.standard_normal(4))
    proj = rng.standard_normal(ops.conv2d(x, w, b, stride, (1, 1)).shape)
    f = lambda _: ops.sum(ops.mul(ops.conv2d(x, w, b, stride, (1, 1)), Tensor(proj)))  # noqa: E731
    for target in (x, w, b):
        assert grad_check(f, target, eps=1e-6) < 1e-4


def test_conv2d_matches_direct_sum(conv_path):
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 2, 4, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    out = ops.conv2d(Tensor(x), Parameter(w), None, (1, 2), (1, 1)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for o in range(3):
        for h in range(out.shape[2]):
            for j in range(out.shape[3]):
                ref = np.sum(w[o] * xp[0, :, h:h + 3, 2 * j:2 * j + 3])
                assert out[0, o, h, j] == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradients(training):
    rng = np.random.default_rng(5)
    bn = BatchNorm2d(3).astype(np.float64)
    bn.gamma.data = rng.standard_normal(3) + 1.0
    bn.running_mean[:] = rng.standard_normal(3)
    bn.running_var[:] = rng.uniform(0.5, 2.0, 3)
    bn.train(training)
    x = t64(rng.standard_normal((2, 3, 4, 5)))
    proj = Tensor(rng.standard_normal((2, 3, 4, 5)))
    f = lambda _: ops.sum(ops.mul(bn(x), proj))  # noqa: E731
    for target in (x, bn.gamma, bn.beta):
        assert grad_check(f, target, eps=1e-6) < 1e-4


def test_batchnorm_running_stats_momentum():
    bn = BatchNorm2d(1)
    x = np.arange(8, dtype=np.float32).reshape(2, 1, 2, 2)
    bn(Tensor(x))
    assert bn.running_mean[0] == pytest.approx(0.1 * 3.5)
    assert bn.running_var[0] == pytest.approx(0.9 + 0.1 * x.var(ddof=1), rel=1e-6)


def test_batchnorm_eval_is_deterministic_affine():
    rng = np.random.default_rng(6)
    bn = BatchNorm2d(2).astype(np.float64)
    bn.running_mean[:] = [0.5, -1.0]
    bn.running_var[:] = [2.0, 0.25]
    bn.eval()
    a, b = rng.standard_normal((2, 1, 2, 3, 3))
    fa, fb, fab = (bn(Tensor(v)).data for v in (a, b, 0.3 * a + 0.7 * b))
    np.testing.assert_allclose(fab, 0.3 * fa + 0.7 * fb, atol=1e-12)
    np.testing.assert_array_equal(bn(Tensor(a)).data, fa)


def test_dropout_eval_identity_and_unbiased():
    x = Tensor(np.ones(20_000))
    assert ops.dropout(x, 0.3, None, training=False) is x
    rng = np.random.default_rng(7)
    p = 0.3
    y = ops.dropout(x, p, rng, training=True).data
    # mean of 2e4 inverted-dropout samples: std = sqrt(p / (1 - p) / n)
    sigma = np.sqrt(p / (1 - p) / x.size)
    assert abs(y.mean() - 1.0) < 3 * sigma
    assert set(np.unique(y)) <= {0.0, 1.0 / (1 - p)}


def test_dropout_p1_zeroes():
    y = ops.dropout(Tensor(np.ones(5)), 1.0, None, training=True)
    assert not y.data.any()


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9).map(lambda k: 2 * k), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_rdft_adjoint_identity(n, rows, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((rows, n))
    y = rng.standard_normal((rows, 2, n // 2 + 1))
    xt = t64(x)
    fwd = ops.rdft(xt)
    ops.sum(ops.mul(fwd, Tensor(y))).backward()
    lhs = np.sum(fwd.data * y)
    rhs = np.sum(x * xt.grad)
    assert lhs == pytest.approx(rhs, rel=1e-6, abs=1e-6)


def test_irdft_inverts_rdft():
    x = np.random.default_rng(8).standard_normal((3, 16))
    back = ops.irdft(ops.rdft(Tensor(x)), 16).data
    np.testing.assert_allclose(back, x, atol=1e-12)
