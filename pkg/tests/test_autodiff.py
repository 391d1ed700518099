import numpy as np
import pytest

from skelgraph.autodiff import (
    SGD,
    DiffArray,
    Tape,
    abs_,
    adaptive_avg_pool2d,
    backward,
    batch_norm,
    concat,
    conv2d,
    cosine_similarity,
    getitem,
    gradient_check,
    graph_aggregate,
    mean,
    no_grad,
    power,
    prelu,
    reshape,
    sgd_step,
    square,
    sum_,
    transpose,
    vector_norm,
)
from skelgraph.autodiff import nn as nn_mod

from gradcases import PRIMITIVES, build_case
from skelgraph.errors import DimensionError, NumericError, ParameterError, UsageError


def leaf(x, name=None):
    return DiffArray(np.asarray(x, dtype=np.float64), requires_grad=True, name=name)


def brute_conv(x, w, b, padding, stride):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[ni, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[ni, oi, i, j] = (patch * w[oi]).sum() + (0 if b is None else b[oi])
    return out


# -- conv2d ---------------------------------------------------------------------------

def test_conv2d_center_tap():
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 0.5
    out = conv2d(np.full((1, 1, 1, 1), 2.0), w, padding=1)
    assert out.data.shape == (1, 1, 1, 1)
    assert out.data[0, 0, 0, 0] == 1.0


def test_conv2d_delta_kernel_is_identity():
    x = np.random.default_rng(0).normal(size=(2, 1, 5, 4))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(conv2d(x, w, padding=1).data, x)


def test_conv2d_ones_matches_bruteforce():
    x, w = np.ones((1, 1, 2, 2)), np.ones((1, 1, 3, 3))
    out = conv2d(x, w, padding=1).data
    np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 4.0))
    np.testing.assert_array_equal(out, brute_conv(x, w, None, 1, 1))


@pytest.mark.parametrize("seed", range(8))
def test_conv2d_random_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.choice([1, 3]))
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    np.testing.assert_allclose(conv2d(x, w, b, padding, stride).data, brute_conv(x, w, b, padding, stride),
                               rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv2d_same_padding_preserves_size(k):
    x = np.zeros((1, 2, 7, 9))
    assert conv2d(x, np.zeros((3, 2, k, k)), padding=(k - 1) // 2).shape == (1, 3, 7, 9)


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError):
        conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))


# -- batch_norm -----------------------------------------------------------------------

def bn1(values, beta=0.0, eps=0.0):
    x = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    return batch_norm(x, np.ones(1), np.full(1, beta), eps=eps, train=True).data.ravel()


def test_batch_norm_examples():
    np.testing.assert_allclose(bn1([1, 3]), [-1, 1])
    np.testing.assert_allclose(bn1([1, 3], beta=5), [4, 6])
    assert np.all(np.abs(bn1([7, 7, 7], eps=1e-5)) < 1e-2)


def test_batch_norm_negative_eps():
    with pytest.raises(ParameterError):
        bn1([1, 2], eps=-1e-5)


def test_batch_norm_train_statistics():
    rng = np.random.default_rng(1)
    x = rng.normal(3.0, 2.0, size=(4, 3, 5, 6))
    out = batch_norm(x, np.ones(3), np.zeros(3), train=True).data
    mu = out.mean(axis=(0, 2, 3))
    var = out.var(axis=(0, 2, 3))
    assert np.all(np.abs(mu) < 1e-6)
    expected = x.var(axis=(0, 2, 3)) / (x.var(axis=(0, 2, 3)) + 1e-5)
    np.testing.assert_allclose(var, expected, atol=1e-5)


def test_batch_norm_running_stats_and_eval():
    x = np.arange(8, dtype=np.float64).reshape(4, 2)
    running = {"mean": np.zeros(2), "var": np.ones(2)}
    batch_norm(x, np.ones(2), np.zeros(2), train=True, running=running)
    np.testing.assert_allclose(running["mean"], 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(running["var"], 0.9 + 0.1 * x.var(axis=0))
    out = batch_norm(x, np.ones(2), np.zeros(2), train=False, running=running).data
    np.testing.assert_allclose(out, (x - running["mean"]) / np.sqrt(running["var"] + 1e-5))


# -- prelu, cosine ---------------------------------------------------------------------

def test_prelu_examples():
    s = np.array([0.25])
    assert prelu(np.array([[2.0]]), s).data[0, 0] == 2.0
    assert prelu(np.array([[-2.0]]), s).data[0, 0] == -0.5


def test_prelu_slope_gradient():
    slope = leaf([0.25])
    backward(sum_(prelu(np.array([[-1.0]]), slope)))
    assert slope.grad[0] == pytest.approx(-1.0)
    h = 1e-6
    fd = (prelu(np.array([[-1.0]]), np.array([0.25 + h])).data - prelu(np.array([[-1.0]]), np.array([0.25 - h])).data)
    assert fd.item() / (2 * h) == pytest.approx(-1.0, abs=1e-8)


@pytest.mark.parametrize("a,b,expected", [
    ((1, 0, 0), (0, 1, 0), 0.0),
    ((1, 2, 2), (1, 2, 2), 1.0),
    ((1, 0, 0), (1, 1, 0), 0.70711),
])
def test_cosine_examples(a, b, expected):
    assert cosine_similarity(np.array(a, float), np.array(b, float)).item() == pytest.approx(expected, abs=1e-5)


def test_cosine_zero_vector_is_zero_with_zero_grad():
    a, b = leaf([0.0, 0.0, 0.0]), leaf([1.0, 2.0, 3.0])
    c = cosine_similarity(a, b)
    assert c.item() == 0.0
    backward(c)
    np.testing.assert_array_equal(a.grad, 0)
    np.testing.assert_array_equal(b.grad, 0)


def test_cosine_scale_invariance():
    rng = np.random.default_rng(2)
    for _ in range(200):
        a, b = rng.normal(size=3), rng.normal(size=3)
        s = float(np.exp(rng.uniform(-5, 5)))
        assert cosine_similarity(s * a, b).item() == pytest.approx(cosine_similarity(a, b).item(), abs=1e-12)


def test_vector_norm_zero_gradient_at_origin():
    x = leaf(np.zeros((2, 3)))
    backward(sum_(vector_norm(x)))
    np.testing.assert_array_equal(x.grad, 0)


# -- backward -------------------------------------------------------------------------

def test_backward_sum_of_squares():
    x = leaf([1.0, 2.0])
    backward(sum_(x * x))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_constant_function():
    x = leaf([1.0, 2.0])
    y = sum_(x * 0.0) + 3.0
    backward(y)
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])


def test_backward_accumulates_and_rejects_nonscalar():
    x = leaf([1.0, 2.0])
    backward(sum_(x * x))
    backward(sum_(x * x))
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    with pytest.raises(UsageError):
        backward(x * x)


def test_backward_composite_conv_prelu_sum():
    rng = np.random.default_rng(3)
    x = leaf(rng.normal(size=(1, 2, 4, 4)), "x")
    w = leaf(rng.normal(size=(3, 2, 3, 3)), "w")
    b = leaf(rng.normal(size=3), "b")
    s = leaf([0.2], "slope")
    rep = gradient_check(lambda: sum_(prelu(conv2d(x, w, b, padding=1), s)), [x, w, b, s])
    assert rep.passed, str(rep)


def test_tape_backward_and_clear():
    x = leaf([1.0, -2.0, 3.0])
    with Tape() as tape:
        y = sum_(square(x) * x)
    assert len(tape) >= 2
    backward(y, tape)
    np.testing.assert_allclose(x.grad, 3 * x.data ** 2)
    tape.clear()
    assert len(tape) == 0
    assert y._parents == () and y._backward is None


def test_shared_subexpression_dag_against_path_oracle():
    # x -> a = x*y ; b = a + x ; c = a*b ; loss = sum(c + b)
    rng = np.random.default_rng(4)
    xv, yv = rng.normal(size=3), rng.normal(size=3)
    x, y = leaf(xv), leaf(yv)
    a = x * y
    b = a + x
    c = a * b
    loss = sum_(c + b)
    backward(loss)
    # sum over every path from loss to each leaf of the product of local derivatives
    av, bv = xv * yv, xv * yv + xv
    d_loss_c, d_loss_b_direct = 1.0, 1.0
    d_c_a, d_c_b = bv, av
    d_b_a, d_b_x = 1.0, 1.0
    d_a_x, d_a_y = yv, xv
    paths_x = (d_loss_c * d_c_a * d_a_x
               + d_loss_c * d_c_b * d_b_a * d_a_x
               + d_loss_c * d_c_b * d_b_x
               + d_loss_b_direct * d_b_a * d_a_x
               + d_loss_b_direct * d_b_x)
    paths_y = (d_loss_c * d_c_a * d_a_y
               + d_loss_c * d_c_b * d_b_a * d_a_y
               + d_loss_b_direct * d_b_a * d_a_y)
    np.testing.assert_allclose(x.grad, paths_x, rtol=1e-12)
    np.testing.assert_allclose(y.grad, paths_y, rtol=1e-12)


def test_nonfinite_output_raises_naming_primitive():
    with pytest.raises(NumericError, match="div"):
        leaf([1.0]) / np.array([0.0])


def test_no_grad_builds_no_graph():
    x = leaf([1.0])
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


# -- sgd ------------------------------------------------------------------------------

def test_sgd_step_examples():
    p = leaf([1.0], "p")
    p.grad = np.array([0.5])
    sgd_step([p], 0.1)
    assert p.data[0] == pytest.approx(0.95)
    q = leaf([1.0], "q")
    q.grad = np.array([0.0])
    sgd_step([q], 0.1)
    assert q.data[0] == 1.0


def test_sgd_two_steps_equal_one_double_step():
    p1, p2 = leaf([0.3, -1.2], "a"), leaf([0.3, -1.2], "a")
    g = np.array([0.7, 0.1])
    p1.grad, p2.grad = g, g
    sgd_step([p1], 0.05)
    sgd_step([p1], 0.05)
    sgd_step([p2], 0.1)
    np.testing.assert_allclose(p1.data, p2.data, rtol=1e-15)


def test_sgd_missing_gradient():
    with pytest.raises(UsageError):
        sgd_step([leaf([1.0], "p")], 0.1)
    with pytest.raises(UsageError):
        SGD({"p": leaf([1.0])}).step(0.1)


def test_sgd_clip_norm():
    p = leaf([0.0, 0.0])
    p.grad = np.array([3.0, 4.0])
    norm = SGD({"p": p}, clip_norm=1.0).step(1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose(p.data, [-0.6, -0.8])


# -- gradient_check ---------------------------------------------------------------------

def test_gradient_check_quadratic_form():
    rng = np.random.default_rng(5)
    m = rng.normal(size=(4, 4))
    q = m @ m.T
    x = leaf(rng.normal(size=(4, 1)), "x")
    qd = DiffArray(q)

    def f():
        rows = [sum_(getitem(qd, (i, slice(None))).reshape(4, 1) * x) for i in range(4)]
        qx = concat([r.reshape(1, 1) for r in rows], axis=0)
        return sum_(x * qx)

    rep = gradient_check(f, [x])
    assert rep.passed and rep.max_rel_error < 1e-8, str(rep)


def test_gradient_check_detects_flipped_conv_kernel(monkeypatch):
    rng = np.random.default_rng(6)
    x = leaf(rng.normal(size=(1, 2, 5, 5)), "x")
    w = leaf(rng.normal(size=(2, 2, 3, 3)), "w")

    def f():
        return sum_(square(conv2d(x, w, padding=1)))

    assert gradient_check(f, [x, w]).passed
    original = nn_mod._conv2d_input_grad
    monkeypatch.setattr(nn_mod, "_conv2d_input_grad",
                        lambda g, k, shape, p, s: original(g, k[:, :, ::-1, ::-1], shape, p, s))
    rep = gradient_check(f, [x, w])
    assert not rep.passed
    assert [c.name for c in rep.checks if not c.passed] == ["x"]


def test_gradient_check_reports_nonfinite_primitive():
    x = leaf([1.0, 0.0], "x")
    rep = gradient_check(lambda: sum_(DiffArray([1.0, 1.0]) / x), [x])
    assert not rep.passed and "div" in rep.failure


# -- randomized primitive finite-difference suite (>= 100 trials) ----------------------------

@pytest.mark.parametrize("seed", range(7))
@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_gradients_random(name, seed):
    rng = np.random.default_rng(1000 * PRIMITIVES.index(name) + seed)
    fn, params = build_case(name, rng)
    rep = gradient_check(fn, params, tolerance=1e-4)
    assert rep.passed, str(rep)


def test_adaptive_pool_exact_divisible():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    out = adaptive_avg_pool2d(x, (2, 2)).data
    np.testing.assert_allclose(out[0, 0], [[2.5, 4.5], [10.5, 12.5]])
