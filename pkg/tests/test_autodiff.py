import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rayup import autodiff as ad
from rayup.autodiff import Adam, OptimizerStateError, ParamStore, ShapeError, Tensor, grad_check


def leaf(x):
    return Tensor(x, requires_grad=True)


def test_relu_values_and_grads():
    x = leaf([-2.0, 3.0])
    y = ad.relu(x)
    assert y.data.tolist() == [0.0, 3.0]
    ad.tsum(y).backward()
    assert x.grad.tolist() == [0.0, 1.0]


def test_softmax_uniform_rows():
    x = Tensor(np.full((4, 5), 2.5))
    y = ad.softmax(x)
    np.testing.assert_allclose(y.data, 0.2, atol=1e-15)
    assert np.all(np.abs(y.data.sum(-1) - 1) < 1e-12)


def test_norm_gradient_3_4():
    x = leaf([3.0, 4.0])
    ad.norm2(x).backward()
    np.testing.assert_allclose(x.grad, [0.6, 0.8], rtol=0, atol=1e-15)


def test_sum_gives_ones():
    W = leaf(np.arange(6.0).reshape(2, 3))
    ad.tsum(W).backward()
    assert np.array_equal(W.grad, np.ones((2, 3)))


def test_squared_norm_of_matvec():
    # d/dW ||W x||^2 = 2 (W x) x^T
    W0 = np.array([[1.0, -2.0], [0.5, 3.0]])
    x = np.array([[0.7], [-1.3]])
    W = leaf(W0)
    y = ad.matmul(W, Tensor(x))
    ad.tsum(ad.square(y)).backward()
    np.testing.assert_allclose(W.grad, 2 * (W0 @ x) @ x.T, atol=1e-14)


def test_sqrt_and_abs_subgradient_zero():
    x = leaf([0.0, 4.0])
    ad.tsum(ad.sqrt(x)).backward()
    assert x.grad.tolist() == [0.0, 0.25]
    z = leaf([0.0, -2.0, 3.0])
    ad.tsum(ad.tabs(z)).backward()
    assert z.grad.tolist() == [0.0, -1.0, 1.0]
    e = leaf(0.0)
    ad.maximum0(-e).backward()
    assert e.grad == 0.0


def test_shape_errors():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ShapeError):
        leaf(np.ones(3)).backward()


def test_repeated_use_accumulates():
    x = leaf(3.0)
    y = x * x + x
    y.backward()
    assert x.grad == 7.0


def _random_graph(rng, shape):
    """A composite of most ops; returns (fn, params)."""
    ps = ParamStore()
    ps["a"] = rng.uniform(-2, 2, shape)
    ps["w"] = rng.uniform(-1, 1, (shape[-1], 4))
    ps["b"] = rng.uniform(-1, 1, (4,))
    idx = rng.integers(0, 4, size=shape[:-1] + (1,))

    def fn():
        a = ps["a"]
        h = ad.relu(ad.matmul(a, ps["w"]) + ps["b"])
        s = ad.softmax(h * 1.3 - ad.exp(h * 0.1), axis=-1)
        n = ad.norm2(ad.concat([s, a], axis=-1) + 0.1)
        g = ad.gather(h, idx, axis=-1)
        m = ad.mean(ad.sqrt(ad.square(n) + 1.0)) + ad.tsum(ad.tabs(g - 0.3))
        return m + ad.tsum(ad.maximum0(a - 0.5)) / (1.0 + ad.mean(ad.square(a)))

    return fn, ps


@pytest.mark.parametrize("seed", range(20))
def test_composite_graph_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(v) for v in rng.integers(1, 5, size=int(rng.integers(1, 3)))) + (3,)
    fn, ps = _random_graph(rng, shape)
    rep = grad_check(fn, ps, h=1e-5, tol=1e-4)
    assert rep.checked > 0
    assert rep.passed, rep.max_rel_err


def test_grad_check_linear_is_exact():
    ps = ParamStore()
    ps["w"] = np.array([1.5, -2.0, 0.25])
    x = np.array([0.3, 0.7, -1.1])
    rep = grad_check(lambda: ad.tsum(ps["w"] * x), ps, h=1e-5)
    assert rep.worst < 1e-9


def test_grad_check_skips_kink_at_zero():
    ps = ParamStore()
    ps["w"] = np.array([0.0, 1.0])
    rep = grad_check(lambda: ad.tsum(ad.relu(ps["w"])), ps, h=1e-5)
    assert rep.skipped == 1
    assert rep.checked == 1
    assert rep.passed


def test_backward_is_deterministic():
    rng = np.random.default_rng(5)
    fn, ps = _random_graph(rng, (3, 3))
    grads = []
    for _ in range(2):
        ps.zero_grad()
        fn().backward()
        grads.append({k: t.grad.copy() for k, t in ps.items()})
    for k in grads[0]:
        assert grads[0][k].tobytes() == grads[1][k].tobytes()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
def test_no_nonfinite_in_range(vals):
    x = leaf(np.array(vals))
    y = (ad.tsum(ad.sqrt(ad.tabs(x))) + ad.norm2(x) + ad.tsum(ad.softmax(x))
         + ad.tsum(ad.maximum0(x)))
    y.backward()
    assert np.isfinite(y.data).all()
    assert np.isfinite(x.grad).all()


def test_param_store_counts_and_uniqueness():
    ps = ParamStore()
    ps["mlp.layer1.weight"] = np.zeros((3, 4))
    ps["mlp.layer1.bias"] = np.zeros(4)
    assert ps.total_count == 16
    with pytest.raises(KeyError):
        ps["mlp.layer1.bias"] = np.zeros(4)


def test_adam_first_step_closed_form():
    ps = ParamStore()
    ps["x"] = np.array(1.0)
    opt = Adam(ps, lr=0.005)
    ps["x"].grad = np.array(1.0)
    opt.step()
    # bias-corrected first step moves by lr * g / (|g| + eps)
    assert ps["x"].data == pytest.approx(1.0 - 0.005 / (1.0 + 1e-8), abs=1e-15)


def test_adam_zero_gradient_decays_moments():
    ps = ParamStore()
    ps["x"] = np.array([2.0])
    opt = Adam(ps)
    ps["x"].grad = np.array([1.0])
    opt.step()
    m1, v1 = opt.m["x"].copy(), opt.v["x"].copy()
    before = ps["x"].data.copy()
    ps["x"].grad = np.array([0.0])
    opt.step()
    assert opt.m["x"][0] == pytest.approx(0.9 * m1[0])
    assert opt.v["x"][0] == pytest.approx(0.999 * v1[0])
    # zero gradient with non-zero momentum still moves; a fresh optimizer does not
    fresh = ParamStore()
    fresh["y"] = np.array([2.0])
    opt2 = Adam(fresh)
    fresh["y"].grad = np.array([0.0])
    opt2.step()
    assert fresh["y"].data[0] == 2.0
    assert before[0] != ps["x"].data[0]


def test_adam_epoch_decay_geometric():
    ps = ParamStore()
    ps["x"] = np.array(0.0)
    opt = Adam(ps, lr=0.005, decay=0.99)
    for _ in range(10):
        opt.epoch_decay()
    assert opt.lr == pytest.approx(0.005 * 0.99 ** 10, rel=1e-14)


def test_adam_without_gradients_raises():
    ps = ParamStore()
    ps["x"] = np.array(0.0)
    with pytest.raises(OptimizerStateError):
        Adam(ps).step()
