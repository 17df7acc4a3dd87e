import numpy as np
import pytest

from ncrecon import autodiff as ad
from ncrecon.core import complex_to_channels, l1_norm


def central(f, arr, idx, h):
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * h)


def numeric_grad(f, arr, h=1e-3):
    """Central differences plus a mask of entries whose +-h step avoids ReLU kinks.

    Smooth entries give step-h and step-h/10 estimates that agree to O(h^2);
    a kink inside the stencil changes the estimate by O(1).
    """
    g = np.zeros_like(arr)
    smooth = np.ones(arr.shape, dtype=bool)
    for idx in np.ndindex(arr.shape):
        g[idx] = central(f, arr, idx, h)
        fine = central(f, arr, idx, h / 10)
        smooth[idx] = abs(g[idx] - fine) <= 1e-4 * max(abs(fine), 1.0)
    return g, smooth


def random_graph(seed):
    """A small random differentiable graph; returns (loss_fn, params)."""
    rng = np.random.default_rng(seed)
    x = ad.parameter(rng.standard_normal((2, 6, 6)))
    w1 = ad.parameter(rng.standard_normal((3, 2, 3, 3)) * 0.5)
    b1 = ad.parameter(rng.standard_normal(3))
    w2 = ad.parameter(rng.standard_normal((2, 5, 3, 3)) * 0.5)
    s = ad.parameter(rng.standard_normal(1))
    target = rng.standard_normal((2, 6, 6))
    variant = seed % 4

    def loss():
        h = ad.conv2d(x, w1, b1)
        h = ad.relu(h) if variant != 1 else ad.scale(h, 0.7)
        if variant == 2:
            h = ad.upsample2(ad.avg_pool2(h))
        z = ad.conv2d(ad.concat([h, x]), w2)
        z = ad.mul(z, s) if variant != 3 else ad.mul(ad.mul(z, x), s)
        d = ad.sub(ad.add(z, x), ad.constant(target))
        return ad.add(ad.square_sum(d), ad.scale(ad.sum_all(z), 0.3))

    return loss, [x, w1, b1, w2, s]


@pytest.mark.parametrize("seed", range(20))
def test_random_graph_gradients_match_finite_differences(seed):
    loss, params = random_graph(seed)
    out = loss()
    out.backward()
    for p in params:
        num, smooth = numeric_grad(lambda: float(loss().value), p.value)
        assert smooth.mean() >= 0.95
        ref = num[smooth]
        err = np.linalg.norm(p.grad[smooth] - ref) / max(np.linalg.norm(ref), 1e-12)
        assert err <= 1e-4, (p.shape, err)


def test_relu_backward():
    x = ad.parameter(np.array([-1.0, 2.0, -0.5, 3.0]))
    ad.sum_all(ad.relu(x)).backward()
    assert np.array_equal(x.grad, [0, 1, 0, 1])


def test_conv_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 5, 7))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = w[1, 1, 1, 1] = 1
    out = ad.conv2d(ad.constant(x), ad.constant(w)).value
    assert np.array_equal(out, x)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 4, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = ad.conv2d(ad.constant(x), ad.constant(w), ad.constant(b)).value
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 4, 5))
    for o in range(3):
        for i in range(4):
            for j in range(5):
                ref[o, i, j] = np.sum(w[o] * xp[:, i:i + 3, j:j + 3]) + b[o]
    assert np.allclose(out, ref)


def test_l1_sign_convention():
    r = ad.parameter(np.array([3.0, -2.0, 0.0]))
    ad.l1_loss(r).backward()
    assert np.array_equal(r.grad, [1, -1, 0])


def test_l1_matches_core_norm():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    ch = complex_to_channels(z)
    assert float(ad.l1_loss(ad.constant(ch)).value) == pytest.approx(l1_norm(ch), rel=1e-6)


def test_linear_primitive_uses_adjoint():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((5, 4))
    x = ad.parameter(rng.standard_normal(4))
    ad.sum_all(ad.linear(x, lambda v: a @ v, lambda g: a.T @ g)).backward()
    assert np.allclose(x.grad, a.T @ np.ones(5))


def test_gradients_accumulate_over_shared_use():
    x = ad.parameter(np.array([2.0]))
    ad.add(ad.mul(x, x), x).backward()
    assert x.grad[0] == pytest.approx(5.0)


def test_backward_errors():
    x = ad.parameter(np.ones(3))
    with pytest.raises(ValueError):
        ad.relu(x).backward()
    with pytest.raises(RuntimeError):
        ad.parameter(np.ones(1)).backward()
    out = ad.sum_all(x)
    out.backward()
    with pytest.raises(RuntimeError):
        out.backward()


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        ad.add(ad.constant(np.ones(3)), ad.constant(np.ones(4)))


def test_param_store_bookkeeping():
    store = ad.ParamStore()
    store.add("a", np.ones((2, 3)))
    store.add("b", np.zeros(4))
    assert store.n_parameters() == 10
    with pytest.raises(KeyError):
        store.add("a", np.ones(1))
    with pytest.raises(ValueError):
        store.load_state({"a": np.ones(3)})
    assert store.m["a"].shape == (2, 3) and store.step == 0


def test_adam_first_step_is_signed_lr():
    store = ad.ParamStore()
    p = store.add("p", np.array([1.0, 1.0, 1.0]))
    p.grad = np.array([0.3, -5.0, 1e-3])
    ad.adam_step(store, lr=0.01)
    delta = p.value - 1.0
    assert np.allclose(delta, -0.01 * np.sign([0.3, -5.0, 1e-3]), atol=1e-6)
    assert p.grad is None


def test_adam_zero_grad_no_change():
    store = ad.ParamStore()
    p = store.add("p", np.array([1.5, -2.0]))
    ad.adam_step(store, lr=0.1)
    assert np.array_equal(p.value, [1.5, -2.0]) and store.step == 1


def test_adam_quadratic():
    rng = np.random.default_rng(0)
    a = np.diag(rng.uniform(0.5, 2.0, 5))
    store = ad.ParamStore()
    p = store.add("p", rng.standard_normal(5))

    def loss():
        return 0.5 * p.value @ a @ p.value

    start = loss()
    for _ in range(200):
        p.grad = a @ p.value
        ad.adam_step(store, lr=1e-2)
    assert loss() <= start / 100


def test_adam_rejects_non_finite():
    store = ad.ParamStore()
    p = store.add("p", np.ones(2))
    p.grad = np.array([np.nan, 1.0])
    with pytest.raises(FloatingPointError, match="'p'"):
        ad.adam_step(store, lr=1e-3)
