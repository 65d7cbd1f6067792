import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from misc_rl.ndmath import (
    AdamState,
    DivergenceError,
    Mlp,
    adam_step,
    backward,
    forward,
    make_rng,
    polyak_update,
)

from conftest import central_diff, rel_err


def _reference_forward(net, x):
    # independent oracle: explicit loops, no shared kernels
    h = list(x)
    for w, b, act in zip(net.weights, net.biases, net.activations):
        out = []
        for j in range(w.shape[0]):
            s = b[j]
            for i in range(w.shape[1]):
                s += w[j, i] * h[i]
            if act == "relu":
                s = max(s, 0.0)
            elif act == "tanh":
                s = np.tanh(s)
            out.append(s)
        h = out
    return np.array(h)


def test_identity_layer_forward():
    net = Mlp([2, 2], ["identity"])
    net.weights[0][...] = np.eye(2)
    y, _ = forward(net, np.array([1.0, 2.0]))
    assert np.array_equal(y, [1.0, 2.0])


def test_relu_clamps_negative():
    net = Mlp([1, 2], ["relu"])
    net.weights[0][...] = [[1.0], [-1.0]]
    y, _ = forward(net, np.array([3.0]))
    assert np.array_equal(y, [3.0, 0.0])


def test_two_layer_forward_matches_loop_oracle():
    net = Mlp([4, 6, 3], ["relu", "tanh"], make_rng(0))
    x = np.array([0.3, -1.2, 0.7, 2.0])
    y, _ = forward(net, x)
    np.testing.assert_allclose(y, _reference_forward(net, x), rtol=0, atol=1e-12)


def test_batch_forward_matches_rowwise(small_net, rng):
    x = rng.normal(size=(7, 3))
    yb, _ = forward(small_net, x)
    for i in range(7):
        np.testing.assert_allclose(yb[i], forward(small_net, x[i])[0], atol=1e-14)


def test_forward_dimension_mismatch_names_shapes(small_net):
    with pytest.raises(ValueError, match=r"\(1, 4\).*3"):
        forward(small_net, np.zeros(4))


def test_linear_layer_weight_gradient_is_outer_product():
    net = Mlp([3, 2], ["identity"], make_rng(1))
    x = np.array([0.5, -1.0, 2.0])
    _, cache = forward(net, x)
    grads, _ = backward(net, cache, np.array([1.0, 0.0]))
    gw, gb = net.unflatten(grads)
    np.testing.assert_allclose(gw[0], np.outer([1.0, 0.0], x))
    np.testing.assert_allclose(gb[0], [1.0, 0.0])


def test_zero_grad_out_gives_zero_gradients(small_net, rng):
    x = rng.normal(size=(4, 3))
    _, cache = forward(small_net, x)
    grads, gin = backward(small_net, cache, np.zeros((4, 2)))
    assert not grads.any() and not gin.any()


def test_stale_cache_rejected(small_net):
    _, cache = forward(small_net, np.zeros(3))
    small_net.touch()
    with pytest.raises(ValueError, match="stale"):
        backward(small_net, cache, np.zeros(2))
    other = small_net.copy()
    with pytest.raises(ValueError, match="stale"):
        backward(other, cache, np.zeros(2))


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    depth=st.integers(1, 3),
    width=st.integers(1, 6),
    act=st.sampled_from(["relu", "tanh", "identity"]),
)
def test_backward_matches_finite_differences(seed, depth, width, act):
    rng = make_rng(seed)
    sizes = [int(rng.integers(1, 5))] + [width] * depth + [int(rng.integers(1, 4))]
    acts = [act] * depth + ["identity"]
    net = Mlp(sizes, acts, rng)
    x = rng.normal(size=(3, sizes[0]))
    c = rng.normal(size=(3, sizes[-1]))

    def loss():
        return float(np.sum(c * forward(net, x)[0]))

    _, cache = forward(net, x)
    grads, gin = backward(net, cache, c)
    fd = central_diff(loss, net.params)
    # relu kinks make FD meaningless within h of zero pre-activation
    assert np.all((rel_err(grads, fd) < 1e-4) | (np.abs(grads - fd) < 1e-8))
    fdx = central_diff(loss, x.reshape(-1)).reshape(x.shape)
    assert np.all((rel_err(gin, fdx) < 1e-4) | (np.abs(gin - fdx) < 1e-8))


def test_adam_first_step_moves_by_lr():
    p = np.array([0.0])
    st_ = AdamState.like(p, learning_rate=0.1)
    adam_step(p, np.array([1.0]), st_)
    # m_hat = 1, v_hat = 1 => step = lr / (1 + eps)
    assert p[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
    assert st_.step == 1


def test_adam_zero_grad_leaves_params_and_decays_moments():
    p = np.array([1.0, -2.0])
    st_ = AdamState.like(p)
    st_.m[...] = [0.5, 0.5]
    st_.v[...] = [0.25, 0.25]
    adam_step(p, np.zeros(2), st_)
    # the update uses the decayed moment, so params move unless moments were zero
    st2 = AdamState.like(p)
    q = p.copy()
    adam_step(q, np.zeros(2), st2)
    assert np.array_equal(q, p)
    np.testing.assert_allclose(st_.m, [0.45, 0.45])
    np.testing.assert_allclose(st_.v, [0.25 * 0.999] * 2)


def test_adam_constant_gradient_descends_monotonically():
    p = np.array([0.0])
    st_ = AdamState.like(p, learning_rate=1e-3)
    prev = p[0]
    for _ in range(1000):
        adam_step(p, np.array([1.0]), st_)
        assert p[0] < prev
        prev = p[0]
    assert st_.step == 1000


def test_adam_rejects_non_finite():
    p = np.zeros(2)
    with pytest.raises(DivergenceError):
        adam_step(p, np.array([np.nan, 0.0]), AdamState.like(p))


def test_polyak_examples():
    t = np.array([1.0])
    assert polyak_update(t.copy(), np.array([0.0]), 0.95)[0] == pytest.approx(0.95)
    assert polyak_update(t.copy(), np.array([0.0]), 1.0)[0] == 1.0
    assert polyak_update(t.copy(), np.array([0.3]), 0.0)[0] == 0.3
    with pytest.raises(ValueError):
        polyak_update(np.zeros(2), np.zeros(3), 0.5)
    with pytest.raises(ValueError):
        polyak_update(np.zeros(2), np.zeros(2), 1.5)


def test_same_seed_same_parameters():
    a = Mlp([4, 64, 64, 1], ["relu", "relu", "identity"], make_rng(7))
    b = Mlp([4, 64, 64, 1], ["relu", "relu", "identity"], make_rng(7))
    assert a.params.tobytes() == b.params.tobytes()


def test_layer_roundtrip(small_net):
    clone = Mlp.from_layers(small_net.to_layers())
    assert clone.params.tobytes() == small_net.params.tobytes()
    assert clone.activations == small_net.activations


def test_layers_must_chain():
    layers = [{"w": [[1.0, 2.0]], "b": [0.0], "act": "relu"}, {"w": [[1.0, 2.0]], "b": [0.0], "act": "identity"}]
    with pytest.raises(ValueError):
        Mlp.from_layers(layers)
