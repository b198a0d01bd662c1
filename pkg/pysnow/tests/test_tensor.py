import pytest
import numpy as np

import pysnow.Tensor as T

TOL = 1e-5


@pytest.fixture()
def rng(request):
    return np.random.default_rng(42)


def _leaf(rng, *shape):
    return T.Tensor(rng.standard_normal(shape), requires_grad=True)


def test_add_mul_gradients():
    a = T.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = T.Tensor(np.array([3.0, 4.0]), requires_grad=True)
    (a * b + a).sum().backward()

    np.testing.assert_array_equal(a.grad, [4.0, 5.0])
    np.testing.assert_array_equal(b.grad, [1.0, 2.0])


def test_broadcast_gradient_is_summed(rng):
    a = _leaf(rng, 2, 3)
    b = _leaf(rng, 3)
    (a + b).sum().backward()

    np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
    np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])


def test_shared_leaf_accumulates():
    a = T.Tensor(np.array(3.0), requires_grad=True)
    (a * a).backward()
    assert a.grad == pytest.approx(6.0)


def test_backward_consumes_graph(rng):
    a = _leaf(rng, 3)
    loss = (a * 2.0).sum()
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_backward_needs_seed_for_non_scalar(rng):
    a = _leaf(rng, 3)
    with pytest.raises(ValueError):
        (a * 2.0).backward()


def test_backward_without_grad_raises():
    with pytest.raises(RuntimeError):
        T.Tensor(np.ones(2)).sum().backward()


def test_no_grad_builds_no_graph(rng):
    a = _leaf(rng, 3)
    with T.no_grad():
        out = (a * a).sum()
    assert not out.requires_grad
    assert out.is_leaf


def test_reshape_and_concat_gradients(rng):
    a = _leaf(rng, 1, 2, 2, 2)
    b = _leaf(rng, 1, 3, 2, 2)
    out = T.concat([a, b], axis=1)
    assert out.shape == (1, 5, 2, 2)

    weights = np.arange(20.0).reshape(1, 5, 2, 2)
    T.reshape(out * T.Tensor(weights), (20,)).sum().backward()
    np.testing.assert_array_equal(a.grad, weights[:, :2])
    np.testing.assert_array_equal(b.grad, weights[:, 2:])


def test_conv2d_known_value():
    x = T.Tensor(np.ones((1, 1, 3, 3)))
    w = T.Tensor(np.ones((1, 1, 2, 2)))
    out = T.conv2d(x, w)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 4.0))

    padded = T.conv2d(x, w, T.Tensor(np.array([0.5])), padding=1)
    assert padded.shape == (1, 1, 4, 4)
    assert padded.data[0, 0, 0, 0] == 1.5


def test_conv2d_rejects_non_integral_geometry(rng):
    with pytest.raises(ValueError):
        T.conv2d(_leaf(rng, 1, 1, 4, 4), _leaf(rng, 1, 1, 3, 3), stride=2)


def test_conv2d_rejects_channel_mismatch(rng):
    with pytest.raises(ValueError):
        T.conv2d(_leaf(rng, 1, 2, 4, 4), _leaf(rng, 1, 3, 3, 3))


@pytest.mark.parametrize('size, k, stride, padding', [
    (8, 4, 2, 1), (7, 3, 1, 1), (9, 3, 2, 1), (8, 2, 2, 0), (6, 5, 1, 2),
    (5, 1, 1, 0), (7, 3, 2, 0)])
def test_transposed_convolution_is_adjoint(rng, size, k, stride, padding):
    out = (size + 2 * padding - k) // stride + 1
    x = rng.standard_normal((2, 3, size, size))
    w = rng.standard_normal((4, 3, k, k))
    y = rng.standard_normal((2, 4, out, out))

    forward = T.conv2d(T.Tensor(x), T.Tensor(w), stride=stride,
                       padding=padding).data
    adjoint = T.conv_transpose2d(T.Tensor(y), T.Tensor(w), stride=stride,
                                 padding=padding).data
    assert forward.shape == y.shape
    assert adjoint.shape == x.shape
    np.testing.assert_allclose(np.sum(forward * y), np.sum(x * adjoint),
                               rtol=1e-10)


def _naive_conv2d(x, w, b, stride, padding):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for s in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for di in range(k):
                            for dj in range(k):
                                acc += w[o, c, di, dj] * \
                                    xp[s, c, stride * i + di, stride * j + dj]
                    out[s, o, i, j] = acc
    return out


@pytest.mark.parametrize('size, k, stride, padding', [
    (6, 3, 1, 1), (8, 4, 2, 1), (7, 3, 2, 0), (5, 2, 1, 0)])
def test_conv2d_matches_loop_oracle(rng, size, k, stride, padding):
    x = rng.standard_normal((2, 3, size, size))
    w = rng.standard_normal((2, 3, k, k))
    b = rng.standard_normal(2)
    out = T.conv2d(T.Tensor(x), T.Tensor(w), T.Tensor(b), stride=stride,
                   padding=padding).data
    np.testing.assert_allclose(out, _naive_conv2d(x, w, b, stride, padding),
                               rtol=1e-10, atol=1e-12)


def test_maxpool_matches_loop_oracle(rng):
    x = rng.standard_normal((2, 3, 6, 8))
    expected = np.zeros((2, 3, 3, 4))
    for s in range(2):
        for c in range(3):
            for i in range(3):
                for j in range(4):
                    expected[s, c, i, j] = x[s, c, 2 * i:2 * i + 2,
                                             2 * j:2 * j + 2].max()
    np.testing.assert_array_equal(T.maxpool2d(T.Tensor(x)).data, expected)


def test_dense_matches_loop_oracle(rng):
    x = rng.standard_normal((4, 5))
    w = rng.standard_normal((5, 3))
    b = rng.standard_normal(3)
    expected = np.array([[b[o] + sum(x[s, i] * w[i, o] for i in range(5))
                          for o in range(3)] for s in range(4)])
    np.testing.assert_allclose(
        T.dense(T.Tensor(x), T.Tensor(w), T.Tensor(b)).data, expected,
        rtol=1e-12)


def test_conv_transpose_output_shape(rng):
    out = T.conv_transpose2d(_leaf(rng, 1, 8, 4, 4), _leaf(rng, 8, 4, 4, 4),
                             _leaf(rng, 4), stride=2, padding=1)
    assert out.shape == (1, 4, 8, 8)


def test_grad_check_conv_stack(rng):
    x = _leaf(rng, 2, 2, 6, 6)
    w1 = _leaf(rng, 3, 2, 3, 3)
    b1 = _leaf(rng, 3)
    w2 = _leaf(rng, 3, 2, 2, 2)
    b2 = _leaf(rng, 2)

    def fn():
        h = T.activation(T.conv2d(x, w1, b1, padding=1), 'leaky_relu')
        h = T.conv_transpose2d(T.maxpool2d(h), w2, b2, stride=2)
        return T.mean(h * h)

    assert T.grad_check(fn, [x, w1, b1, w2, b2], max_entries=20) < TOL
    assert x.grad is None


def test_grad_check_dense_and_smooth_activations(rng):
    x = _leaf(rng, 4, 5)
    w = _leaf(rng, 5, 3)
    b = _leaf(rng, 3)

    def fn():
        h = T.activation(T.dense(x, w, b), 'tanh')
        return T.activation(h, 'sigmoid').sum()

    assert T.grad_check(fn, [x, w, b]) < TOL


def test_grad_check_batchnorm_training(rng):
    x = _leaf(rng, 3, 2, 3, 3)
    gamma = T.Tensor(rng.uniform(0.5, 1.5, 2), requires_grad=True)
    beta = _leaf(rng, 2)
    weights = T.Tensor(rng.standard_normal((3, 2, 3, 3)))
    running_mean, running_var = np.zeros(2), np.ones(2)

    def fn():
        out = T.batchnorm2d(x, gamma, beta, True, running_mean, running_var)
        return (out * weights).sum()

    assert T.grad_check(fn, [x, gamma, beta]) < TOL


def test_grad_check_perceptual_loss(rng):
    y = T.Tensor(rng.uniform(0, 1, (1, 2, 4, 4)))
    y_hat = T.Tensor(rng.uniform(0, 1, (1, 2, 4, 4)), requires_grad=True)
    kernel = T.Tensor(rng.standard_normal((3, 2, 3, 3)))

    def phi(t):
        return T.avgpool2d(T.activation(T.conv2d(t, kernel, padding=1),
                                        'relu'))

    def fn():
        return T.combined_loss(y, y_hat, phi, gamma=0.5)

    assert T.grad_check(fn, [y_hat]) < TOL


def test_batchnorm_updates_running_stats():
    x = np.zeros((2, 2, 2, 2))
    x[:, 0] = 3.0
    x[:, 1] = -1.0
    x[0, 1, 0, 0] = 1.0
    running_mean, running_var = np.zeros(2), np.ones(2)
    ones, zeros = T.Tensor(np.ones(2)), T.Tensor(np.zeros(2))

    T.batchnorm2d(T.Tensor(x), ones, zeros, True, running_mean, running_var)

    batch_var = x[:, 1].var()
    np.testing.assert_allclose(running_mean, [0.3, 0.1 * x[:, 1].mean()])
    np.testing.assert_allclose(running_var, [0.9, 0.9 + 0.1 * batch_var])


def test_batchnorm_eval_uses_running_stats():
    x = T.Tensor(np.full((1, 1, 2, 2), 5.0))
    out = T.batchnorm2d(x, T.Tensor(np.array([2.0])),
                        T.Tensor(np.array([1.0])), False, np.array([3.0]),
                        np.array([4.0]), eps=0.0)
    np.testing.assert_allclose(out.data, 2.0 * (5.0 - 3.0) / 2.0 + 1.0)


def test_batchnorm_training_rejects_single_value():
    with pytest.raises(ValueError):
        T.batchnorm2d(T.Tensor(np.ones((1, 2, 1, 1))),
                      T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)), True,
                      np.zeros(2), np.ones(2))


def test_maxpool_routes_gradient_to_first_argmax():
    x = T.Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    T.maxpool2d(x).sum().backward()
    np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_maxpool_rejects_odd_extent(rng):
    with pytest.raises(ValueError):
        T.maxpool2d(_leaf(rng, 1, 1, 3, 4))


def test_avgpool_value():
    x = T.Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
    np.testing.assert_array_equal(T.avgpool2d(x).data[0, 0],
                                  [[2.5, 4.5], [10.5, 12.5]])


def test_dropout_modes(rng):
    x = T.Tensor(np.ones((50, 40)))
    assert T.dropout(x, 0.5, training=False) is x

    out = T.dropout(x, 0.5, training=True, rng=np.random.default_rng(0)).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert 0.3 < (out == 0).mean() < 0.7

    with pytest.raises(ValueError):
        T.dropout(x, 0.5, training=True)


@pytest.mark.parametrize('rate', [0.3, 0.5])
def test_dropout_keep_rate_and_mean(rate):
    x = T.Tensor(np.ones(10 ** 6))
    out = T.dropout(x, rate, training=True,
                    rng=np.random.default_rng(7)).data
    kept = out != 0
    # binomial std of the keep fraction is below 5e-4
    assert kept.mean() == pytest.approx(1 - rate, abs=3e-3)
    np.testing.assert_allclose(out[kept], 1.0 / (1 - rate))
    assert out.mean() == pytest.approx(1.0, abs=1e-2)


def test_unknown_activation(rng):
    with pytest.raises(ValueError):
        T.activation(_leaf(rng, 2), 'swish')


def test_mse_loss_value():
    loss = T.mse_loss(np.array([0.0, 1.0]), np.array([1.0, 3.0]))
    assert loss.item() == pytest.approx(2.5)


def test_combined_loss_without_perceptual_term_is_mse(rng):
    y = T.Tensor(rng.random((1, 1, 4, 4)))
    y_hat = T.Tensor(rng.random((1, 1, 4, 4)))

    def phi(t):
        raise AssertionError('feature net must not run when gamma is 0')

    assert T.combined_loss(y, y_hat, phi, gamma=0).item() == \
        pytest.approx(T.mse_loss(y, y_hat).item())


def test_perceptual_loss_gradient_flows_only_through_prediction(rng):
    y = T.Tensor(rng.random((1, 1, 4, 4)), requires_grad=True)
    y_hat = T.Tensor(rng.random((1, 1, 4, 4)), requires_grad=True)

    T.perceptual_loss(T.avgpool2d, y, y_hat).backward()
    assert y.grad is None
    assert y_hat.grad is not None


def test_wasserstein_losses():
    assert T.critic_loss(np.array([2.0]), np.array([5.0])).item() == -3.0
    assert T.generator_loss(np.array([2.0, 4.0])).item() == -3.0
    with pytest.raises(ValueError):
        T.critic_loss(np.array([1.0, 2.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        T.generator_loss(np.array([]))


def test_adam_first_step():
    p = np.array([1.0])
    T.adam_step([p], [np.array([1.0])], T.OptimizerState('adam'))
    np.testing.assert_allclose(p, [1.0 - 0.001 / (1.0 + 1e-7)], rtol=1e-12)


def test_adam_zero_gradient_leaves_parameters():
    p = np.array([0.5, -2.0])
    state = T.OptimizerState('adam')
    T.adam_step([p], [np.zeros(2)], state)
    T.adam_step([p], [None], state)
    np.testing.assert_array_equal(p, [0.5, -2.0])
    assert state.step == 2


def test_rmsprop_step():
    p = np.array([1.0])
    T.rmsprop_step([p], [np.array([1.0])], T.OptimizerState('rmsprop'),
                   lr=0.01)
    np.testing.assert_allclose(p, [1.0 - 0.01 / (np.sqrt(0.1) + 1e-8)])


GRADS = [np.array([0.5, -1.0]), np.array([0.2, 3.0]), np.array([-0.4, 0.0])]


def test_adam_three_step_trajectory():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-7
    p = np.array([1.0, -2.0])
    state = T.OptimizerState('adam')

    expected = p.copy()
    m = np.zeros(2)
    v = np.zeros(2)
    for t, g in enumerate(GRADS, start=1):
        T.adam_step([p], [g.copy()], state, lr=lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g ** 2
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        expected = expected - lr * m_hat / (np.sqrt(v_hat) + eps)
        np.testing.assert_allclose(p, expected, rtol=1e-12)
    assert state.step == 3


def test_rmsprop_three_step_trajectory():
    lr, rho, eps = 5e-5, 0.9, 1e-8
    p = np.array([0.01, -0.02])
    state = T.OptimizerState('rmsprop')

    expected = p.copy()
    v = np.zeros(2)
    for g in GRADS:
        T.rmsprop_step([p], [g.copy()], state)
        v = rho * v + (1 - rho) * g ** 2
        expected = expected - lr * g / (np.sqrt(v) + eps)
        np.testing.assert_allclose(p, expected, rtol=1e-12)
    assert state.step == 3


def test_optimizer_state_shape_mismatch():
    state = T.OptimizerState('adam')
    T.adam_step([np.zeros(2)], [np.ones(2)], state)
    with pytest.raises(ValueError):
        T.adam_step([np.zeros(3)], [np.ones(3)], state)


def test_clip_weights():
    p = np.array([-1.0, 0.005, 2.0])
    T.clip_weights([p], 0.01)
    np.testing.assert_array_equal(p, [-0.01, 0.005, 0.01])
    with pytest.raises(ValueError):
        T.clip_weights([p], 0.0)


def test_grad_check_detects_wrong_gradient(rng):
    x = _leaf(rng, 4)

    def broken(a):
        def backward(g):
            return (g * 3.0 * a.data,)
        return T._make(a.data ** 2, (a,), backward)

    assert T.grad_check(lambda: T.tsum(broken(x)), [x]) > 0.1
