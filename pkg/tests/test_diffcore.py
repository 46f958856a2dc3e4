import numpy as np
import pytest

from behavior_forecast.diffcore import checkpoint, grad_check
from behavior_forecast.diffcore import layers as L
from behavior_forecast.diffcore import tensor as T
from behavior_forecast.diffcore.optim import AMSGrad, ParameterStore, amsgrad_step
from behavior_forecast.diffcore.tensor import Parameter, Tensor, no_grad
from gradcases import op_cases


@pytest.mark.parametrize("name", sorted(op_cases()))
def test_op_gradients(name):
    fn, inputs = op_cases()[name]
    assert grad_check(fn, inputs) < 1e-4


def test_dense_gradient_tight():
    fn, inputs = op_cases()["dense"]
    assert grad_check(fn, inputs) < 1e-6


def test_dense_examples():
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(L.dense(x, np.eye(3), np.zeros(3)).data, x)
    np.testing.assert_array_equal(L.dense(np.zeros((1, 3)), np.ones((3, 2)), np.array([1.0, 2.0])).data, [[1, 2]])
    W = Parameter(np.array([[1.0, 2.0], [3.0, 4.0]]))
    xx = np.array([[0.5, -1.0]])
    T.tsum(L.dense(xx, W)).backward()
    np.testing.assert_allclose(W.grad, np.outer(xx[0], np.ones(2)))
    with pytest.raises(ValueError):
        L.dense(np.zeros((1, 2)), np.zeros((3, 2)))


def test_leaky_relu_values():
    out = L.leaky_relu(np.array([2.0, -2.0, 0.0])).data
    np.testing.assert_allclose(out, [2.0, -0.02, 0.0])
    eps = 1e-12
    assert abs(L.leaky_relu(np.array([eps])).data[0] - L.leaky_relu(np.array([-eps])).data[0]) < 1e-11


def test_gru_zero_weights():
    H = 4
    h = np.arange(1.0, 5.0)[None]
    out = L.gru_cell(np.ones((1, 3)), h, np.zeros((3, 3 * H)), np.zeros((H, 2 * H)), np.zeros((H, H)), np.zeros(3 * H))
    np.testing.assert_allclose(out.data, 0.5 * h)
    out = L.gru_cell(np.ones((1, 3)), np.zeros((1, H)), np.zeros((3, 3 * H)), np.zeros((H, 2 * H)),
                     np.zeros((H, H)), np.zeros(3 * H))
    assert np.all(out.data == 0)


def test_lstm_zero_weights():
    H = 3
    zeros = dict(Wx=np.zeros((2, 4 * H)), Wh=np.zeros((H, 4 * H)), b=np.zeros(4 * H))
    h, c = L.lstm_cell(np.ones((1, 2)), np.zeros((1, H)), np.zeros((1, H)), **zeros)
    assert np.all(h.data == 0) and np.all(c.data == 0)
    c0 = np.array([[1.0, -2.0, 3.0]])
    h, c = L.lstm_cell(np.ones((1, 2)), np.zeros((1, H)), c0, **zeros)
    np.testing.assert_allclose(c.data, 0.5 * c0)
    np.testing.assert_allclose(h.data, 0.5 * np.tanh(0.5 * c0))


def test_causal_conv_examples():
    x = np.array([[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(L.causal_conv1d(x, np.ones((2, 1, 1))).data, [[3.0], [5.0]])
    W1 = np.random.default_rng(0).normal(size=(1, 1, 2))
    y = L.causal_conv1d(x, W1)
    assert y.shape == (3, 2)
    np.testing.assert_allclose(y.data, x @ W1[0])
    x4 = np.array([[1.0], [10.0], [100.0], [1000.0]])
    W = np.array([[[2.0]], [[3.0]]])
    np.testing.assert_array_equal(L.causal_conv1d(x4, W, dilation=3).data, [[2.0 + 3000.0]])
    with pytest.raises(ValueError):
        L.causal_conv1d(x4, W, dilation=4)


def test_causal_conv_is_causal():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(20, 3))
    W = rng.normal(size=(3, 3, 2))
    base = L.causal_conv1d(x, W, dilation=2).data
    for t in range(20):
        y = x.copy()
        y[t] += 1.0
        out = L.causal_conv1d(y, W, dilation=2).data
        # output frame j covers inputs j..j+4, i.e. it ends at input j+4
        changed = np.nonzero(np.any(out != base, axis=1))[0]
        assert np.all(changed + 4 >= t)


def test_attention_examples():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(5, 4))
    k = np.ones((5, 4))
    q = rng.normal(size=(5, 4))
    out, w = L.scaled_dot_attention(q, k, v, heads=2)
    np.testing.assert_allclose(w.data, 0.2)
    np.testing.assert_allclose(out.data, np.repeat(v.mean(axis=0, keepdims=True), 5, axis=0))
    out, w = L.scaled_dot_attention(q[:1], k[:1], v[:1], heads=1)
    np.testing.assert_allclose(w.data, 1.0)
    np.testing.assert_allclose(out.data, v[:1])
    _, w = L.scaled_dot_attention(q, rng.normal(size=(5, 4)), v, heads=4)
    assert np.max(np.abs(w.data.sum(axis=-1) - 1)) < 1e-12
    with pytest.raises(ValueError):
        L.MultiHeadAttention(6, 4, rng)


def test_masked_mse_examples():
    p = np.zeros((3, 3))
    assert L.masked_mse(p, p, np.ones((3, 3))).item() == 0
    t = p.copy()
    t[1, 2] = 3
    m = np.zeros((3, 3), bool)
    m[1, 2] = True
    assert L.masked_mse(p, t, m).item() == 9
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(2, 3, 3))
    mask = rng.random((3, 3)) > 0.5
    mask[0, 0] = True
    ref = sum((a[i, j] - b[i, j]) ** 2 for i in range(3) for j in range(3) if mask[i, j]) / mask.sum()
    assert abs(L.masked_mse(a, b, mask).item() - ref) < 1e-12
    with pytest.raises(ValueError):
        L.masked_mse(a, b, np.zeros((3, 3)))


def test_dropout_train_only():
    rng = np.random.default_rng(4)
    x = Tensor(np.ones((1000,)))
    assert L.dropout(x, 0.5, rng, training=False) is x
    y = L.dropout(x, 0.5, rng, training=True).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert 0.4 < (y == 0).mean() < 0.6


def test_no_grad_builds_no_graph():
    a = Parameter(np.ones(3))
    with no_grad():
        y = T.tsum(a * 2.0)
    assert y._backward is None


def test_shared_subgraph_accumulates():
    a = Parameter(np.array([1.0, 2.0]))
    b = a * a
    y = T.tsum(b + b * 3.0)
    y.backward()
    np.testing.assert_allclose(a.grad, 8 * a.data)


def test_amsgrad_zero_grad_no_decay():
    p = {"w": np.array([1.0, -2.0])}
    s = ParameterStore(p)
    amsgrad_step(s, {"w": np.zeros(2)}, weight_decay=0.0)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_amsgrad_two_step_trace():
    lr, wd, b1, b2, eps = 0.1, 0.01, 0.9, 0.999, 1e-8
    s = ParameterStore({"x": np.array([0.5])})
    x, m, v, vmax = 0.5, 0.0, 0.0, 0.0
    for t, g in ((1, 1.0), (2, 1.0)):
        gg = g + wd * x
        m = b1 * m + (1 - b1) * gg
        v = b2 * v + (1 - b2) * gg * gg
        vmax = max(vmax, v)
        x = x - lr * (m / (1 - b1 ** t)) / ((vmax / (1 - b2 ** t)) ** 0.5 + eps)
        amsgrad_step(s, {"x": np.array([g])}, lr, wd, b1, b2, eps)
        assert abs(s.params["x"][0] - x) < 1e-12


def test_amsgrad_sign_sgd_limit():
    s = ParameterStore({"x": np.array([1.0, 1.0])})
    g = np.array([0.3, -5.0])
    amsgrad_step(s, {"x": g}, lr=0.01, weight_decay=0.0, beta1=0.0, beta2=0.0, eps=1e-8)
    np.testing.assert_allclose(s.params["x"], 1.0 - 0.01 * g / (np.abs(g) + 1e-8), rtol=0, atol=1e-15)


def test_amsgrad_vmax_monotone():
    rng = np.random.default_rng(5)
    s = ParameterStore({"a": rng.normal(size=(4, 3)), "b": rng.normal(size=5)})
    prev = {k: v.copy() for k, v in s.v_max.items()}
    for _ in range(100):
        amsgrad_step(s, {k: rng.normal(size=p.shape) * rng.exponential() for k, p in s.params.items()})
        for k in prev:
            assert np.all(s.v_max[k] >= prev[k])
            prev[k] = s.v_max[k].copy()


def test_amsgrad_rejects_misaligned():
    s = ParameterStore({"a": np.zeros(2)})
    with pytest.raises(KeyError):
        amsgrad_step(s, {"b": np.zeros(2)})
    with pytest.raises(ValueError):
        amsgrad_step(s, {"a": np.zeros(3)})


def test_optimizer_decreases_quadratic():
    w = Parameter(np.array([3.0, -2.0]))
    opt = AMSGrad({"w": w}, lr=0.1, weight_decay=0.0)
    for _ in range(200):
        opt.zero_grad()
        T.tsum(w * w).backward()
        opt.step()
    assert np.all(np.abs(w.data) < 0.2)


def test_checkpoint_roundtrip_and_bytes(tmp_path):
    rng = np.random.default_rng(6)
    tensors = {"b": rng.normal(size=(2, 3)), "a": rng.normal(size=4), "s": np.array(1.5)}
    buf = checkpoint.dumps(tensors, {"k": 1})
    assert buf[:8] == checkpoint.MAGIC
    assert checkpoint.dumps(dict(reversed(list(tensors.items()))), {"k": 1}) == buf
    back, meta = checkpoint.loads(buf)
    assert meta == {"k": 1}
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])
    with pytest.raises(ValueError):
        checkpoint.loads(b"nope" + buf[4:])
    checkpoint.save(tmp_path / "c.bin", tensors)
    assert checkpoint.load(tmp_path / "c.bin")[0].keys() == tensors.keys()
