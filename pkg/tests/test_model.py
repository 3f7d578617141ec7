import numpy as np
import pytest

from deepcluster.model import Net, NetConfig, default_layers, sgd_step, softmax_nll_loss
from deepcluster.tensor import finite_diff_grad, make_rng

from gradcheck import LAYER_TYPES, check_layer, make_case, relative_error


@pytest.mark.parametrize("kind", LAYER_TYPES)
@pytest.mark.parametrize("seed", range(3))
def test_layer_gradients(kind, seed):
    layer, x, train = make_case(kind, seed)
    assert check_layer(layer, x, train, seed) < 1e-2


def _small_config(dropout=0.0):
    layers = [
        {"type": "conv", "filters": 3, "kernel": 3, "stride": 1, "pad": 1},
        {"type": "batchnorm"},
        {"type": "relu"},
        {"type": "maxpool", "k": 2, "stride": 2},
        {"type": "flatten"},
        {"type": "linear", "out": 5},
        {"type": "batchnorm"},
        {"type": "relu"},
        {"type": "dropout", "p": dropout},
    ]
    return NetConfig((2, 6, 6), layers)


def test_whole_net_gradient():
    net = Net(_small_config(0.25), 3, make_rng(0), np.float64)
    g = np.random.default_rng(1)
    x = g.standard_normal((4, 2, 6, 6))
    labels = np.array([0, 1, 2, 1])
    w = g.uniform(0.5, 2, 4)

    def loss():
        _, _, logits = net.forward(x, True, make_rng(9))
        return softmax_nll_loss(logits, labels, w)[0]

    caches, _, logits = net.forward(x, True, make_rng(9))
    grads, _ = net.backward(caches, softmax_nll_loss(logits, labels, w)[1])
    for name, p in net.named_params():
        def f(v, p=p):
            saved = p.copy()
            p[...] = v
            try:
                return loss()
            finally:
                p[...] = saved
        num = finite_diff_grad(f, p.copy(), 1e-5)
        # conv biases feeding batchnorm have a true gradient of zero
        assert relative_error(grads[name], num, floor=1e-4) < 1e-2, name


def test_zero_weights_give_zero_logits():
    net = Net(NetConfig((1, 4, 4), [{"type": "flatten"}, {"type": "linear", "out": 3}]), 2, make_rng(0))
    for _, p in net.named_params():
        p[...] = 0
    _, _, logits = net.forward(np.ones((2, 1, 4, 4)))
    assert not logits.any()


def test_identity_linear_passes_input():
    net = Net(NetConfig((1, 2, 2), [{"type": "flatten"}, {"type": "linear", "out": 4}]), 4, make_rng(0),
              np.float64)
    net.layers[1].params["W"][...] = np.eye(4)
    net.layers[1].params["b"][...] = 0
    net.head.params["W"][...] = np.eye(4)
    net.head.params["b"][...] = 0
    x = np.arange(8.0).reshape(2, 1, 2, 2)
    _, feats, logits = net.forward(x)
    np.testing.assert_array_equal(logits, x.reshape(2, 4))
    np.testing.assert_array_equal(feats, x.reshape(2, 4))


def test_eval_forward_is_deterministic(rng):
    net = Net(NetConfig(), 10, make_rng(0))
    x = rng.standard_normal((3, 2, 24, 24)).astype(np.float32)
    np.testing.assert_array_equal(net.forward(x)[2], net.forward(x)[2])


def test_shape_mismatch_and_small_batch():
    net = Net(NetConfig(), 10, make_rng(0))
    with pytest.raises(ValueError):
        net.forward(np.zeros((2, 1, 24, 24)))
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 2, 24, 24)), train=True)


def test_default_net_shapes():
    net = Net(NetConfig(), 80, make_rng(0))
    assert [s["type"] for s in default_layers()][-1] == "dropout"
    assert net.feature_dim == 128
    assert net.k == 80
    _, feats, logits = net.forward(np.zeros((2, 2, 24, 24), np.float32))
    assert feats.shape == (2, 128) and logits.shape == (2, 80)


def test_reset_head_keeps_body():
    net = Net(NetConfig(), 10, make_rng(0))
    body = {n: p.copy() for n, p in net.named_params() if not n.startswith("head")}
    net.velocity["head.W"] += 1
    net.reset_head(7, make_rng(1))
    assert net.k == 7
    assert not net.velocity["head.W"].any()
    for n, p in net.named_params():
        if n in body:
            np.testing.assert_array_equal(p, body[n])
    with pytest.raises(ValueError):
        net.reset_head(1, make_rng(0))


def test_loss_known_value():
    loss, d = softmax_nll_loss(np.array([[1.0, 0.0]]), [0])
    assert loss == pytest.approx(np.log1p(np.exp(-1.0)))
    np.testing.assert_allclose(d.sum(axis=1), 0, atol=1e-12)


def test_loss_uniform_logits():
    loss, _ = softmax_nll_loss(np.zeros((3, 5)), [0, 1, 4])
    assert loss == pytest.approx(np.log(5))


def test_loss_weights_scale_free(rng):
    z = rng.standard_normal((4, 3))
    a = softmax_nll_loss(z, [0, 1, 2, 0], [1, 2, 3, 4])
    b = softmax_nll_loss(z, [0, 1, 2, 0], [10, 20, 30, 40])
    assert a[0] == pytest.approx(b[0])
    np.testing.assert_allclose(a[1], b[1])


def test_loss_large_logits_stable():
    loss, d = softmax_nll_loss(np.array([[1000.0, -1000.0]]), [1])
    assert np.isfinite(loss) and np.all(np.isfinite(d))


def test_loss_rejects_bad_input():
    with pytest.raises(ValueError):
        softmax_nll_loss(np.zeros((2, 3)), [0, 3])
    with pytest.raises(ValueError):
        softmax_nll_loss(np.zeros((2, 3)), [0, 1], [1.0, 0.0])


def test_sgd_momentum_and_decay():
    net = Net(NetConfig((1, 1, 1), [{"type": "flatten"}, {"type": "linear", "out": 1},
                                    {"type": "batchnorm"}]), 2, make_rng(0), np.float64)
    W = net.layers[1].params["W"]
    W[...] = 1.0
    gamma = net.layers[2].params["gamma"]
    grads = {"layers.1.W": np.ones_like(W), "layers.2.gamma": np.ones_like(gamma)}
    sgd_step(net, grads, lr=0.1, momentum=0.9, weight_decay=0.5)
    # v = g + wd * p = 1.5; p = 1 - 0.15
    np.testing.assert_allclose(W, 0.85)
    np.testing.assert_allclose(gamma, 0.9)  # no decay on batchnorm scale
    sgd_step(net, grads, lr=0.1, momentum=0.9, weight_decay=0.0)
    np.testing.assert_allclose(W, 0.85 - 0.1 * (0.9 * 1.5 + 1.0))


def test_state_round_trip():
    a = Net(NetConfig(), 10, make_rng(0))
    b = Net(NetConfig(), 12, make_rng(1))
    b.load_state_tensors(a.state_tensors())
    assert b.k == 10
    for (n1, p1), (n2, p2) in zip(a.state_tensors().items(), b.state_tensors().items()):
        assert n1 == n2
        np.testing.assert_array_equal(p1, p2)


def test_bn_running_stats_unbiased():
    net = Net(NetConfig((1, 1, 1), [{"type": "flatten"}, {"type": "batchnorm"}], 1), 2, make_rng(0),
              np.float64)
    net.forward(np.array([0.0, 2.0]).reshape(2, 1, 1, 1), train=True)
    bn = net.layers[1]
    assert bn.buffers["running_mean"][0] == pytest.approx(0.1)
    # unbiased batch variance is 2.0
    assert bn.buffers["running_var"][0] == pytest.approx(0.9 + 0.1 * 2.0)
