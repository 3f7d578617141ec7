"""Small convnet with hand-written backward passes, softmax loss and momentum SGD.

The network is a list of layers followed by a linear classification head.
The output of ``feature_layer`` is the representation that gets clustered;
the head maps the final body activation to one logit per cluster.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .tensor import DTYPE, NumericError, conv2d_batch, conv_output_size

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def default_layers():
    """Two conv blocks and a 128-unit linear layer, sized for 24x24 inputs."""
    return [
        {"type": "conv", "filters": 32, "kernel": 3, "stride": 1, "pad": 1},
        {"type": "batchnorm"},
        {"type": "relu"},
        {"type": "maxpool", "k": 2, "stride": 2},
        {"type": "conv", "filters": 64, "kernel": 3, "stride": 1, "pad": 1},
        {"type": "batchnorm"},
        {"type": "relu"},
        {"type": "maxpool", "k": 2, "stride": 2},
        {"type": "flatten"},
        {"type": "linear", "out": 128},
        {"type": "relu"},
        {"type": "dropout", "p": 0.0},
    ]


@dataclass
class NetConfig:
    """Layer list, input shape and the index of the feature layer.

    ``feature_layer`` defaults to the last linear layer of the body; its
    output is taken before any following ReLU.
    """

    input_shape: tuple = (2, 24, 24)
    layers: list = field(default_factory=default_layers)
    feature_layer: int | None = None

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if self.feature_layer is None:
            linear = [i for i, spec in enumerate(self.layers) if spec["type"] == "linear"]
            if not linear:
                raise ValueError("feature_layer must be given when the body has no linear layer")
            self.feature_layer = linear[-1]
        if not 0 <= self.feature_layer < len(self.layers):
            raise ValueError("feature_layer must index a body layer (the head comes after the body)")

    def to_dict(self):
        return {"input_shape": list(self.input_shape), "layers": copy.deepcopy(self.layers),
                "feature_layer": self.feature_layer}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["input_shape"]), copy.deepcopy(d["layers"]), d.get("feature_layer"))


# ---------------------------------------------------------------- layers


class Layer:
    params: dict

    def __init__(self):
        self.params = {}
        self.buffers = {}

    def out_shape(self, shape):
        return shape

    def init(self, rng, dtype):
        pass

    def decayed(self, name):
        return False


def _kaiming(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv(Layer):
    def __init__(self, in_shape, filters, kernel, stride=1, pad=0):
        super().__init__()
        self.in_shape = in_shape
        self.filters, self.kernel, self.stride, self.pad = filters, kernel, stride, pad

    def out_shape(self, shape):
        C, H, W = shape
        return (self.filters, conv_output_size(H, self.kernel, self.stride, self.pad),
                conv_output_size(W, self.kernel, self.stride, self.pad))

    def init(self, rng, dtype):
        C = self.in_shape[0]
        k = self.kernel
        self.params["W"] = _kaiming(rng, (self.filters, C, k, k), C * k * k, dtype)
        self.params["b"] = np.zeros(self.filters, dtype=dtype)

    def decayed(self, name):
        return name == "W"

    def forward(self, x, train, rng):
        out, cols = conv2d_batch(x, self.params["W"], self.stride, self.pad)
        out += self.params["b"][None, :, None, None]
        return out, (cols, x.shape)

    def backward(self, dout, cache):
        cols, (B, C, H, W) = cache
        Wt = self.params["W"]
        F = Wt.shape[0]
        dflat = dout.transpose(1, 0, 2, 3).reshape(F, -1)
        grads = {"W": (dflat @ cols.T).reshape(Wt.shape), "b": dout.sum(axis=(0, 2, 3))}
        dcols = Wt.reshape(F, -1).T @ dflat
        dx = kernels.col2im(dcols, B, C, H, W, self.kernel, self.kernel, self.stride, self.pad)
        return dx, grads


class BatchNorm(Layer):
    """Per-channel normalization for (B, C, H, W) or per-feature for (B, D)."""

    def __init__(self, in_shape):
        super().__init__()
        self.in_shape = in_shape
        self.channels = in_shape[0]

    def init(self, rng, dtype):
        c = self.channels
        self.params["gamma"] = np.ones(c, dtype=dtype)
        self.params["beta"] = np.zeros(c, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(c, dtype=dtype)
        self.buffers["running_var"] = np.ones(c, dtype=dtype)

    def _axes(self, x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _bcast(self, v, x):
        return v if x.ndim == 2 else v[None, :, None, None]

    def forward(self, x, train, rng):
        axes = self._axes(x)
        gamma, beta = self.params["gamma"], self.params["beta"]
        if train:
            m = x.size // self.channels
            if x.shape[0] < 2:
                raise ValueError("batchnorm in train mode needs a batch of at least 2")
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm *= 1 - BN_MOMENTUM
            rm += BN_MOMENTUM * mu
            rv *= 1 - BN_MOMENTUM
            rv += BN_MOMENTUM * var * (m / max(m - 1, 1))
        else:
            mu = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
        xhat = (x - self._bcast(mu, x)) * self._bcast(inv_std, x)
        out = xhat * self._bcast(gamma, x) + self._bcast(beta, x)
        return out, (xhat, inv_std, train)

    def backward(self, dout, cache):
        xhat, inv_std, train = cache
        axes = self._axes(dout)
        grads = {"gamma": (dout * xhat).sum(axis=axes), "beta": dout.sum(axis=axes)}
        dxhat = dout * self._bcast(self.params["gamma"], dout)
        if not train:
            return dxhat * self._bcast(inv_std, dout), grads
        m = dout.size // self.channels
        sum_d = self._bcast(dxhat.sum(axis=axes), dout)
        sum_dx = self._bcast((dxhat * xhat).sum(axis=axes), dout)
        dx = self._bcast(inv_std, dout) / m * (m * dxhat - sum_d - xhat * sum_dx)
        return dx, grads


class ReLU(Layer):
    def forward(self, x, train, rng):
        mask = x > 0
        return x * mask, mask

    def backward(self, dout, mask):
        return dout * mask, {}


class MaxPool(Layer):
    def __init__(self, in_shape, k=2, stride=None):
        super().__init__()
        self.k = k
        self.stride = stride or k

    def out_shape(self, shape):
        C, H, W = shape
        return (C, (H - self.k) // self.stride + 1, (W - self.k) // self.stride + 1)

    def forward(self, x, train, rng):
        out, arg = kernels.maxpool_forward(x, self.k, self.stride)
        return out, (arg, x.shape)

    def backward(self, dout, cache):
        arg, shape = cache
        return kernels.maxpool_backward(dout, arg, shape[2], shape[3], self.k, self.stride), {}


class Flatten(Layer):
    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train, rng):
        return x.reshape(len(x), -1), x.shape

    def backward(self, dout, shape):
        return dout.reshape(shape), {}


class Linear(Layer):
    def __init__(self, in_shape, out):
        super().__init__()
        if len(in_shape) != 1:
            raise ValueError(f"linear layer needs flat input, got shape {in_shape}")
        self.fan_in = in_shape[0]
        self.out = out

    def out_shape(self, shape):
        return (self.out,)

    def init(self, rng, dtype):
        self.params["W"] = _kaiming(rng, (self.fan_in, self.out), self.fan_in, dtype)
        self.params["b"] = np.zeros(self.out, dtype=dtype)

    def decayed(self, name):
        return name == "W"

    def forward(self, x, train, rng):
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, dout, x):
        grads = {"W": x.T @ dout, "b": dout.sum(axis=0)}
        return dout @ self.params["W"].T, grads


class Dropout(Layer):
    def __init__(self, in_shape, p=0.0):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout probability must lie in [0, 1)")
        self.p = p

    def forward(self, x, train, rng):
        if not train or self.p == 0.0:
            return x, None
        if rng is None:
            raise ValueError("dropout in train mode needs a random stream")
        mask = (rng.random(x.shape) >= self.p).astype(x.dtype) / (1.0 - self.p)
        return x * mask, mask

    def backward(self, dout, mask):
        return (dout if mask is None else dout * mask), {}


def _build_layer(spec, in_shape):
    kind = spec["type"]
    if kind == "conv":
        return Conv(in_shape, spec["filters"], spec["kernel"], spec.get("stride", 1), spec.get("pad", 0))
    if kind == "batchnorm":
        return BatchNorm(in_shape)
    if kind == "relu":
        return ReLU()
    if kind == "maxpool":
        return MaxPool(in_shape, spec.get("k", 2), spec.get("stride"))
    if kind == "flatten":
        return Flatten()
    if kind == "linear":
        return Linear(in_shape, spec["out"])
    if kind == "dropout":
        return Dropout(in_shape, spec.get("p", 0.0))
    raise ValueError(f"unknown layer type {kind!r}")


# ---------------------------------------------------------------- network


class Net:
    """Body layers plus a linear head; owns parameters, momentum and BN stats."""

    def __init__(self, config: NetConfig, k: int, rng: np.random.Generator, dtype=DTYPE):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.layers = []
        self.shapes = [config.input_shape]
        shape = config.input_shape
        for spec in config.layers:
            layer = _build_layer(spec, shape)
            layer.init(rng, self.dtype)
            shape = layer.out_shape(shape)
            if min(shape) < 1:
                raise ValueError(f"layer {spec} produces an empty output")
            self.layers.append(layer)
            self.shapes.append(shape)
        if len(shape) != 1:
            raise ValueError("the body must end with a flat output (add a flatten layer)")
        self.head = None
        self.velocity = {}
        self.reset_head(k, rng)
        for name, p in self.named_params():
            self.velocity.setdefault(name, np.zeros_like(p))

    # -- parameter bookkeeping

    @property
    def k(self):
        return self.head.out

    @property
    def feature_dim(self):
        return int(np.prod(self.shapes[self.config.feature_layer + 1]))

    def _modules(self):
        for i, layer in enumerate(self.layers):
            yield f"layers.{i}", layer
        yield "head", self.head

    def named_params(self):
        for prefix, layer in self._modules():
            for name, p in layer.params.items():
                yield f"{prefix}.{name}", p

    def named_buffers(self):
        for prefix, layer in self._modules():
            for name, b in layer.buffers.items():
                yield f"{prefix}.{name}", b

    def is_decayed(self, full_name):
        prefix, name = full_name.rsplit(".", 1)
        return dict(self._modules())[prefix].decayed(name)

    def state_tensors(self):
        """All tensors that define the network state, in a fixed order."""
        out = {}
        for name, p in self.named_params():
            out[f"param:{name}"] = p
        for name, v in self.velocity.items():
            out[f"momentum:{name}"] = v
        for name, b in self.named_buffers():
            out[f"buffer:{name}"] = b
        return out

    def load_state_tensors(self, tensors):
        head_w = tensors.get("param:head.W")
        if head_w is not None and head_w.shape[1] != self.k:
            self.head = Linear((self.head.fan_in,), head_w.shape[1])
            self.head.params = {"W": np.empty_like(head_w), "b": np.empty(head_w.shape[1], self.dtype)}
        for name, p in self.named_params():
            p[...] = tensors[f"param:{name}"]
        for name, p in self.named_params():
            self.velocity[name] = np.array(tensors[f"momentum:{name}"], dtype=self.dtype)
        for name, b in self.named_buffers():
            b[...] = tensors[f"buffer:{name}"]

    def copy(self):
        return copy.deepcopy(self)

    def astype(self, dtype):
        """Deep copy with every tensor cast to ``dtype`` (used by gradient checks)."""
        net = copy.deepcopy(self)
        net.dtype = np.dtype(dtype)
        for _, layer in net._modules():
            layer.params = {k: v.astype(dtype) for k, v in layer.params.items()}
            layer.buffers = {k: v.astype(dtype) for k, v in layer.buffers.items()}
        net.velocity = {k: v.astype(dtype) for k, v in net.velocity.items()}
        return net

    def reset_head(self, k: int, rng: np.random.Generator):
        """Replace the head by a fresh ``k``-way linear layer; the body is untouched."""
        if k < 2:
            raise ValueError("the head needs at least 2 outputs")
        head = Linear(self.shapes[-1], k)
        head.init(rng, self.dtype)
        self.head = head
        for name, p in head.params.items():
            self.velocity[f"head.{name}"] = np.zeros_like(p)

    # -- passes

    def _check_input(self, x):
        if x.ndim != 4 or tuple(x.shape[1:]) != self.config.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match {self.config.input_shape}")

    def forward(self, x, train=False, rng=None, upto=None):
        """Run the body and head.

        Returns ``(caches, features, logits)``; ``features`` is the output of
        the feature layer.  ``upto`` stops after that body layer and returns
        ``(caches, activation, None)``.
        """
        x = np.ascontiguousarray(x, dtype=self.dtype)
        self._check_input(x)
        caches = []
        features = None
        for i, layer in enumerate(self.layers):
            x, cache = layer.forward(x, train, rng)
            caches.append(cache)
            if i == self.config.feature_layer:
                features = x
            if upto is not None and i == upto:
                return caches, x, None
        logits, cache = self.head.forward(x, train, rng)
        caches.append(cache)
        return caches, features, logits

    def backward(self, caches, dlogits=None, dbody=None, upto=None):
        """Gradients for every parameter from the head (or from layer ``upto``).

        Returns ``(grads, dinput)``.
        """
        if caches is None or len(caches) == 0:
            raise ValueError("backward needs the caches of a matching forward pass")
        grads = {}
        n_body = len(self.layers)
        if upto is None:
            if len(caches) != n_body + 1:
                raise ValueError("stale cache: forward did not reach the head")
            d, g = self.head.backward(dlogits, caches[-1])
            grads.update({f"head.{k}": v for k, v in g.items()})
            start = n_body - 1
        else:
            if len(caches) != upto + 1:
                raise ValueError("stale cache: forward stopped at a different layer")
            d = dbody
            start = upto
        for i in range(start, -1, -1):
            d, g = self.layers[i].backward(d, caches[i])
            grads.update({f"layers.{i}.{k}": v for k, v in g.items()})
        return grads, d

    def features(self, x, batch_size=512):
        """Eval-mode feature-layer outputs for a stack of inputs."""
        out = np.empty((len(x), self.feature_dim), dtype=self.dtype)
        for s in range(0, len(x), batch_size):
            _, f, _ = self.forward(x[s : s + batch_size], train=False, upto=self.config.feature_layer)
            out[s : s + batch_size] = f.reshape(len(f), -1)
        return out

    def activations(self, x, layer, batch_size=512):
        out = []
        for s in range(0, len(x), batch_size):
            _, a, _ = self.forward(x[s : s + batch_size], train=False, upto=layer)
            out.append(a.reshape(len(a), -1))
        return np.concatenate(out)


def softmax_nll_loss(logits, labels, weights=None):
    """Weighted mean multinomial logistic loss and its gradient w.r.t. the logits.

    The loss is normalized by the sum of the weights, so a common rescaling
    of the weights changes nothing.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    B, k = logits.shape
    if labels.shape != (B,):
        raise ValueError("one label per row is required")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (B,) or not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be finite and positive, one per row")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(B), labels] - lse
    total = w.sum()
    loss = float(-(w * logp).sum() / total)
    probs = np.exp(z - lse[:, None])
    probs[np.arange(B), labels] -= 1.0
    dlogits = probs * (w / total)[:, None]
    return loss, dlogits.astype(logits.dtype)


def sgd_step(net: Net, grads, lr, momentum=0.9, weight_decay=0.0):
    """In-place momentum SGD; weight decay applies to conv/linear weights only."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    params = dict(net.named_params())
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        v = net.velocity[name]
        v *= momentum
        v += g
        if weight_decay and net.is_decayed(name):
            v += weight_decay * p
        p -= lr * v
