"""Layers with parameters, plus a named :class:`Sequential` container."""

from __future__ import annotations

import hashlib
import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


def kaiming_uniform(rng, shape, fan_in, slope=0.01, dtype=np.float32):
    gain = math.sqrt(2.0 / (1.0 + slope ** 2))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def xavier_uniform(rng, shape, fan_in, fan_out, gain=1.0, dtype=np.float32):
    bound = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, x):
        raise NotImplementedError

    def children(self):
        for k, v in vars(self).items():
            if isinstance(v, Module):
                yield k, v
            elif isinstance(v, (list, tuple)) and v and all(isinstance(c, Module) for c in v):
                for i, c in enumerate(v):
                    yield f"{k}.{i}", c

    def named_parameters(self, prefix: str = ""):
        for k, v in vars(self).items():
            if isinstance(v, Parameter):
                yield prefix + k, v
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def train(self, mode: bool = True):
        self.training = mode
        for _, c in self.children():
            c.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
        return self

    def unfreeze(self):
        for p in self.parameters():
            p.requires_grad = True
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def spec(self) -> dict:
        return {"kind": type(self).__name__.upper()}


def checksum(params) -> str:
    """SHA-256 over the raw bytes of ``params`` (iterable of tensors)."""
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel_size, rng, slope=0.01, dtype=np.float32):
        self.c_in, self.c_out, self.kernel_size = c_in, c_out, kernel_size
        fan_in = c_in * kernel_size
        self.weight = Parameter(kaiming_uniform(rng, (c_out, c_in, kernel_size), fan_in, slope, dtype))
        bound = 1.0 / math.sqrt(fan_in)
        self.bias = Parameter(rng.uniform(-bound, bound, size=c_out).astype(dtype))

    def forward(self, x):
        return T.conv1d(x, self.weight, self.bias)

    def spec(self):
        return {"kind": "CONV1D", "channels": [self.c_in, self.c_out], "kernel_size": self.kernel_size, "stride": 1}


class ConvTranspose1d(Module):
    def __init__(self, c_in, c_out, kernel_size, rng, stride=2, padding=1, slope=0.01, dtype=np.float32):
        self.c_in, self.c_out, self.kernel_size = c_in, c_out, kernel_size
        self.stride, self.padding = stride, padding
        fan_in = c_in * kernel_size // stride
        self.weight = Parameter(kaiming_uniform(rng, (c_in, c_out, kernel_size), max(1, fan_in), slope, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))

    def forward(self, x):
        return T.conv_transpose1d(x, self.weight, self.bias, self.stride, self.padding)

    def spec(self):
        return {"kind": "TRANSPOSED_CONV1D", "channels": [self.c_in, self.c_out],
                "kernel_size": self.kernel_size, "stride": self.stride, "padding": self.padding}


class Dense(Module):
    def __init__(self, n_in, n_out, rng, init="kaiming", slope=0.01, dtype=np.float32):
        self.n_in, self.n_out = n_in, n_out
        if init == "xavier":
            w = xavier_uniform(rng, (n_in, n_out), n_in, n_out, dtype=dtype)
        elif init == "zeros":
            w = np.zeros((n_in, n_out), dtype=dtype)
        else:
            w = kaiming_uniform(rng, (n_in, n_out), n_in, slope, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(n_out, dtype=dtype))

    def forward(self, x):
        return T.matmul(x, self.weight) + self.bias

    def spec(self):
        return {"kind": "DENSE", "n_in": self.n_in, "n_out": self.n_out}


class MaxPool1d(Module):
    def __init__(self, m):
        self.m = int(m)

    def forward(self, x):
        return T.maxpool1d(x, self.m)

    def spec(self):
        return {"kind": "MAXPOOL1D", "pool_size": self.m, "stride": self.m}


class LeakyReLU(Module):
    def __init__(self, slope=0.01):
        self.slope = slope

    def forward(self, x):
        return T.leaky_relu(x, self.slope)

    def spec(self):
        return {"kind": "LEAKY_RELU", "negative_slope": self.slope}


class ReLU(Module):
    def forward(self, x):
        return T.relu(x)

    def spec(self):
        return {"kind": "RELU"}


class Tanh(Module):
    def forward(self, x):
        return T.tanh(x)

    def spec(self):
        return {"kind": "TANH"}


class Dropout(Module):
    def __init__(self, p, rng):
        self.p = float(p)
        self.rng = rng

    def forward(self, x):
        return T.dropout(x, self.p, self.rng, self.training)

    def spec(self):
        return {"kind": "DROPOUT", "dropout_p": self.p}


class Softmax(Module):
    def forward(self, x):
        return T.softmax(x, axis=-1)

    def spec(self):
        return {"kind": "SOFTMAX"}


class Flatten(Module):
    def forward(self, x):
        return x.reshape(x.shape[0], -1)

    def spec(self):
        return {"kind": "FLATTEN"}


class Sequential(Module):
    """Ordered, named layers.

    ``forward(x, until=a)`` stops after layer ``a``; ``forward(x, after=a)``
    resumes with the layer following ``a``.
    """

    def __init__(self, layers):
        self.names = [n for n, _ in layers]
        self.layers = [l for _, l in layers]
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate layer names")

    def children(self):
        yield from zip(self.names, self.layers)

    def __getitem__(self, name):
        return self.layers[self.names.index(name)]

    def __contains__(self, name):
        return name in self.names

    def __iter__(self):
        return iter(zip(self.names, self.layers))

    def forward(self, x, until: str | None = None, after: str | None = None):
        active = after is None
        for n, layer in zip(self.names, self.layers):
            if not active:
                active = n == after
                continue
            x = layer(x)
            if n == until:
                break
        return x

    def spec(self):
        return {"kind": "SEQUENTIAL", "layers": [dict(name=n, **l.spec()) for n, l in self]}


class BatchNorm1d(Module):
    """Per-channel normalization over batch and length of ``[B, C, L]`` inputs."""

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.channels = channels
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter(np.ones((1, channels, 1), dtype=dtype))
        self.beta = Parameter(np.zeros((1, channels, 1), dtype=dtype))
        self.running_mean = np.zeros((1, channels, 1), dtype=dtype)
        self.running_var = np.ones((1, channels, 1), dtype=dtype)

    def forward(self, x):
        if self.training:
            mu = x.mean(axis=(0, 2), keepdims=True)
            d = x - mu
            var = (d * d).mean(axis=(0, 2), keepdims=True)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu.data
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var.data
            xhat = d / ((var + self.eps) ** 0.5)
        else:
            xhat = (x - self.running_mean) * (1.0 / np.sqrt(self.running_var + self.eps))
        return xhat * self.gamma + self.beta

    def spec(self):
        return {"kind": "BATCHNORM1D", "channels": self.channels}
