"""
Parameter registry and the standard layers the classifiers are built from.
"""
from typing import Dict, Iterator, List, Tuple

import numpy as np

from .tensor import DTYPE, Tensor, batchnorm1d, conv1d, layer_norm


class Parameter(Tensor):
    """
    A learnable tensor. Its name is the dotted attribute path inside the
    model that owns it and is filled in when the model enumerates parameters.
    """

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    """
    Samples weights uniformly on +/- sqrt(6 / (fan_in + fan_out)).
    """
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """
    Base class for anything holding parameters.

    Parameters, buffers and sub-modules are discovered from instance
    attributes in assignment order, so enumeration is deterministic.
    Attributes whose names start with an underscore are skipped.
    """

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    yield f"{name}.{i}", item
            else:
                yield name, value

    def named_parameters(self, prefix: str = "", _seen=None) -> Iterator[Tuple[str, Parameter]]:
        seen = set() if _seen is None else _seen
        for name, value in self._children():
            path = prefix + name
            if isinstance(value, Parameter):
                if id(value) in seen:
                    continue
                seen.add(id(value))
                value.name = path
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".", seen)

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def register_buffer(self, name: str, array: np.ndarray):
        if not hasattr(self, "_buffers"):
            self._buffers = {}
        self._buffers[name] = np.array(array, dtype=DTYPE)

    def buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, array in getattr(self, "_buffers", {}).items():
            yield prefix + name, array
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def state_dict(self) -> Dict[str, np.ndarray]:
        """
        Returns parameter and buffer arrays keyed by name. Buffer names are
        prefixed with "buffer:" so the two kinds never collide.
        """
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({f"buffer:{name}": array for name, array in self.named_buffers()})
        return state

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Dense(Module):
    """
    Affine map over the last axis: y = x W^T + b, with W of shape (out, in).
    """

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(
            glorot_uniform(rng, (out_features, in_features), in_features, out_features)
        )
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x):
        out = x @ self.weight.transpose()
        if self.bias is not None:
            out = out + self.bias
        return out


class Conv1d(Module):
    """
    Length-preserving convolution over (B, C_in, N) inputs.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator):
        self.weight = Parameter(
            glorot_uniform(
                rng,
                (out_channels, in_channels, kernel_size),
                in_channels * kernel_size,
                out_channels * kernel_size,
            )
        )
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x):
        return conv1d(x, self.weight, self.bias)


class BatchNorm1d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.momentum = momentum
        self.eps = eps
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x):
        return batchnorm1d(
            x,
            self.gamma,
            self.beta,
            self.buffer("running_mean"),
            self.buffer("running_var"),
            mode="train" if self.training else "eval",
            momentum=self.momentum,
            eps=self.eps,
        )


class LayerNorm(Module):
    def __init__(self, features: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(features))
        self.beta = Parameter(np.zeros(features))
        self.eps = eps

    def forward(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)
