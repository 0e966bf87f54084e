# Copyright 2024-present The condshape Authors. All rights reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""
Layers and the flat parameter store.

A Module owns every parameter and buffer of a network under dotted names
("enc0.conv1.weight"); layers keep references to the tensors they use, so
optimizer updates and checkpoint loads (both in place) are seen immediately.
"""

from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from condshape.errors import CheckpointFormatError, ShapeError
from condshape.tensorgrad import ops
from condshape.tensorgrad.tensor import Tensor, default_dtype


class Module:
    """Flat, named parameter and buffer store with train/eval mode"""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.training = True

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._buffers:
            raise ValueError(f"duplicate buffer name {name}")
        arr = np.array(value, dtype=default_dtype())
        self._buffers[name] = arr
        return arr

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return list(self._params.items())

    def parameters(self) -> List[Tensor]:
        return list(self._params.values())

    def named_buffers(self) -> List[Tuple[str, np.ndarray]]:
        return list(self._buffers.items())

    def train(self) -> "Module":
        self.training = True
        return self

    def eval(self) -> "Module":
        self.training = False
        return self

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters then buffers, in registration order"""
        state = OrderedDict((name, t.data) for name, t in self._params.items())
        state.update(self._buffers)
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """
        Copy values in place.

        Raises:
            CheckpointFormatError: Missing or unexpected names, or shape mismatch
        """
        targets: Dict[str, np.ndarray] = {name: t.data for name, t in self._params.items()}
        targets.update(self._buffers)
        missing = sorted(set(targets) - set(state))
        extra = sorted(set(state) - set(targets))
        if missing or extra:
            raise CheckpointFormatError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, target in targets.items():
            value = np.asarray(state[name])
            if value.shape != target.shape:
                raise CheckpointFormatError(f"{name}: checkpoint shape {value.shape}, model shape {target.shape}")
            target[...] = value


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in))"""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """A named layer; check() validates the input contract before forward()"""

    name: str = "layer"

    def expected(self) -> str:
        return "any"

    def check(self, *inputs: Tensor) -> None:
        pass

    def forward(self, *inputs: Tensor) -> Tensor:
        raise NotImplementedError

    def _fail(self, actual) -> None:
        raise ShapeError(f"{self.name}: expected input {self.expected()}, got {actual}")

    def __call__(self, *inputs: Tensor) -> Tensor:
        return apply_layer(self, *inputs)


def apply_layer(layer: Layer, *inputs: Tensor) -> Tensor:
    """
    Validate the input shapes against the layer's contract, then run it.

    Raises:
        ShapeError: Names the layer, the expected and the actual shapes
    """
    layer.check(*inputs)
    return layer.forward(*inputs)


class Conv3d(Layer):
    def __init__(self, module: Module, name: str, in_channels: int, out_channels: int,
                 kernel: int = 3, stride: int = 1, rng: Optional[np.random.Generator] = None):
        if stride not in (1, 2):
            raise ValueError(f"conv3d stride must be 1 or 2, got {stride}")
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel ** 3
        self.name = name
        self.in_channels = in_channels
        self.stride = stride
        self.weight = module.add_param(f"{name}.weight", uniform_init(rng, (out_channels, in_channels) + (kernel,) * 3, fan_in))
        self.bias = module.add_param(f"{name}.bias", uniform_init(rng, (out_channels,), fan_in))

    def expected(self) -> str:
        return f"(N, {self.in_channels}, X, Y, Z)"

    def check(self, x: Tensor) -> None:
        if x.ndim != 5 or x.shape[1] != self.in_channels:
            self._fail(x.shape)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.weight, self.bias, self.stride)


class BatchNorm(Layer):
    def __init__(self, module: Module, name: str, channels: int):
        self.name = name
        self.module = module
        self.channels = channels
        self.gamma = module.add_param(f"{name}.gamma", np.ones(channels))
        self.beta = module.add_param(f"{name}.beta", np.zeros(channels))
        self.running_mean = module.add_buffer(f"{name}.running_mean", np.zeros(channels))
        self.running_var = module.add_buffer(f"{name}.running_var", np.ones(channels))

    def expected(self) -> str:
        return f"(N, {self.channels}, ...)"

    def check(self, x: Tensor) -> None:
        if x.ndim < 2 or x.shape[1] != self.channels:
            self._fail(x.shape)

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, self.module.training)


class Linear(Layer):
    def __init__(self, module: Module, name: str, in_features: int, out_features: int,
                 rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng(0)
        self.name = name
        self.in_features = in_features
        self.weight = module.add_param(f"{name}.weight", uniform_init(rng, (out_features, in_features), in_features))
        self.bias = module.add_param(f"{name}.bias", uniform_init(rng, (out_features,), in_features))

    def expected(self) -> str:
        return f"(P, {self.in_features})"

    def check(self, x: Tensor) -> None:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            self._fail(x.shape)

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LeakyReLU(Layer):
    name = "leaky_relu"

    def forward(self, x: Tensor) -> Tensor:
        return ops.leaky_relu(x)


class Sigmoid(Layer):
    name = "sigmoid"

    def forward(self, x: Tensor) -> Tensor:
        return ops.sigmoid(x)


class MaxDownsample(Layer):
    name = "max_downsample"

    def expected(self) -> str:
        return "(N, C, X, Y, Z) with even X, Y, Z"

    def check(self, x: Tensor) -> None:
        if x.ndim != 5 or any(n % 2 for n in x.shape[2:]):
            self._fail(x.shape)

    def forward(self, x: Tensor) -> Tensor:
        return ops.max_downsample(x)


class NearestUpsample(Layer):
    name = "nearest_upsample"

    def expected(self) -> str:
        return "(N, C, X, Y, Z)"

    def check(self, x: Tensor) -> None:
        if x.ndim != 5:
            self._fail(x.shape)

    def forward(self, x: Tensor) -> Tensor:
        return ops.nearest_upsample(x)


class Concat(Layer):
    """Channel concatenation; all inputs must agree on every other axis"""

    def __init__(self, name: str = "concat", axis: int = 1):
        self.name = name
        self.axis = axis

    def expected(self) -> str:
        return f"tensors equal on every axis but {self.axis}"

    def check(self, *inputs: Tensor) -> None:
        if not inputs:
            self._fail("no inputs")
        ref = list(inputs[0].shape)
        for t in inputs[1:]:
            other = list(t.shape)
            if len(other) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, other)) if i != self.axis):
                self._fail([x.shape for x in inputs])

    def forward(self, *inputs: Tensor) -> Tensor:
        return ops.concat(inputs, axis=self.axis)


class ConvBlock:
    """(conv3d, batch_norm, leaky_relu) x 2"""

    def __init__(self, module: Module, name: str, in_channels: int, out_channels: int,
                 rng: np.random.Generator, repeats: int = 2):
        self.layers: List[Layer] = []
        c = in_channels
        for r in range(repeats):
            self.layers.append(Conv3d(module, f"{name}.conv{r}", c, out_channels, rng=rng))
            self.layers.append(BatchNorm(module, f"{name}.bn{r}", out_channels))
            self.layers.append(LeakyReLU())
            c = out_channels

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = apply_layer(layer, x)
        return x


def mlp_widths(widths: Sequence[int]) -> List[Tuple[int, int]]:
    return list(zip(widths[:-1], widths[1:]))
