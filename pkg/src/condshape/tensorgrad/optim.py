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

"""Adam with bias correction"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from condshape.errors import ShapeError
from condshape.tensorgrad.nn import Module


@dataclass
class AdamState:
    """
    Optimizer state. m and v are keyed by parameter name and created lazily as
    zeros on the first step that sees the parameter.
    """
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def hyperparameters(self) -> Dict[str, float]:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "step": self.step}


def _update(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray, state: AdamState) -> None:
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1 ** state.step)
    v_hat = v / (1.0 - state.beta2 ** state.step)
    p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)


def _check(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        if name not in grads:
            raise ShapeError(f"adam_step: no gradient for {name}")
        if np.shape(grads[name]) != p.shape:
            raise ShapeError(f"adam_step: {name} has shape {p.shape}, gradient {np.shape(grads[name])}")


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One bias-corrected Adam update; inputs are left untouched.

    Returns:
        (updated parameter copies, new state with step + 1)

    Raises:
        ShapeError: A gradient is missing or its shape differs from the parameter
    """
    _check(params, grads)
    new_state = AdamState(lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps, step=state.step + 1)
    new_params = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        m = state.m[name].copy() if name in state.m else np.zeros_like(p)
        v = state.v[name].copy() if name in state.v else np.zeros_like(p)
        q = p.copy()
        _update(q, g, m, v, new_state)
        new_params[name] = q
        new_state.m[name] = m
        new_state.v[name] = v
    return new_params, new_state


class Adam:
    """In-place Adam over a Module's parameters (each param's .grad is the gradient)"""

    def __init__(self, module: Module, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, state: Optional[AdamState] = None):
        self.module = module
        self.state = state or AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        params = {name: t.data for name, t in self.module.named_parameters()}
        grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for name, t in self.module.named_parameters()}
        _check(params, grads)
        self.state.step += 1
        for name, p in params.items():
            if name not in self.state.m:
                self.state.m[name] = np.zeros_like(p)
                self.state.v[name] = np.zeros_like(p)
            _update(p, np.asarray(grads[name], dtype=p.dtype), self.state.m[name], self.state.v[name], self.state)

    def zero_grad(self) -> None:
        self.module.zero_grad()
