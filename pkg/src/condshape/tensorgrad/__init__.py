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

"""Minimal dense-tensor reverse-mode autodiff with the layers and optimizer the networks need"""

from condshape.tensorgrad.tensor import (
    Tensor,
    backward,
    default_dtype,
    is_grad_enabled,
    no_grad,
    wide_precision,
)
from condshape.tensorgrad.ops import (
    batch_norm,
    bce_loss,
    concat,
    conv3d,
    jaccard_loss,
    leaky_relu,
    linear,
    max_downsample,
    mse_loss,
    nearest_upsample,
    sigmoid,
    trilinear_gather,
)
from condshape.tensorgrad.nn import (
    BatchNorm,
    Concat,
    Conv3d,
    ConvBlock,
    Layer,
    LeakyReLU,
    Linear,
    MaxDownsample,
    Module,
    NearestUpsample,
    Sigmoid,
    apply_layer,
)
from condshape.tensorgrad.optim import Adam, AdamState, adam_step
from condshape.tensorgrad.checkpoint import (
    CKPT_MAGIC,
    checkpoint_bytes,
    file_hash,
    load_checkpoint,
    model_hash,
    parse_checkpoint,
    save_checkpoint,
)

__all__ = [
    'Tensor', 'backward', 'default_dtype', 'is_grad_enabled', 'no_grad', 'wide_precision',
    'batch_norm', 'bce_loss', 'concat', 'conv3d', 'jaccard_loss', 'leaky_relu', 'linear',
    'max_downsample', 'mse_loss', 'nearest_upsample', 'sigmoid', 'trilinear_gather',
    'BatchNorm', 'Concat', 'Conv3d', 'ConvBlock', 'Layer', 'LeakyReLU', 'Linear',
    'MaxDownsample', 'Module', 'NearestUpsample', 'Sigmoid', 'apply_layer',
    'Adam', 'AdamState', 'adam_step',
    'CKPT_MAGIC', 'checkpoint_bytes', 'file_hash', 'load_checkpoint', 'model_hash',
    'parse_checkpoint', 'save_checkpoint',
]
