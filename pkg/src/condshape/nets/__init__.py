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

from condshape.nets.unet import (
    OutActivation,
    UNet,
    UNetConfig,
    UNetRole,
    build_unet,
    load_unet,
    predict_volume,
    save_unet,
    unet_forward,
)
from condshape.nets.training import (
    BaselineTrainConfig,
    EdgeTrainConfig,
    TrainConfig,
    TrainResult,
    patch_corner,
    train_baseline,
    train_edge_detector,
)

__all__ = [
    'OutActivation',
    'UNet',
    'UNetConfig',
    'UNetRole',
    'build_unet',
    'load_unet',
    'predict_volume',
    'save_unet',
    'unet_forward',
    'BaselineTrainConfig',
    'EdgeTrainConfig',
    'TrainConfig',
    'TrainResult',
    'patch_corner',
    'train_baseline',
    'train_edge_detector',
]
