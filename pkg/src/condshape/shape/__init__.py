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

from condshape.shape.model import (
    FeatureLevel,
    FeaturePyramid,
    PointFeatureConfig,
    SamplingConfig,
    ShapeModel,
    ShapeModelConfig,
    build_shape_model,
    decode_occupancy,
    encode,
    point_features,
)
from condshape.shape.sampling import sample_training_points
from condshape.shape.training import ShapeTrainResult, train_shape_model
from condshape.shape.inference import (
    BaselineSegmenter,
    DcsmSegmenter,
    infer_mask,
    load_shape_model,
    save_shape_model,
    shape_model_hash,
)

__all__ = [
    'FeatureLevel',
    'FeaturePyramid',
    'PointFeatureConfig',
    'SamplingConfig',
    'ShapeModel',
    'ShapeModelConfig',
    'build_shape_model',
    'decode_occupancy',
    'encode',
    'point_features',
    'sample_training_points',
    'ShapeTrainResult',
    'train_shape_model',
    'BaselineSegmenter',
    'DcsmSegmenter',
    'infer_mask',
    'load_shape_model',
    'save_shape_model',
    'shape_model_hash',
]
