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
Configurable 3D UNet, used as the target-domain edge detector and as the
image-to-mask baseline.

    encoder:    [ConvBlock(c_k) -> max_downsample] for k = 1..D
    bottleneck: ConvBlock(c_D)
    decoder:    [nearest_upsample -> concat(skip_k) -> ConvBlock(c_k)] for k = D..1
    head:       1x1x1 conv -> sigmoid
"""

from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field, model_validator

from condshape.errors import CheckpointFormatError, ConfigError, ShapeError
from condshape.tensorgrad import (
    Concat,
    Conv3d,
    ConvBlock,
    MaxDownsample,
    Module,
    NearestUpsample,
    Sigmoid,
    Tensor,
    apply_layer,
    load_checkpoint,
    no_grad,
    save_checkpoint,
)
from condshape.tensorgrad.checkpoint import read_manifest
from condshape.volume import Volume3, VolumeKind, extract_patch, pad_to_multiple


class UNetRole(str, Enum):
    EDGE_DETECTOR = "edge_detector"
    BASELINE = "baseline"


class OutActivation(str, Enum):
    SIGMOID = "sigmoid"
    NONE = "none"


class UNetConfig(BaseModel):
    """
    Attributes:
        down_channels: Channels per encoder stage before the width factor
        width: Multiplier applied to every channel count (min 1 channel)
        patch_size: Training/inference cube side; must be divisible by 2^len(down_channels)
    """
    down_channels: List[int] = Field(default_factory=lambda: [32, 64, 128, 256])
    out_channels: int = 1
    out_activation: OutActivation = OutActivation.SIGMOID
    role: UNetRole = UNetRole.EDGE_DETECTOR
    in_channels: int = 1
    width: float = Field(default=0.25, gt=0.0)
    patch_size: int = Field(default=32, ge=2)

    @model_validator(mode="after")
    def check_contract(self):
        if not self.down_channels or any(c < 1 for c in self.down_channels):
            raise ValueError("down_channels must be a nonempty list of positive integers")
        if self.out_channels != 1 or self.out_activation != OutActivation.SIGMOID:
            raise ValueError(f"{self.role.value} UNet needs out_channels=1 with sigmoid output")
        return self

    @property
    def depth(self) -> int:
        return len(self.down_channels)

    def scaled_channels(self) -> List[int]:
        return [max(1, int(round(c * self.width))) for c in self.down_channels]

    @classmethod
    def edge_detector(cls, **kwargs) -> "UNetConfig":
        return cls(down_channels=[32, 64, 128, 256], role=UNetRole.EDGE_DETECTOR, **kwargs)

    @classmethod
    def baseline(cls, **kwargs) -> "UNetConfig":
        return cls(down_channels=[32, 64, 128, 256, 256], role=UNetRole.BASELINE, **kwargs)


class UNet(Module):
    def __init__(self, cfg: UNetConfig, seed: int):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        chans = cfg.scaled_channels()

        self.encoders: List[ConvBlock] = []
        c_in = cfg.in_channels
        for k, c in enumerate(chans):
            self.encoders.append(ConvBlock(self, f"enc{k}", c_in, c, rng))
            c_in = c
        self.bottleneck = ConvBlock(self, "bottleneck", c_in, chans[-1], rng)

        self.decoders: List[ConvBlock] = []
        c_below = chans[-1]
        for k in reversed(range(len(chans))):
            self.decoders.append(ConvBlock(self, f"dec{k}", c_below + chans[k], chans[k], rng))
            c_below = chans[k]

        self.head = Conv3d(self, "head", chans[0], cfg.out_channels, kernel=1, rng=rng)
        self.down = MaxDownsample()
        self.up = NearestUpsample()
        self.concat = Concat("skip_concat")
        self.out = Sigmoid() if cfg.out_activation == OutActivation.SIGMOID else None

    @property
    def stride(self) -> int:
        return 2 ** self.cfg.depth

    def forward(self, x: Tensor) -> Tensor:
        side = x.shape[2:]
        if any(n % self.stride for n in side):
            raise ShapeError(f"unet: spatial dims {side} must be divisible by {self.stride} (depth {self.cfg.depth})")
        skips = []
        for block in self.encoders:
            x = block(x)
            skips.append(x)
            x = apply_layer(self.down, x)
        x = self.bottleneck(x)
        for block, skip in zip(self.decoders, reversed(skips)):
            x = apply_layer(self.up, x)
            x = apply_layer(self.concat, x, skip)
            x = block(x)
        x = apply_layer(self.head, x)
        return apply_layer(self.out, x) if self.out is not None else x


def build_unet(cfg: UNetConfig, seed: int) -> UNet:
    """
    Deterministic UNet per (cfg, seed), fan-in scaled uniform init.

    Raises:
        ConfigError: patch_size not divisible by 2^depth
    """
    if cfg.patch_size % (2 ** cfg.depth):
        raise ConfigError(f"patch_size {cfg.patch_size} not divisible by 2^{cfg.depth}")
    model = UNet(cfg, seed)
    logger.debug(f"Built {cfg.role.value} UNet: depth={cfg.depth} channels={cfg.scaled_channels()} "
                 f"params={model.num_parameters()}")
    return model


def unet_forward(model: UNet, patch: Tensor) -> Tensor:
    """
    Run the UNet on C x S x S x S (or N x C x S x S x S) input.

    Raises:
        ShapeError: Spatial side not divisible by 2^depth, or wrong channel count
    """
    if patch.ndim == 4:
        out = model.forward(patch.reshape(1, *patch.shape))
        return out.reshape(*out.shape[1:])
    if patch.ndim != 5:
        raise ShapeError(f"unet: expected C x S x S x S or N x C x S x S x S input, got {patch.shape}")
    return model.forward(patch)


def to_input(arrays: List[np.ndarray]) -> Tensor:
    """Stack 3D arrays into an N x 1 x X x Y x Z tensor"""
    return Tensor(np.stack([a[None] for a in arrays]))


def predict_volume(model: UNet, intensity: Volume3, kind: VolumeKind = VolumeKind.EDGE_MAP) -> Volume3:
    """
    Tiled full-volume inference: replicate-pad to a multiple of the patch side,
    run non-overlapping tiles in eval mode without a graph, crop back.
    """
    size = model.cfg.patch_size
    padded, dims = pad_to_multiple(intensity.data, size)
    out = np.zeros(padded.shape, dtype=np.float64)
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            for x in range(0, padded.shape[0], size):
                for y in range(0, padded.shape[1], size):
                    for z in range(0, padded.shape[2], size):
                        tile = extract_patch(padded, (x, y, z), size)
                        pred = unet_forward(model, to_input([tile]))
                        out[x:x + size, y:y + size, z:z + size] = pred.data[0, 0]
    finally:
        if was_training:
            model.train()
    values = np.clip(out[:dims[0], :dims[1], :dims[2]], 0.0, 1.0)
    if kind is VolumeKind.MASK:
        values = (values >= 0.5).astype(np.float64)
    return intensity.with_data(values, kind=kind)


def snapshot(model: Module) -> Dict[str, np.ndarray]:
    """Copy of the model state (parameters and buffers)"""
    return {name: arr.copy() for name, arr in model.state_dict().items()}


def hyperparameters(cfg: UNetConfig, extra: Optional[dict] = None) -> dict:
    """Checkpoint manifest hyperparameters for a UNet"""
    out = {"unet": cfg.model_dump(mode="json")}
    out.update(extra or {})
    return out


def save_unet(model: UNet, path: Union[str, Path], extra: Optional[dict] = None) -> str:
    """Checkpoint with the UNet config in its hyperparameters; returns the sha256"""
    return save_checkpoint(model, path, hyperparameters=hyperparameters(model.cfg, extra))


def load_unet(path: Union[str, Path]) -> UNet:
    """
    Raises:
        CheckpointFormatError: Manifest lacks a valid UNet config
    """
    manifest = read_manifest(path)
    try:
        cfg = UNetConfig.model_validate(manifest["hyperparameters"]["unet"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointFormatError(f"{path}: checkpoint has no usable UNet config: {e}") from e
    model = UNet(cfg, seed=0)
    load_checkpoint(model, path)
    return model
