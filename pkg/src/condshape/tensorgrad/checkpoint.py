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
CKPT checkpoint container.

Layout (little-endian, no padding):
    b"CKPT0001" | u32 manifest_len | JSON manifest | f32 tensors in manifest order
    | [f32 Adam m tensors | f32 Adam v tensors]   (parameters only, when present)

The manifest is written with sorted keys so identical models give identical
bytes.
"""

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from loguru import logger

from condshape.errors import CheckpointFormatError
from condshape.tensorgrad.nn import Module
from condshape.tensorgrad.optim import AdamState

CKPT_MAGIC = b"CKPT0001"
_U32 = struct.Struct("<I")


def _f32(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _require_f32(name: str, arr: np.ndarray) -> None:
    if arr.dtype != np.float32:
        raise CheckpointFormatError(f"{name}: checkpoints store float32, got {arr.dtype} "
                                    f"(model built under wide_precision?)")


def checkpoint_bytes(
    model: Module,
    optimizer: Optional[AdamState] = None,
    hyperparameters: Optional[Dict[str, Any]] = None,
) -> bytes:
    """
    Raises:
        CheckpointFormatError: A parameter or buffer is not float32, so the
            round trip would lose precision
    """
    state = model.state_dict()
    for name, arr in state.items():
        _require_f32(name, arr)
    param_names = [name for name, _ in model.named_parameters()]
    manifest: Dict[str, Any] = {
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in state.items()],
        "optimizer_state": optimizer is not None,
        "hyperparameters": hyperparameters or {},
    }
    if optimizer is not None:
        manifest["optimizer"] = optimizer.hyperparameters()
        manifest["optimizer_tensors"] = param_names

    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [CKPT_MAGIC, _U32.pack(len(header)), header]
    chunks.extend(_f32(arr) for arr in state.values())
    if optimizer is not None:
        for moments in (optimizer.m, optimizer.v):
            for name in param_names:
                chunks.append(_f32(moments.get(name, np.zeros_like(state[name]))))
    return b"".join(chunks)


def parse_checkpoint(raw: bytes, source: str = "<bytes>") -> Tuple[Dict[str, Any], "OrderedDict[str, np.ndarray]", Optional[AdamState]]:
    """
    Decode a checkpoint into (manifest, tensors, optimizer state or None).

    Raises:
        CheckpointFormatError: Bad magic, truncated or oversized payload, bad manifest
    """
    if raw[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointFormatError(f"bad magic in {source}: expected {CKPT_MAGIC!r}")
    pos = len(CKPT_MAGIC)
    if len(raw) < pos + _U32.size:
        raise CheckpointFormatError(f"{source}: truncated before manifest length")
    (header_len,) = _U32.unpack_from(raw, pos)
    pos += _U32.size
    try:
        manifest = json.loads(raw[pos:pos + header_len].decode("utf-8"))
        entries = [(e["name"], tuple(int(n) for n in e["shape"])) for e in manifest["tensors"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CheckpointFormatError(f"{source}: unreadable manifest: {e}") from e
    pos += header_len

    def take(shape: Tuple[int, ...], name: str) -> np.ndarray:
        nonlocal pos
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 4 * count
        if end > len(raw):
            raise CheckpointFormatError(f"{source}: payload truncated in {name}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape).copy()
        pos = end
        return arr

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict((name, take(shape, name)) for name, shape in entries)

    optimizer = None
    if manifest.get("optimizer_state"):
        shapes = dict(entries)
        opt = manifest.get("optimizer", {})
        names = manifest.get("optimizer_tensors", [])
        optimizer = AdamState(
            lr=float(opt.get("lr", 0.001)),
            beta1=float(opt.get("beta1", 0.9)),
            beta2=float(opt.get("beta2", 0.999)),
            eps=float(opt.get("eps", 1e-8)),
            step=int(opt.get("step", 0)),
        )
        for name in names:
            optimizer.m[name] = take(shapes[name], f"m:{name}")
        for name in names:
            optimizer.v[name] = take(shapes[name], f"v:{name}")

    if pos != len(raw):
        raise CheckpointFormatError(f"{source}: {len(raw) - pos} trailing bytes after payload")
    return manifest, tensors, optimizer


def save_checkpoint(
    model: Module,
    path: Union[str, Path],
    optimizer: Optional[AdamState] = None,
    hyperparameters: Optional[Dict[str, Any]] = None,
) -> str:
    """Write a checkpoint; returns its sha256 hex digest"""
    raw = checkpoint_bytes(model, optimizer, hyperparameters)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(raw)
    digest = hashlib.sha256(raw).hexdigest()
    logger.debug(f"Saved checkpoint ({len(raw)} bytes, sha256 {digest[:12]}) → {path}")
    return digest


def load_checkpoint(model: Module, path: Union[str, Path]) -> Tuple[Dict[str, Any], Optional[AdamState]]:
    """Load tensors into model in place; returns (manifest, optimizer state or None)"""
    path = Path(path)
    manifest, tensors, optimizer = parse_checkpoint(path.read_bytes(), source=str(path))
    model.load_state_dict(tensors)
    logger.debug(f"Loaded checkpoint ← {path}")
    return manifest, optimizer


def read_manifest(path: Union[str, Path]) -> Dict[str, Any]:
    manifest, _, _ = parse_checkpoint(Path(path).read_bytes(), source=str(path))
    return manifest


def model_hash(model: Module, hyperparameters: Optional[Dict[str, Any]] = None) -> str:
    """sha256 of the checkpoint bytes the model would be saved as (no optimizer state)"""
    return hashlib.sha256(checkpoint_bytes(model, None, hyperparameters)).hexdigest()


def file_hash(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
