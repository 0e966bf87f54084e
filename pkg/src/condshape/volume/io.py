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
VOLF volume container.

Layout (little-endian, no padding):
    b"VOLF0001" | u32 header_len | UTF-8 JSON header | f32 payload (x-fastest)
"""

import json
import struct
from pathlib import Path
from typing import Union

import numpy as np
from loguru import logger

from condshape.errors import BadMagicError, PayloadLengthError, TruncatedFileError, VolumeFormatError
from condshape.volume.volume import Volume3

VOLF_MAGIC = b"VOLF0001"
_U32 = struct.Struct("<I")


def encode_header(vol: Volume3) -> bytes:
    header = {
        "dims": list(vol.dims),
        "spacing_mm": [float(s) for s in vol.spacing_mm],
        "kind": vol.kind.value,
        "dtype": "f32",
        "order": "x-fastest",
    }
    return json.dumps(header, separators=(",", ":")).encode("utf-8")


def volume_to_bytes(vol: Volume3) -> bytes:
    header = encode_header(vol)
    payload = vol.data.astype("<f4").ravel(order="F").tobytes()
    return VOLF_MAGIC + _U32.pack(len(header)) + header + payload


def volume_from_bytes(raw: bytes, source: str = "<bytes>") -> Volume3:
    if len(raw) < len(VOLF_MAGIC) or raw[:len(VOLF_MAGIC)] != VOLF_MAGIC:
        raise BadMagicError(f"bad magic in {source}: expected {VOLF_MAGIC!r}")

    pos = len(VOLF_MAGIC)
    if len(raw) < pos + _U32.size:
        raise TruncatedFileError(f"{source}: file ends inside the header length field")
    (header_len,) = _U32.unpack_from(raw, pos)
    pos += _U32.size

    if len(raw) < pos + header_len:
        raise TruncatedFileError(f"{source}: file ends inside the {header_len}-byte header")
    try:
        header = json.loads(raw[pos:pos + header_len].decode("utf-8"))
        dims = tuple(int(n) for n in header["dims"])
        spacing = tuple(float(s) for s in header["spacing_mm"])
        kind = header["kind"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise VolumeFormatError(f"{source}: unreadable header: {e}") from e
    if header.get("dtype", "f32") != "f32" or header.get("order", "x-fastest") != "x-fastest":
        raise VolumeFormatError(f"{source}: unsupported dtype/order {header.get('dtype')}/{header.get('order')}")
    if len(dims) != 3 or min(dims) < 1:
        raise VolumeFormatError(f"{source}: invalid dims {dims}")
    pos += header_len

    expected = 4 * dims[0] * dims[1] * dims[2]
    available = len(raw) - pos
    if available < expected:
        raise TruncatedFileError(f"{source}: payload has {available} bytes, header implies {expected}")
    if available > expected:
        raise PayloadLengthError(f"{source}: payload has {available} bytes, header implies {expected}")

    flat = np.frombuffer(raw, dtype="<f4", count=expected // 4, offset=pos)
    data = flat.reshape(dims, order="F").astype(np.float64)
    return Volume3(data=data, spacing_mm=spacing, kind=kind)


def write_volume(vol: Volume3, path: Union[str, Path]) -> None:
    """Write a volume as a VOLF file, creating parent directories"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(volume_to_bytes(vol))
    logger.debug(f"Wrote {vol.kind.value} volume {vol.dims} → {path}")


def read_volume(path: Union[str, Path]) -> Volume3:
    """
    Read a VOLF file.

    Raises:
        BadMagicError: First 8 bytes are not the magic
        TruncatedFileError: File ends before the header or payload is complete
        PayloadLengthError: Payload is longer than the header's dims imply
    """
    path = Path(path)
    vol = volume_from_bytes(path.read_bytes(), source=str(path))
    logger.debug(f"Read {vol.kind.value} volume {vol.dims} ← {path}")
    return vol
