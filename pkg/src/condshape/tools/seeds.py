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
Sub-seed derivation.

All randomness flows from one root seed. A component asks for
derive_seed(root, tag, ...) with a purpose tag and any indices (case index,
epoch, sample index); the result is the first 8 bytes of
sha256("root:tag:..."), masked to 63 bits. Components can therefore be rerun in
isolation and calls never share a stream by accident.
"""

import hashlib
from typing import Union

import numpy as np

Tag = Union[str, int]


def derive_seed(root: int, *tags: Tag) -> int:
    """Deterministic 63-bit sub-seed for (root, *tags)"""
    key = ":".join([str(int(root))] + [str(t) for t in tags])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def rng_for(root: int, *tags: Tag) -> np.random.Generator:
    """numpy Generator seeded with derive_seed(root, *tags)"""
    return np.random.default_rng(derive_seed(root, *tags))
