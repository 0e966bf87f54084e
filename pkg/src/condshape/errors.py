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
Exception hierarchy for condshape.

Every error raised on purpose by the package derives from CondShapeError and
carries a short machine-readable code, which the CLI prints as JSON on stderr.
"""

from typing import Any, Dict


class CondShapeError(Exception):
    """Base class for all condshape errors"""

    code: str = "condshape_error"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": self.code,
            "type": self.__class__.__name__,
            "message": str(self),
        }


class VolumeError(CondShapeError):
    """Invalid volume construction or out-of-domain geometric query"""
    code = "volume_domain"


class KindError(CondShapeError):
    """Volume kind does not match what the operation expects"""
    code = "volume_kind"


class VolumeFormatError(CondShapeError):
    """Malformed VOLF container"""
    code = "volume_format"


class BadMagicError(VolumeFormatError):
    code = "bad_magic"


class TruncatedFileError(VolumeFormatError):
    code = "truncated"


class PayloadLengthError(VolumeFormatError):
    code = "payload_length_mismatch"


class ShapeError(CondShapeError):
    """Tensor shape does not satisfy a layer contract"""
    code = "shape_mismatch"


class ContractError(CondShapeError):
    """API misuse, e.g. backward on a non-scalar"""
    code = "contract"


class CheckpointFormatError(CondShapeError):
    code = "checkpoint_format"


class ConfigError(CondShapeError):
    code = "config"


class DomainTagError(CondShapeError):
    """A case from the wrong domain reached a domain-restricted trainer"""
    code = "domain_tag"


class DatasetError(CondShapeError):
    code = "dataset"


class MetricsError(CondShapeError):
    code = "metrics"


class EmptySurfaceError(MetricsError):
    code = "empty_surface"
