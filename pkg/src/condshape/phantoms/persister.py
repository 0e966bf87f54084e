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

"""DatasetPersister: save and reload phantom datasets"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from loguru import logger

from condshape.errors import DatasetError
from condshape.phantoms.models import Domain, PartRole, PhantomCase, PhantomSpec
from condshape.volume import read_volume, write_volume

MANIFEST = "manifest.json"
INTENSITY_FILE = "intensity.vol"
SPEC_FILE = "spec.json"


def mask_file(role: str) -> str:
    return f"mask_{PartRole(role).value}.vol"


class DatasetPersister:
    """
    Save a dataset to disk.

    Layout:
        <out_dir>/manifest.json            domain, case ids, generating config
        <out_dir>/<case_id>/intensity.vol
        <out_dir>/<case_id>/mask_<role>.vol
        <out_dir>/<case_id>/spec.json
    """

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        logger.debug(f"DatasetPersister initialized: out={self.out_dir}")

    def save(self, cases: List[PhantomCase], config: Optional[Dict[str, Any]] = None) -> Path:
        if not cases:
            raise DatasetError("no cases to save")
        domains = {c.domain for c in cases}
        if len(domains) != 1:
            raise DatasetError(f"a dataset holds one domain, got {sorted(d.value for d in domains)}")

        logger.info(f"Saving {len(cases)} cases → {self.out_dir}")
        for case in cases:
            self._save_case(case)
        self._save_manifest(cases, config or {})
        logger.info(f"Saved {len(cases)} cases")
        return self.out_dir

    def _save_case(self, case: PhantomCase) -> None:
        case_dir = self.out_dir / case.case_id
        write_volume(case.intensity, case_dir / INTENSITY_FILE)
        for role, mask in case.masks.items():
            write_volume(mask, case_dir / mask_file(role))
        (case_dir / SPEC_FILE).write_text(case.spec.to_json(), encoding="utf-8")

    def _save_manifest(self, cases: List[PhantomCase], config: Dict[str, Any]) -> None:
        manifest = {
            "domain": cases[0].domain.value,
            "cases": [{"id": c.case_id, **c.meta} for c in cases],
            "config": config,
        }
        path = self.out_dir / MANIFEST
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        logger.debug(f"Saved manifest → {path}")


def read_manifest(data_dir: Union[str, Path]) -> Dict[str, Any]:
    path = Path(data_dir) / MANIFEST
    if not path.exists():
        raise DatasetError(f"dataset manifest not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetError(f"unreadable manifest {path}: {e}") from e


def load_case(case_dir: Union[str, Path], domain: Domain, meta: Optional[Dict[str, Any]] = None) -> PhantomCase:
    case_dir = Path(case_dir)
    if not (case_dir / INTENSITY_FILE).exists():
        raise DatasetError(f"missing {INTENSITY_FILE} in {case_dir}")
    masks = {}
    for role in PartRole.all():
        path = case_dir / mask_file(role.value)
        if path.exists():
            masks[role.value] = read_volume(path)
    if PartRole.TARGET_CAVITY.value not in masks:
        raise DatasetError(f"missing {mask_file(PartRole.TARGET_CAVITY.value)} in {case_dir}")
    spec = PhantomSpec.from_dict(json.loads((case_dir / SPEC_FILE).read_text(encoding="utf-8")))
    return PhantomCase(
        case_id=case_dir.name,
        domain=domain,
        intensity=read_volume(case_dir / INTENSITY_FILE),
        masks=masks,
        spec=spec,
        meta=dict(meta or {}),
    )


def load_dataset(data_dir: Union[str, Path]) -> List[PhantomCase]:
    """
    Load a dataset saved by DatasetPersister, in manifest order.

    The domain tag comes from the manifest, so reloaded cases keep their origin.

    Raises:
        DatasetError: Missing manifest or case files
    """
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir)
    domain = Domain(manifest["domain"])
    cases = []
    for entry in manifest["cases"]:
        meta = {k: v for k, v in entry.items() if k != "id"}
        cases.append(load_case(data_dir / entry["id"], domain, meta))
    logger.info(f"Loaded {len(cases)} {domain.value} cases ← {data_dir}")
    return cases
