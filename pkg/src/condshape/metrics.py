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
Segmentation metrics: Dice, average surface distance and (full) Hausdorff
distance between boundary-voxel point clouds.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy import ndimage
from scipy.spatial import cKDTree

from condshape.errors import EmptySurfaceError, KindError, MetricsError
from condshape.volume import Volume3, VolumeKind

METRIC_NAMES = ("dice", "asd_mm", "hd_mm")

# 6-connectivity
_FACE_NEIGHBOURS = ndimage.generate_binary_structure(3, 1)


def _check_pair(a: Volume3, b: Volume3) -> None:
    for v in (a, b):
        if v.kind is not VolumeKind.MASK:
            raise KindError(f"metrics expect mask volumes, got {v.kind.value}")
    if not a.same_grid(b):
        raise MetricsError(f"mask grids differ: {a.dims} @ {a.spacing_mm} vs {b.dims} @ {b.spacing_mm}")


def dice(a: Volume3, b: Volume3) -> float:
    """2|A n B| / (|A| + |B|); 1.0 when both masks are empty"""
    _check_pair(a, b)
    fa, fb = a.data > 0, b.data > 0
    total = int(fa.sum()) + int(fb.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((fa & fb).sum()) / total


def surface_points(mask: Volume3) -> np.ndarray:
    """
    World centers of foreground voxels with at least one 6-neighbour that is
    background or outside the grid, as a P x 3 array.

    Raises:
        EmptySurfaceError: The mask is empty
    """
    if mask.kind is not VolumeKind.MASK:
        raise KindError(f"surface_points expects a mask, got {mask.kind.value}")
    fg = mask.data > 0
    if not fg.any():
        raise EmptySurfaceError("empty mask has no surface")
    inner = ndimage.binary_erosion(fg, structure=_FACE_NEIGHBOURS, border_value=0)
    return np.argwhere(fg & ~inner).astype(np.float64) * mask.spacing


def _directed(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each point of a, the distance to its nearest neighbour in b"""
    dist, _ = cKDTree(b).query(a, k=1)
    return np.asarray(dist, dtype=np.float64)


def _require_points(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise EmptySurfaceError("surface distance needs two nonempty point sets")
    return a, b


def avg_surface_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric ASD: mean of the two directed mean nearest-neighbour distances"""
    a, b = _require_points(a, b)
    return float((_directed(a, b).mean() + _directed(b, a).mean()) / 2.0)


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Full (100th percentile) symmetric Hausdorff distance"""
    a, b = _require_points(a, b)
    return float(max(_directed(a, b).max(), _directed(b, a).max()))


@dataclass
class CaseMetrics:
    case_id: str
    dice: float
    asd_mm: float
    hd_mm: float

    def to_dict(self) -> Dict[str, Any]:
        return {"id": self.case_id, "dice": self.dice, "asd_mm": self.asd_mm, "hd_mm": self.hd_mm}


@dataclass
class MetricsReport:
    """Per-case metrics; aggregates are mean and population std of each metric"""
    cases: List[CaseMetrics] = field(default_factory=list)

    def aggregate(self) -> Dict[str, Dict[str, float]]:
        out = {}
        for name in METRIC_NAMES:
            values = np.asarray([getattr(c, name) for c in self.cases], dtype=np.float64)
            if values.size == 0:
                out[name] = {"mean": float("nan"), "std": float("nan")}
            else:
                out[name] = {"mean": float(values.mean()), "std": float(values.std())}
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {"cases": [c.to_dict() for c in self.cases], "aggregate": self.aggregate()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricsReport":
        return cls(cases=[CaseMetrics(case_id=c["id"], dice=c["dice"], asd_mm=c["asd_mm"], hd_mm=c["hd_mm"])
                          for c in data.get("cases", [])])

    def table_row(self) -> Dict[str, str]:
        """'mean (std)' strings per metric, the way result tables print them"""
        agg = self.aggregate()
        return {
            "Dice": f"{agg['dice']['mean']:.2f} ({agg['dice']['std']:.2f})",
            "Average distance (mm)": f"{agg['asd_mm']['mean']:.2f} ({agg['asd_mm']['std']:.2f})",
            "Hausdorff (mm)": f"{agg['hd_mm']['mean']:.2f} ({agg['hd_mm']['std']:.2f})",
        }

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        logger.debug(f"Saved metrics report → {path}")


def case_metrics(case_id: str, pred: Volume3, gt: Volume3, empty_penalty_mm: Optional[float] = None) -> CaseMetrics:
    """
    Metrics of one case. When either mask is empty the distances are undefined:
    EmptySurfaceError, unless empty_penalty_mm is given (then both distances are
    the penalty, or 0 when both masks are empty).
    """
    d = dice(pred, gt)
    try:
        sp, sg = surface_points(pred), surface_points(gt)
    except EmptySurfaceError:
        if empty_penalty_mm is None:
            raise
        both_empty = pred.count() == 0 and gt.count() == 0
        penalty = 0.0 if both_empty else float(empty_penalty_mm)
        logger.warning(f"{case_id}: empty mask, distances scored as {penalty:.2f} mm")
        return CaseMetrics(case_id, d, penalty, penalty)
    return CaseMetrics(case_id, d, avg_surface_distance(sp, sg), hausdorff(sp, sg))


def evaluate_cases(
    pred_masks: Union[Dict[str, Volume3], Sequence[Tuple[str, Volume3]]],
    gt_masks: Union[Dict[str, Volume3], Sequence[Tuple[str, Volume3]]],
    empty_penalty_mm: Optional[float] = None,
) -> MetricsReport:
    """
    Evaluate matched cases, in the order of gt_masks.

    Raises:
        MetricsError: Case ids of predictions and ground truth differ
    """
    preds = dict(pred_masks)
    gts = dict(gt_masks)
    if set(preds) != set(gts):
        missing = sorted(set(gts) - set(preds))
        extra = sorted(set(preds) - set(gts))
        raise MetricsError(f"unmatched case ids: missing predictions {missing[:5]}, unexpected {extra[:5]}")
    report = MetricsReport()
    for case_id, gt in gts.items():
        report.cases.append(case_metrics(case_id, preds[case_id], gt, empty_penalty_mm))
    logger.debug(f"Evaluated {len(report.cases)} cases")
    return report
