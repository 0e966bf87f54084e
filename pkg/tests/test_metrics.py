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

import json

import numpy as np
import pytest

from condshape.errors import EmptySurfaceError, KindError, MetricsError
from condshape.metrics import (
    CaseMetrics,
    MetricsReport,
    avg_surface_distance,
    case_metrics,
    dice,
    evaluate_cases,
    hausdorff,
    surface_points,
)
from condshape.volume import Volume3, VolumeKind


def mask(data, spacing=(1.0, 1.0, 1.0)) -> Volume3:
    return Volume3(np.asarray(data, dtype=float), spacing_mm=spacing, kind=VolumeKind.MASK)


def cube(dims=(5, 5, 5), lo=1, hi=4) -> Volume3:
    data = np.zeros(dims)
    data[lo:hi, lo:hi, lo:hi] = 1.0
    return mask(data)


class TestDice:
    def test_identical(self, sphere):
        assert dice(sphere, sphere) == 1.0

    def test_disjoint(self):
        a, b = np.zeros((4, 4, 4)), np.zeros((4, 4, 4))
        a[0] = 1.0
        b[3] = 1.0
        assert dice(mask(a), mask(b)) == 0.0

    def test_half_overlap(self):
        a, b = np.zeros((4, 1, 1)), np.zeros((4, 1, 1))
        a[0:2] = 1.0
        b[1:3] = 1.0
        assert dice(mask(a), mask(b)) == pytest.approx(0.5)

    def test_both_empty(self):
        empty = mask(np.zeros((3, 3, 3)))
        assert dice(empty, empty) == 1.0

    def test_grid_mismatch(self):
        with pytest.raises(MetricsError):
            dice(cube(), mask(np.zeros((5, 5, 5)), spacing=(2.0, 1.0, 1.0)))

    def test_requires_masks(self, sphere):
        with pytest.raises(KindError):
            dice(sphere, sphere.with_data(sphere.data, kind=VolumeKind.OCCUPANCY))


class TestSurface:
    def test_cube_surface_excludes_center(self):
        pts = surface_points(cube())
        assert len(pts) == 26
        assert not any(np.array_equal(p, [2.0, 2.0, 2.0]) for p in pts)

    def test_grid_border_counts_as_background(self):
        pts = surface_points(mask(np.ones((3, 3, 3))))
        assert len(pts) == 26

    def test_spacing_scales_points(self):
        data = np.zeros((3, 3, 3))
        data[1, 2, 0] = 1.0
        np.testing.assert_allclose(surface_points(mask(data, (0.5, 2.0, 3.0))), [[0.5, 4.0, 0.0]])

    def test_empty_mask(self):
        with pytest.raises(EmptySurfaceError):
            surface_points(mask(np.zeros((3, 3, 3))))


class TestDistances:
    def test_single_points(self):
        a, b = np.asarray([[0.0, 0.0, 0.0]]), np.asarray([[3.0, 4.0, 0.0]])
        assert avg_surface_distance(a, b) == pytest.approx(5.0)
        assert hausdorff(a, b) == pytest.approx(5.0)

    def test_asymmetric_sets(self):
        a = np.asarray([[0.0, 0.0, 0.0]])
        b = np.asarray([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
        assert avg_surface_distance(a, b) == pytest.approx(2.5)
        assert hausdorff(a, b) == pytest.approx(10.0)
        assert avg_surface_distance(b, a) == avg_surface_distance(a, b)

    def test_matches_all_pairs(self, rng):
        a = rng.uniform(0, 20, size=(40, 3))
        b = rng.uniform(0, 20, size=(55, 3))
        d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
        ab, ba = d.min(axis=1), d.min(axis=0)
        assert avg_surface_distance(a, b) == pytest.approx((ab.mean() + ba.mean()) / 2.0)
        assert hausdorff(a, b) == pytest.approx(max(ab.max(), ba.max()))

    def test_identical_masks_score_zero(self, sphere):
        m = case_metrics("c0", sphere, sphere)
        assert (m.dice, m.asd_mm, m.hd_mm) == (1.0, 0.0, 0.0)

    def test_shifted_cube(self):
        shifted = np.zeros((6, 5, 5))
        shifted[2:5, 1:4, 1:4] = 1.0
        base = np.zeros((6, 5, 5))
        base[1:4, 1:4, 1:4] = 1.0
        m = case_metrics("c0", mask(shifted), mask(base))
        assert m.hd_mm == pytest.approx(1.0)
        assert m.dice == pytest.approx(2 * 18 / 54)

    def test_empty_sets_rejected(self):
        with pytest.raises(EmptySurfaceError):
            hausdorff(np.zeros((0, 3)), np.zeros((1, 3)))


class TestEmptyPrediction:
    def test_raises_without_penalty(self, sphere):
        with pytest.raises(EmptySurfaceError):
            case_metrics("c0", sphere.with_data(np.zeros(sphere.dims)), sphere)

    def test_penalty_used(self, sphere):
        m = case_metrics("c0", sphere.with_data(np.zeros(sphere.dims)), sphere, empty_penalty_mm=20.0)
        assert (m.dice, m.asd_mm, m.hd_mm) == (0.0, 20.0, 20.0)

    def test_both_empty_scores_perfect(self):
        empty = mask(np.zeros((3, 3, 3)))
        m = case_metrics("c0", empty, empty, empty_penalty_mm=20.0)
        assert (m.dice, m.asd_mm, m.hd_mm) == (1.0, 0.0, 0.0)


class TestReport:
    def test_aggregate_uses_population_std(self):
        report = MetricsReport([CaseMetrics("a", 0.8, 1.0, 2.0), CaseMetrics("b", 0.6, 3.0, 4.0)])
        agg = report.aggregate()
        assert agg["dice"]["mean"] == pytest.approx(0.7)
        assert agg["dice"]["std"] == pytest.approx(0.1)
        assert agg["hd_mm"] == {"mean": pytest.approx(3.0), "std": pytest.approx(1.0)}

    def test_table_row(self):
        report = MetricsReport([CaseMetrics("a", 0.8, 1.0, 2.0), CaseMetrics("b", 0.6, 3.0, 4.0)])
        assert report.table_row() == {
            "Dice": "0.70 (0.10)",
            "Average distance (mm)": "2.00 (1.00)",
            "Hausdorff (mm)": "3.00 (1.00)",
        }

    def test_save_and_reload(self, tmp_path):
        report = MetricsReport([CaseMetrics("a", 0.8, 1.0, 2.0)])
        report.save(tmp_path / "metrics.json")
        data = json.loads((tmp_path / "metrics.json").read_text())
        assert data["cases"] == [{"id": "a", "dice": 0.8, "asd_mm": 1.0, "hd_mm": 2.0}]
        assert MetricsReport.from_dict(data).cases == report.cases

    def test_evaluate_in_ground_truth_order(self, sphere):
        gts = [("b", sphere), ("a", sphere)]
        report = evaluate_cases({"a": sphere, "b": sphere}, gts)
        assert [c.case_id for c in report.cases] == ["b", "a"]
        assert report.aggregate()["dice"]["mean"] == 1.0

    def test_unmatched_ids(self, sphere):
        with pytest.raises(MetricsError):
            evaluate_cases({"a": sphere}, {"b": sphere})


def blob_pair(rng, n=16, margin=4):
    """Two overlapping random masks kept clear of the grid border"""
    pred, gt = np.zeros((n, n, n)), np.zeros((n, n, n))
    inner = (slice(margin, n - margin),) * 3
    pred[inner] = rng.random((n - 2 * margin,) * 3) > 0.3
    gt[inner] = rng.random((n - 2 * margin,) * 3) > 0.3
    return pred, gt


def scan_surface(data: np.ndarray) -> set:
    """Foreground voxels with a background or off-grid face neighbour"""
    out = set()
    steps = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    for idx in zip(*np.nonzero(data)):
        for step in steps:
            nb = tuple(i + s for i, s in zip(idx, step))
            if any(c < 0 or c >= n for c, n in zip(nb, data.shape)) or data[nb] == 0:
                out.add(tuple(int(i) for i in idx))
                break
    return out


class TestRigidInvariance:
    def test_translation(self, rng):
        pred, gt = blob_pair(rng)
        base = case_metrics("c0", mask(pred), mask(gt))
        shift = (3, -2, 1)
        moved = case_metrics("c0", mask(np.roll(pred, shift, axis=(0, 1, 2))),
                             mask(np.roll(gt, shift, axis=(0, 1, 2))))
        assert moved.dice == base.dice
        assert moved.asd_mm == pytest.approx(base.asd_mm, rel=1e-12)
        assert moved.hd_mm == pytest.approx(base.hd_mm, rel=1e-12)

    @pytest.mark.parametrize("axes", [(0, 1), (1, 2), (0, 2)])
    def test_quarter_turn(self, rng, axes):
        pred, gt = blob_pair(rng)
        base = case_metrics("c0", mask(pred), mask(gt))
        turned = case_metrics("c0", mask(np.rot90(pred, axes=axes)), mask(np.rot90(gt, axes=axes)))
        assert turned.dice == base.dice
        assert turned.asd_mm == pytest.approx(base.asd_mm, rel=1e-12)
        assert turned.hd_mm == pytest.approx(base.hd_mm, rel=1e-12)


class TestSurfaceScan:
    @pytest.mark.parametrize("seed", range(5))
    def test_random_masks(self, seed):
        data = (np.random.default_rng(seed).random((8, 8, 8)) > 0.4).astype(float)
        found = {tuple(int(v) for v in p) for p in surface_points(mask(data))}
        assert found == scan_surface(data)
