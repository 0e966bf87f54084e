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

from condshape.augment import AugmentConfig
from condshape.core.protocols import Segmenter
from condshape.edges import EdgeParams, edge_map, edge_map_union
from condshape.errors import CheckpointFormatError, ConfigError, DomainTagError, KindError, ShapeError
from condshape.metrics import dice
from condshape.nets import UNetConfig, UNetRole, build_unet
from condshape.phantoms import PartRole
from condshape.phantoms.generator import occupancy
from condshape.shape import (
    BaselineSegmenter,
    DcsmSegmenter,
    PointFeatureConfig,
    SamplingConfig,
    ShapeModelConfig,
    build_shape_model,
    decode_occupancy,
    encode,
    infer_mask,
    load_shape_model,
    point_features,
    sample_training_points,
    save_shape_model,
    shape_model_hash,
    train_shape_model,
)
from condshape.shape.inference import sidecar_path
from condshape.shape.model import level_frame
from condshape.shape.sampling import stratum_counts
from condshape.shape.training import draw_lambda, make_sample, sample_rng
from condshape.tensorgrad import Tensor
from condshape.volume import Volume3, sample_indices

from conftest import sphere_mask

CAVITY = PartRole.TARGET_CAVITY.value


def tiny_shape_cfg(**kwargs) -> ShapeModelConfig:
    defaults = dict(channels=[2, 3], decoder_widths=[8], points_per_sample=64, epochs=2, batch_size=2)
    defaults.update(kwargs)
    return ShapeModelConfig(**defaults)


@pytest.fixture
def sphere_edges() -> Volume3:
    return edge_map(sphere_mask(dims=(16, 16, 16), center=(7.5, 7.5, 7.5), radius=4.0), EdgeParams(lam=0.5))


class TestPointFeatures:
    def test_stencil_offsets(self):
        offsets = PointFeatureConfig(2.0).offsets()
        np.testing.assert_array_equal(offsets, [[0, 0, 0], [2, 0, 0], [-2, 0, 0], [0, 2, 0],
                                                [0, -2, 0], [0, 0, 2], [0, 0, -2]])

    def test_distance_must_be_positive(self):
        with pytest.raises(ConfigError):
            PointFeatureConfig(0.0)

    def test_default_feature_length(self):
        cfg = ShapeModelConfig()
        assert cfg.scaled_channels() == [8, 16, 32, 64]
        assert cfg.feature_length == 840

    def test_level_frames(self):
        s, origin = level_frame((1.0, 1.0, 2.0), 3)
        np.testing.assert_allclose(s, [4.0, 4.0, 8.0])
        np.testing.assert_allclose(origin, [1.5, 1.5, 3.0])

    def test_pyramid_halves_each_level(self):
        model = build_shape_model(ShapeModelConfig(width=0.25, decoder_widths=[8]), seed=0)
        edge = Volume3(np.zeros((32, 32, 32)), kind="edge_map")
        pyr = encode(edge, model)
        assert [lvl.features.shape[2:] for lvl in pyr.levels] == [(32,) * 3, (16,) * 3, (8,) * 3, (4,) * 3]
        assert pyr.channels == [2, 4, 8, 16]
        assert pyr.feature_length == model.cfg.feature_length == 210

    def test_features_match_per_level_trilinear_sampling(self, sphere_edges):
        model = build_shape_model(tiny_shape_cfg(), seed=0)
        pyr = encode(sphere_edges, model)
        pf = model.cfg.point_feature_config()
        p = np.asarray([[5.3, 7.1, 9.6]])
        feats = point_features(pyr, p, pf).data[0]
        assert feats.shape == (model.cfg.feature_length,)
        width = sum(pyr.channels)
        for o, offset in enumerate(pf.offsets()):
            start = o * width
            for level in pyr.levels:
                expected = sample_indices(level.features.data[0], level.to_index(p + offset))[:, 0]
                np.testing.assert_allclose(feats[start:start + level.channels], expected, atol=1e-5)
                start += level.channels

    def test_zero_decoder_gives_half(self, sphere_edges):
        model = build_shape_model(tiny_shape_cfg(), seed=0)
        for name, t in model.named_parameters():
            if name.startswith("dec"):
                t.data[...] = 0.0
        occupancy_vol, mask = infer_mask(model, sphere_edges)
        np.testing.assert_allclose(occupancy_vol.data, 0.5)
        np.testing.assert_array_equal(mask.data, 1.0)

    def test_encoder_contract(self, sphere):
        model = build_shape_model(ShapeModelConfig(width=0.25, decoder_widths=[8]), seed=0)
        with pytest.raises(ShapeError):
            encode(Volume3(np.zeros((12, 12, 12)), kind="edge_map"), model)
        with pytest.raises(KindError):
            encode(sphere, model)

    def test_decoder_width_checked(self):
        model = build_shape_model(tiny_shape_cfg(), seed=0)
        with pytest.raises(ShapeError):
            decode_occupancy(Tensor(np.zeros((4, 3))), model)


class TestSampling:
    def test_stratum_counts(self):
        assert stratum_counts(1000, SamplingConfig()) == (500, 400, 100)
        assert stratum_counts(7, SamplingConfig()) == (3, 2, 2)

    def test_fractions_bounded(self):
        with pytest.raises(ValueError):
            SamplingConfig(near_fraction=0.7, far_fraction=0.4)

    def test_oracle_labels_and_bounds(self, tiny_source):
        case = tiny_source[0]
        pts, labels = sample_training_points(case.spec, 500, seed=3, grid=case.intensity)
        lo, hi = case.intensity.world_bounds()
        assert pts.shape == (500, 3)
        assert np.all(pts >= lo) and np.all(pts <= hi)
        np.testing.assert_array_equal(labels, occupancy(case.spec, pts, CAVITY))
        assert 0 < labels.sum() < 500

    def test_seeded(self, tiny_source):
        case = tiny_source[0]
        a = sample_training_points(case.spec, 100, seed=3, grid=case.intensity)
        b = sample_training_points(case.spec, 100, seed=3, grid=case.intensity)
        np.testing.assert_array_equal(a[0], b[0])

    def test_mask_labels_from_nearest_voxel(self, sphere):
        pts, labels = sample_training_points(sphere, 200, seed=1)
        idx = np.clip(np.rint(pts).astype(int), 0, 11)
        np.testing.assert_array_equal(labels, sphere.data[idx[:, 0], idx[:, 1], idx[:, 2]])

    def test_spec_needs_grid(self, tiny_source):
        with pytest.raises(ConfigError):
            sample_training_points(tiny_source[0].spec, 10, seed=0)

    def test_needs_points(self, sphere):
        with pytest.raises(ConfigError):
            sample_training_points(sphere, 0, seed=0)


class TestShapeTraining:
    def test_sample_labels_follow_transformed_spec(self, tiny_source):
        cfg = tiny_shape_cfg()
        sample = make_sample(tiny_source[0], cfg, seed=0, epoch=0, index=0)
        assert sample.edge_map.dims == tiny_source[0].intensity.dims
        assert cfg.augment.lambda_range[0] <= sample.lam <= cfg.augment.lambda_range[1]
        np.testing.assert_array_equal(sample.labels, occupancy(sample.spec, sample.points, CAVITY))

    def test_plain_sample_uses_fixed_lambda(self, tiny_source):
        plain = AugmentConfig(geometric=False, intensity=False, dropout=False, lambda_jitter=False)
        cfg = tiny_shape_cfg(augment=plain, lambda_fixed=0.8)
        case = tiny_source[1]
        sample = make_sample(case, cfg, seed=0, epoch=0, index=0)
        assert sample.lam == 0.8
        expected = edge_map_union(case.structure_masks(), EdgeParams(0.8))
        np.testing.assert_array_equal(sample.edge_map.data, expected.data)

    def test_trains_on_source_only(self, tiny_target):
        with pytest.raises(DomainTagError):
            train_shape_model(tiny_target, tiny_shape_cfg(), seed=0)
        with pytest.raises(ConfigError):
            train_shape_model([], tiny_shape_cfg(), seed=0)

    def test_training_log(self, tmp_path, tiny_source):
        log_path = tmp_path / "shape_log.jsonl"
        result = train_shape_model(tiny_source, tiny_shape_cfg(), seed=0, log_path=log_path)
        assert len(result.lambdas) == 2 * len(tiny_source)
        records = [json.loads(line) for line in log_path.read_text().splitlines()]
        assert [r["epoch"] for r in records] == [1, 2]
        assert all(np.isfinite(r["train_loss"]) for r in records)

    def test_lambda_draws_cover_range(self):
        cfg = tiny_shape_cfg()
        lams = np.asarray([draw_lambda(cfg, sample_rng(0, 0, i)) for i in range(1000)])
        lo, hi = cfg.augment.lambda_range
        assert (lo, hi) == (0.01, 2.0)
        assert lams.min() >= lo and lams.max() <= hi
        assert lams.min() < 0.05
        assert lams.max() > 1.95
        assert len(np.unique(lams)) == 1000

    @pytest.mark.slow
    def test_overfits_single_phantom(self, tiny_source):
        plain = AugmentConfig(geometric=False, intensity=False, dropout=False, lambda_jitter=False)
        cfg = ShapeModelConfig(channels=[4, 8], decoder_widths=[32, 32], points_per_sample=1024, epochs=150,
                               batch_size=1, lr=0.005, augment=plain)
        case = tiny_source[0]
        result = train_shape_model([case], cfg, seed=0)
        edge = edge_map_union(case.structure_masks(), EdgeParams(cfg.lambda_fixed))
        _, mask = infer_mask(result.model, edge)
        assert dice(mask, case.target_mask) > 0.7


class TestInference:
    def test_output_grid_covers_same_box(self, sphere_edges):
        model = build_shape_model(tiny_shape_cfg(), seed=0)
        occ, mask = infer_mask(model, sphere_edges, out_dims=(8, 8, 8), chunk_points=100)
        assert mask.dims == (8, 8, 8)
        assert mask.spacing_mm == (2.0, 2.0, 2.0)
        assert occ.data.min() >= 0.0 and occ.data.max() <= 1.0
        assert model.training

    def test_chunking_does_not_change_result(self, sphere_edges):
        model = build_shape_model(tiny_shape_cfg(), seed=0)
        a, _ = infer_mask(model, sphere_edges, chunk_points=97)
        b, _ = infer_mask(model, sphere_edges, chunk_points=100000)
        np.testing.assert_allclose(a.data, b.data, atol=1e-6)

    def test_double_resolution_is_continuous(self, sphere_edges):
        model = build_shape_model(tiny_shape_cfg(), seed=2)
        coarse, _ = infer_mask(model, sphere_edges)
        fine, _ = infer_mask(model, sphere_edges, out_dims=(32, 32, 32))
        pooled = fine.data.reshape(16, 2, 16, 2, 16, 2).max(axis=(1, 3, 5))
        assert np.abs(pooled - coarse.data).mean() < 0.1

    def test_translation_moves_mask(self):
        model = build_shape_model(tiny_shape_cfg(), seed=3)
        dims, shift = (32, 16, 16), 2
        base = edge_map(sphere_mask(dims=dims, center=(14.0, 7.5, 7.5), radius=4.0), EdgeParams(lam=0.5))
        moved = edge_map(sphere_mask(dims=dims, center=(14.0 + shift, 7.5, 7.5), radius=4.0), EdgeParams(lam=0.5))
        np.testing.assert_allclose(moved.data[shift:], base.data[:-shift], atol=1e-12)
        occ_a, mask_a = infer_mask(model, base)
        occ_b, mask_b = infer_mask(model, moved)
        # zero padding reaches about 9 voxels in, keep clear of it
        window = slice(10, 20)
        shifted = slice(10 + shift, 20 + shift)
        np.testing.assert_allclose(occ_b.data[shifted], occ_a.data[window], atol=1e-5)
        np.testing.assert_array_equal(mask_b.data[shifted], mask_a.data[window])

    def test_save_and_load(self, tmp_path, sphere_edges):
        model = build_shape_model(tiny_shape_cfg(), seed=4)
        path = tmp_path / "shape.ckpt"
        digest = save_shape_model(model, path)
        assert sidecar_path(path).exists()
        loaded = load_shape_model(path)
        assert loaded.cfg == model.cfg
        assert shape_model_hash(loaded) == shape_model_hash(model) == digest
        np.testing.assert_array_equal(infer_mask(loaded, sphere_edges)[0].data, infer_mask(model, sphere_edges)[0].data)

    def test_missing_sidecar(self, tmp_path):
        path = tmp_path / "shape.ckpt"
        save_shape_model(build_shape_model(tiny_shape_cfg(), seed=0), path)
        sidecar_path(path).unlink()
        with pytest.raises(CheckpointFormatError):
            load_shape_model(path)

    def test_segmenters(self, tiny_target):
        unet_cfg = UNetConfig(down_channels=[2, 4], width=1.0, patch_size=8)
        dcsm = DcsmSegmenter(build_unet(unet_cfg, 0), build_shape_model(tiny_shape_cfg(), 0))
        base = BaselineSegmenter(build_unet(unet_cfg.model_copy(update={"role": UNetRole.BASELINE}), 0))
        intensity = tiny_target[0].intensity
        for seg in (dcsm, base):
            assert isinstance(seg, Segmenter)
            mask = seg.segment(intensity)
            assert mask.dims == intensity.dims
            assert set(np.unique(mask.data)) <= {0.0, 1.0}
            assert len(seg.seconds) == 1
        assert dcsm.last_occupancy is not None
