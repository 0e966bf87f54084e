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

import numpy as np
import pytest
from scipy import ndimage

from condshape.errors import CheckpointFormatError, ContractError, ShapeError
from condshape.tensorgrad import (
    Adam,
    AdamState,
    BatchNorm,
    Conv3d,
    Linear,
    Module,
    Tensor,
    adam_step,
    backward,
    batch_norm,
    bce_loss,
    checkpoint_bytes,
    concat,
    conv3d,
    file_hash,
    jaccard_loss,
    leaky_relu,
    linear,
    load_checkpoint,
    max_downsample,
    model_hash,
    mse_loss,
    nearest_upsample,
    no_grad,
    parse_checkpoint,
    save_checkpoint,
    sigmoid,
    trilinear_gather,
    wide_precision,
)
from condshape.volume import sample_indices


def check_grad(loss_fn, tensors, rng, n_checks=8, eps=1e-6):
    """Compare backward() against central differences at random entries"""
    backward(loss_fn(), tensors)
    for t in tensors:
        analytic = t.grad.copy()
        for flat in rng.choice(t.data.size, size=min(n_checks, t.data.size), replace=False):
            idx = np.unravel_index(flat, t.data.shape)
            orig = t.data[idx]
            t.data[idx] = orig + eps
            up = loss_fn().item()
            t.data[idx] = orig - eps
            down = loss_fn().item()
            t.data[idx] = orig
            assert analytic[idx] == pytest.approx((up - down) / (2 * eps), rel=1e-4, abs=1e-6), t.name


def leaf(arr, name=None):
    return Tensor(arr, requires_grad=True, name=name)


class Tiny(Module):
    def __init__(self, seed: int):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.fc = Linear(self, "fc", 4, 3, rng=rng)
        self.bn = BatchNorm(self, "bn", 3)


class TestGradients:
    def test_conv3d(self, rng):
        with wide_precision():
            x = leaf(rng.normal(size=(2, 2, 4, 4, 4)), "x")
            w = leaf(rng.normal(size=(3, 2, 3, 3, 3)), "w")
            b = leaf(rng.normal(size=(3,)), "b")
            r = rng.normal(size=(2, 3, 4, 4, 4))
            check_grad(lambda: (conv3d(x, w, b) * Tensor(r)).sum(), [x, w, b], rng)

    def test_conv3d_stride_two(self, rng):
        with wide_precision():
            x = leaf(rng.normal(size=(1, 1, 6, 6, 6)), "x")
            w = leaf(rng.normal(size=(2, 1, 3, 3, 3)), "w")
            r = rng.normal(size=(1, 2, 3, 3, 3))
            check_grad(lambda: (conv3d(x, w, stride=2) * Tensor(r)).sum(), [x, w], rng)

    def test_linear_and_activations(self, rng):
        with wide_precision():
            x = leaf(rng.normal(size=(5, 4)) + 0.05, "x")
            w = leaf(rng.normal(size=(3, 4)), "w")
            b = leaf(rng.normal(size=(3,)), "b")
            r = rng.normal(size=(5, 3))
            check_grad(lambda: (sigmoid(leaky_relu(linear(x, w, b))) * Tensor(r)).sum(), [x, w, b], rng)

    def test_batch_norm_training(self, rng):
        with wide_precision():
            x = leaf(rng.normal(size=(2, 3, 2, 2, 2)), "x")
            gamma = leaf(rng.normal(size=(3,)), "gamma")
            beta = leaf(rng.normal(size=(3,)), "beta")
            mean, var = np.zeros(3), np.ones(3)
            r = rng.normal(size=x.shape)
            check_grad(lambda: (batch_norm(x, gamma, beta, mean, var, True) * Tensor(r)).sum(), [x, gamma, beta], rng)

    def test_max_downsample(self, rng):
        with wide_precision():
            x = leaf(rng.normal(size=(1, 2, 4, 4, 4)), "x")
            r = rng.normal(size=(1, 2, 2, 2, 2))
            check_grad(lambda: (max_downsample(x) * Tensor(r)).sum(), [x], rng, n_checks=16)

    def test_trilinear_gather(self, rng):
        with wide_precision():
            feat = leaf(rng.normal(size=(2, 3, 4, 5, 6)), "feat")
            u = rng.uniform(0, 3, size=(7, 3))
            bidx = rng.integers(0, 2, size=7)
            r = rng.normal(size=(7, 3))
            check_grad(lambda: (trilinear_gather(feat, bidx, u) * Tensor(r)).sum(), [feat], rng, n_checks=20)

    def test_concat(self, rng):
        with wide_precision():
            a = leaf(rng.normal(size=(2, 1, 2, 2, 2)), "a")
            b = leaf(rng.normal(size=(2, 3, 2, 2, 2)), "b")
            r = rng.normal(size=(2, 4, 2, 2, 2))
            check_grad(lambda: (concat([a, b], axis=1) * Tensor(r)).sum(), [a, b], rng)

    def test_nearest_upsample(self, rng):
        with wide_precision():
            x = leaf(rng.normal(size=(1, 2, 2, 3, 2)), "x")
            r = rng.normal(size=(1, 2, 4, 6, 4))
            check_grad(lambda: (nearest_upsample(x) * Tensor(r)).sum(), [x], rng, n_checks=12)

    @pytest.mark.parametrize("loss", [mse_loss, bce_loss, jaccard_loss])
    def test_losses(self, rng, loss):
        with wide_precision():
            logits = leaf(rng.normal(size=(2, 1, 3, 3, 3)), "logits")
            gt = (rng.random((2, 1, 3, 3, 3)) > 0.5).astype(float)
            check_grad(lambda: loss(sigmoid(logits), gt), [logits], rng)


class TestOps:
    def test_conv3d_matches_zero_padded_correlation(self, rng):
        with wide_precision():
            x = rng.normal(size=(6, 5, 4))
            w = rng.normal(size=(3, 3, 3))
            out = conv3d(Tensor(x[None, None]), Tensor(w[None, None]), Tensor([0.5])).data[0, 0]
        np.testing.assert_allclose(out, ndimage.correlate(x, w, mode="constant", cval=0.0) + 0.5, atol=1e-10)

    def test_conv3d_stride_two_shape(self):
        out = conv3d(Tensor(np.zeros((1, 1, 8, 8, 8))), Tensor(np.zeros((4, 1, 3, 3, 3))), stride=2)
        assert out.shape == (1, 4, 4, 4, 4)

    def test_max_downsample_tie_goes_to_lowest_x_fastest_index(self):
        x = np.zeros((1, 1, 2, 2, 2))
        x[0, 0, 1, 0, 0] = 1.0
        x[0, 0, 0, 1, 0] = 1.0
        t = leaf(x)
        max_downsample(t).sum().backward()
        assert t.grad[0, 0, 1, 0, 0] == 1.0
        assert t.grad[0, 0, 0, 1, 0] == 0.0

    def test_max_downsample_needs_even_dims(self):
        with pytest.raises(ShapeError):
            max_downsample(Tensor(np.zeros((1, 1, 3, 2, 2))))

    def test_nearest_upsample_gradient_sums_blocks(self):
        t = leaf(np.ones((1, 2, 2, 2, 2)))
        out = nearest_upsample(t)
        assert out.shape == (1, 2, 4, 4, 4)
        out.sum().backward()
        np.testing.assert_array_equal(t.grad, 8.0)

    def test_trilinear_gather_matches_volume_sampling(self, rng):
        with wide_precision():
            feat = rng.normal(size=(1, 2, 5, 4, 3))
            u = rng.uniform(-0.3, 4.2, size=(50, 3))
            out = trilinear_gather(Tensor(feat), np.zeros(50, dtype=int), u).data
        np.testing.assert_allclose(out.T, sample_indices(feat[0], u), atol=1e-12)

    def test_batch_norm_single_sample_uses_running_stats(self, rng):
        with wide_precision():
            x = rng.normal(size=(1, 2, 2, 2, 2))
            mean, var = np.zeros(2), np.ones(2)
            out = batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), mean, var, True).data
        np.testing.assert_allclose(out, x / np.sqrt(1.0 + 1e-5))
        np.testing.assert_array_equal(mean, 0.0)

    def test_batch_norm_updates_running_stats(self, rng):
        with wide_precision():
            x = rng.normal(loc=3.0, size=(4, 1, 2, 2, 2))
            mean, var = np.zeros(1), np.ones(1)
            batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), mean, var, True)
        assert mean[0] == pytest.approx(0.1 * x.mean())
        assert var[0] == pytest.approx(0.9 + 0.1 * x.var(ddof=1))

    def test_jaccard_of_perfect_prediction_is_zero(self):
        gt = np.zeros((1, 1, 2, 2, 2))
        gt[0, 0, 0] = 1.0
        assert jaccard_loss(Tensor(gt), gt).item() == pytest.approx(0.0, abs=1e-6)

    def test_loss_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(Tensor(np.zeros((2, 2))), np.zeros((2, 3)))


class TestGraph:
    def test_backward_needs_scalar(self):
        with pytest.raises(ContractError):
            leaf(np.ones(3)).backward()

    def test_unused_parameter_gets_zero_grad(self):
        a, b = leaf(np.ones(2)), leaf(np.ones(2))
        ga, gb = backward((a * 3.0).sum(), [a, b])
        np.testing.assert_array_equal(ga, 3.0)
        np.testing.assert_array_equal(gb, 0.0)

    def test_shared_node_accumulates(self):
        a = leaf(np.array([2.0]))
        backward((a * a).sum(), [a])
        assert a.grad[0] == pytest.approx(4.0)

    def test_no_grad_records_nothing(self):
        a = leaf(np.ones(2))
        with no_grad():
            out = a * 2.0
        assert not out.requires_grad

    def test_default_dtype_is_float32(self):
        assert Tensor([1.0]).dtype == np.float32
        with wide_precision():
            assert Tensor([1.0]).dtype == np.float64

    def test_layer_contract_names_layer(self):
        model = Module()
        conv = Conv3d(model, "enc0.conv0", 2, 4)
        with pytest.raises(ShapeError, match="enc0.conv0"):
            conv(Tensor(np.zeros((1, 3, 4, 4, 4))))


class TestAdam:
    def test_first_step_moves_by_lr_times_sign(self):
        params = {"w": np.array([1.0, -2.0])}
        grads = {"w": np.array([0.5, -0.1])}
        state = AdamState(lr=0.1)
        new, new_state = adam_step(params, grads, state)
        np.testing.assert_allclose(new["w"], [0.9, -1.9], atol=1e-6)
        assert new_state.step == 1
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])
        assert state.step == 0 and state.m == {}

    def test_ten_step_recurrence(self, rng):
        p = rng.normal(size=4)
        grads = rng.normal(size=(10, 4))
        params, state = {"w": p.copy()}, AdamState(lr=0.01)
        m, v, ref = np.zeros(4), np.zeros(4), p.copy()
        for t, g in enumerate(grads, start=1):
            params, state = adam_step(params, {"w": g}, state)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g ** 2
            ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert state.step == 10
        np.testing.assert_allclose(params["w"], ref, rtol=0, atol=1e-10)

    def test_missing_gradient(self):
        with pytest.raises(ShapeError):
            adam_step({"w": np.zeros(2)}, {}, AdamState())

    def test_in_place_optimizer_matches_functional_step(self, rng):
        with wide_precision():
            model = Tiny(0)
        start = {name: t.data.copy() for name, t in model.named_parameters()}
        grads = {name: rng.normal(size=t.shape) for name, t in model.named_parameters()}
        for name, t in model.named_parameters():
            t.grad = grads[name]
        Adam(model, lr=0.05).step()
        expected, _ = adam_step(start, grads, AdamState(lr=0.05))
        for name, t in model.named_parameters():
            np.testing.assert_allclose(t.data, expected[name], rtol=1e-12)


class TestCheckpoint:
    def test_round_trip_restores_state(self, tmp_path):
        src = Tiny(1)
        src.bn.running_mean[:] = [0.5, -1.0, 2.0]
        path = tmp_path / "tiny.ckpt"
        digest = save_checkpoint(src, path, hyperparameters={"width": 3})
        dst = Tiny(2)
        manifest, optimizer = load_checkpoint(dst, path)
        assert manifest["hyperparameters"] == {"width": 3}
        assert optimizer is None
        for (name, a), (_, b) in zip(src.state_dict().items(), dst.state_dict().items()):
            np.testing.assert_array_equal(a, b, err_msg=name)
        assert digest == file_hash(path)
        assert digest == model_hash(src, {"width": 3})

    def test_identical_models_hash_identically(self):
        assert model_hash(Tiny(3)) == model_hash(Tiny(3))
        assert model_hash(Tiny(3)) != model_hash(Tiny(4))

    def test_optimizer_state_round_trip(self, rng):
        model = Tiny(0)
        for t in model.parameters():
            t.grad = rng.normal(size=t.shape).astype(np.float32)
        opt = Adam(model, lr=0.01)
        opt.step()
        _, _, state = parse_checkpoint(checkpoint_bytes(model, opt.state))
        assert state.step == 1
        assert state.lr == 0.01
        np.testing.assert_array_equal(state.m["fc.weight"], opt.state.m["fc.weight"])

    def test_bad_magic(self):
        raw = checkpoint_bytes(Tiny(0))
        with pytest.raises(CheckpointFormatError):
            parse_checkpoint(b"XKPT0001" + raw[8:])

    def test_truncated_and_trailing(self):
        raw = checkpoint_bytes(Tiny(0))
        with pytest.raises(CheckpointFormatError):
            parse_checkpoint(raw[:-2])
        with pytest.raises(CheckpointFormatError):
            parse_checkpoint(raw + b"\x00")

    def test_shape_mismatch_rejected(self, tmp_path):
        path = tmp_path / "tiny.ckpt"
        save_checkpoint(Tiny(0), path)
        other = Module()
        Linear(other, "fc", 5, 3)
        BatchNorm(other, "bn", 3)
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(other, path)

    def test_wide_model_rejected(self, tmp_path):
        with wide_precision():
            wide = Tiny(0)
        with pytest.raises(CheckpointFormatError, match="float32"):
            save_checkpoint(wide, tmp_path / "wide.ckpt")
        assert not (tmp_path / "wide.ckpt").exists()
