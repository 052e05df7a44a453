"""Matting networks: initialization, forward contracts, optimizer, checkpoints."""

from __future__ import annotations

import numpy as np
import pytest

from stagematte import autodiff as ad
from stagematte.nets import (AdamHyper, ArchSpec, ConvLayer, ParamSet,
                             adam_step, default_student_arch,
                             default_teacher_arch, forward_student,
                             forward_teacher, init_params, load_checkpoint,
                             save_checkpoint, teacher_graph)
from stagematte.raster import AlphaMask, DimensionError, Image


def rand_image(h, w, seed):
    return Image(np.random.default_rng(seed).random((h, w, 3)))


class TestInit:
    def test_same_seed_is_identical(self):
        a = init_params(default_teacher_arch(), 5)
        b = init_params(default_teacher_arch(), 5)
        for name in a.tensors:
            assert np.array_equal(a.tensors[name], b.tensors[name])

    def test_biases_are_zero(self):
        params = init_params(default_student_arch(), 1)
        for name, value in params.tensors.items():
            if name.endswith(".bias"):
                assert not value.any()

    def test_kernel_variance_tracks_fan_in(self):
        arch = ArchSpec(role="teacher", layers=(ConvLayer("big", 48, 64),))
        params = init_params(arch, 2)
        w = params.tensors["big.weight"]
        assert w.size >= 10_000
        fan_in = 48 * 9
        assert abs(w.var() - 2.0 / fan_in) / (2.0 / fan_in) < 0.20


class TestForwardTeacher:
    def test_zero_weights_give_half_everywhere(self):
        params = init_params(default_teacher_arch(), 0)
        for name in params.tensors:
            params.tensors[name][:] = 0.0
        out = forward_teacher(params, rand_image(16, 16, 0), rand_image(16, 16, 1))
        assert np.allclose(out.data, 0.5)

    def test_output_shape_and_range(self):
        params = init_params(default_teacher_arch(), 3)
        out = forward_teacher(params, rand_image(24, 16, 2), rand_image(24, 16, 3))
        assert (out.height, out.width) == (24, 16)
        assert out.data.min() > 0.0 and out.data.max() < 1.0
        assert np.isfinite(out.data).all()

    def test_repeat_evaluation_is_bit_identical(self):
        params = init_params(default_teacher_arch(), 4)
        img, bg = rand_image(16, 16, 4), rand_image(16, 16, 5)
        a = forward_teacher(params, img, bg)
        b = forward_teacher(params, img, bg)
        assert np.array_equal(a.data, b.data)

    def test_constant_input_gives_constant_output(self):
        params = init_params(default_teacher_arch(), 6)
        img = Image(np.full((16, 16, 3), 0.4))
        bg = Image(np.full((16, 16, 3), 0.6))
        out = forward_teacher(params, img, bg)
        inner = out.data[4:-4, 4:-4]
        assert np.ptp(inner) < 1e-6

    def test_indivisible_dimensions_rejected(self):
        params = init_params(default_teacher_arch(), 0)
        with pytest.raises(DimensionError):
            forward_teacher(params, rand_image(12, 16, 0), rand_image(12, 16, 1))


class TestForwardStudent:
    def test_coarse_is_quarter_resolution(self):
        params = init_params(default_student_arch(), 0)
        coarse, refined = forward_student(params, rand_image(16, 24, 0), rand_image(16, 24, 1))
        assert (coarse.height, coarse.width) == (4, 6)
        assert (refined.height, refined.width) == (16, 24)

    def test_zero_refiner_returns_upsampled_coarse(self):
        params = init_params(default_student_arch(), 1)
        for name in params.tensors:
            if name.split(".")[0] in ("r1", "r2", "r_out"):
                params.tensors[name][:] = 0.0
        img, bg = rand_image(16, 16, 2), rand_image(16, 16, 3)
        coarse, refined = forward_student(params, img, bg)
        up = ad.resize_bilinear(ad.constant(coarse.data[None, :, :, None]), 16, 16)
        assert np.allclose(refined.data, np.clip(up.data[0, :, :, 0], 0, 1), atol=1e-7)

    def test_student_under_fifth_of_teacher_parameters(self):
        teacher = init_params(default_teacher_arch(), 0)
        student = init_params(default_student_arch(), 0)
        n_teacher = sum(v.size for v in teacher.tensors.values())
        n_student = sum(v.size for v in student.tensors.values())
        assert n_student < n_teacher / 5

    def test_indivisible_dimensions_rejected(self):
        params = init_params(default_student_arch(), 0)
        with pytest.raises(DimensionError):
            forward_student(params, rand_image(18, 16, 0), rand_image(18, 16, 1))


class TestBackwardThroughNets:
    def test_teacher_fd_check_small_arch(self):
        arch = ArchSpec(role="teacher", layers=(
            ConvLayer("enc1", 7, 16, stride=2),
            ConvLayer("enc2", 16, 32, stride=2),
            ConvLayer("enc3", 32, 64, stride=2),
            ConvLayer("mid", 64, 64),
            ConvLayer("dec2", 96, 32),
            ConvLayer("dec1", 48, 16),
            ConvLayer("dec0", 23, 16),
            ConvLayer("out", 16, 1, activation="sigmoid"),
        ))
        with ad.use_dtype(np.float64):
            params = init_params(arch, 0)
            rng = np.random.default_rng(1)
            x = rng.random((1, 8, 8, 7))
            graph = params.as_graph_tensors()
            loss = ad.mean(ad.mul(teacher_graph(arch, graph, x), ad.constant(np.full((1, 8, 8, 1), 1.0))))
            loss.backward()
            for name in ("enc1.weight", "out.bias"):
                t = graph[name]
                pos = np.unravel_index(np.argmax(np.abs(t.grad)), t.data.shape)
                step = 1e-4
                base = t.data[pos]

                def value(v):
                    t.data[pos] = v
                    g2 = {k: ad.Tensor(tt.data) for k, tt in graph.items()}
                    out = teacher_graph(arch, g2, x)
                    return float(ad.mean(ad.mul(out, ad.constant(np.full((1, 8, 8, 1), 1.0)))).data)

                num = (value(base + step) - value(base - step)) / (2 * step)
                t.data[pos] = base
                rel = abs(t.grad[pos] - num) / max(abs(num), 1e-10)
                assert rel < 1e-3

    def test_frozen_layer_gradient_is_none(self):
        params = init_params(default_student_arch(), 0)
        graph = params.as_graph_tensors(trainable={"c1.weight"})
        assert graph["c1.weight"].requires_grad
        assert not graph["r1.weight"].requires_grad


class DummyArch:
    @staticmethod
    def to_dict():
        return {"role": "teacher", "layers": []}


class TestAdam:
    def scalar_params(self, value=1.0):
        return ParamSet(ArchSpec(role="teacher", layers=()),
                        {"w": np.array([value])})

    def test_zero_gradient_leaves_parameters_decays_moments(self):
        params = self.scalar_params()
        adam_step(params, {"w": np.zeros(1)}, AdamHyper(lr=0.1))
        assert params.tensors["w"][0] == 1.0
        params.adam_m["w"][:] = 0.5
        params.adam_v["w"][:] = 0.5
        adam_step(params, {"w": np.zeros(1)}, AdamHyper(lr=0.1))
        assert params.adam_m["w"][0] == pytest.approx(0.45)
        assert params.adam_v["w"][0] == pytest.approx(0.4995)

    def test_single_step_hand_computed(self):
        # g=1 at t=1: m_hat = v_hat = 1, update = -lr / (1 + eps).
        params = self.scalar_params(2.0)
        lr = 0.01
        adam_step(params, {"w": np.ones(1)}, AdamHyper(lr=lr))
        expected = 2.0 - lr * 1.0 / (np.sqrt(1.0) + 1e-8)
        assert params.tensors["w"][0] == pytest.approx(expected, rel=1e-14)
        assert params.step == 1

    def test_non_finite_gradient_names_tensor(self):
        params = self.scalar_params()
        with pytest.raises(FloatingPointError, match="'w'"):
            adam_step(params, {"w": np.array([np.nan])}, AdamHyper(lr=0.1))

    def test_identical_runs_identical_trajectories(self):
        runs = []
        for _ in range(2):
            params = self.scalar_params()
            for t in range(5):
                adam_step(params, {"w": np.array([0.1 * (t + 1)])}, AdamHyper(lr=0.05))
            runs.append(params.tensors["w"][0])
        assert runs[0] == runs[1]


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        params = init_params(default_teacher_arch(), 9)
        params.step = 17
        params.adam_m["enc1.weight"][:] = 0.25
        path = tmp_path / "t.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.step == 17
        assert loaded.arch == params.arch
        for name in params.tensors:
            assert np.array_equal(loaded.tensors[name], params.tensors[name])
            assert np.array_equal(loaded.adam_m[name], params.adam_m[name])
            assert np.array_equal(loaded.adam_v[name], params.adam_v[name])
        save_checkpoint(loaded, tmp_path / "t2.ckpt")
        assert path.read_bytes() == (tmp_path / "t2.ckpt").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(path)
