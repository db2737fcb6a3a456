"""Optimizer, checkpoints and the training loop."""

import numpy as np
import pytest

from ram import tensor as T
from ram.degradations import DegradationSpec, make_clean_image, make_pair_set
from ram.imgio import save_rgb
from ram.network import RamConfig, build, forward
from ram.tensor import GradTape, Tensor
from ram.trainer import (
    AdamState,
    CheckpointError,
    TrainConfig,
    adam_step,
    l1_loss,
    load,
    model_params,
    save,
    train,
)

TINY = dict(base_channels=8, depths=(1, 1, 1, 1), refinement_depth=1, heads=(1, 1, 1, 1))


class TestTrainConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(Exception):
            TrainConfig.from_dict({"learning_rate": 1e-3})

    def test_patch_must_be_multiple_of_8(self):
        with pytest.raises(Exception):
            TrainConfig(patch=30)


class TestAdam:
    def test_quadratic_converges(self):
        p = {"w": Tensor(np.array([5.0, -3.0]), requires_grad=True)}
        st = AdamState(p)
        cfg = TrainConfig(lr=0.1)
        for _ in range(500):
            adam_step(p, {"w": 2.0 * p["w"].data}, st, cfg)
        assert np.abs(p["w"].data).max() < 1e-3

    def test_bias_correction_first_step(self):
        p = {"w": Tensor(np.array([1.0]), requires_grad=True)}
        st = AdamState(p)
        cfg = TrainConfig(lr=0.01)
        adam_step(p, {"w": np.array([0.5])}, st, cfg)
        # with bias correction, the first step has magnitude ~lr regardless of g
        assert p["w"].data[0] == pytest.approx(1.0 - 0.01, abs=1e-6)


class TestL1Loss:
    def test_value(self):
        a = Tensor(np.array([1.0, 2.0, 3.0]))
        b = Tensor(np.array([2.0, 2.0, 1.0]))
        assert l1_loss(a, b).item() == pytest.approx(1.0)

    def test_gradient_is_sign(self):
        with GradTape() as tape:
            a = Tensor(np.array([1.0, 2.0, 3.0]))
            tape.backward(l1_loss(a, Tensor(np.array([2.0, 2.0, 1.0]))))
            np.testing.assert_allclose(tape.grad(a), np.array([-1.0, 0.0, 1.0]) / 3)


class TestCheckpoints:
    def test_save_load_forward_bit_exact(self, tmp_path):
        m = build(RamConfig(**TINY))
        path = tmp_path / "m.ramckpt"
        save(m, None, path, step=7)
        m2, opt, meta = load(path)
        assert opt is None and meta["step"] == 7
        img = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 16, 16)))
        np.testing.assert_array_equal(forward(m, img).data, forward(m2, img).data)

    def test_optimizer_state_round_trip(self, tmp_path):
        m = build(RamConfig(**TINY))
        params = model_params(m)
        opt = AdamState(params)
        opt.t = 3
        key = next(iter(opt.m))
        opt.m[key] += 0.5
        path = tmp_path / "m.ramckpt"
        save(m, opt, path)
        _, opt2, _ = load(path)
        assert opt2.t == 3
        np.testing.assert_array_equal(opt2.m[key], opt.m[key])

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "x.ramckpt"
        p.write_bytes(b"NOTACKPT" + b"\0" * 32)
        with pytest.raises(CheckpointError):
            load(p)

    def test_truncation_names_tensor(self, tmp_path):
        m = build(RamConfig(**TINY))
        path = tmp_path / "m.ramckpt"
        save(m, None, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 100])
        with pytest.raises(CheckpointError, match="truncated inside tensor '"):
            load(path)


def small_manifest(tmp_path, n=2):
    cdir = tmp_path / "clean"
    cdir.mkdir()
    for i in range(n):
        save_rgb(cdir / f"img{i}.png", make_clean_image(i, 48, 48))
    return make_pair_set(cdir, [DegradationSpec("noise")], tmp_path / "manifest.json")


class TestTrainLoop:
    def test_short_run_writes_artifacts(self, tmp_path):
        entries = small_manifest(tmp_path)
        m = build(RamConfig(**TINY))
        cfg = TrainConfig(steps=3, batch=1, patch=32, checkpoint_every=2)
        losses = train(m, entries, cfg, tmp_path / "run")
        assert len(losses) == 3
        assert (tmp_path / "run" / "loss.csv").exists()
        assert (tmp_path / "run" / "ckpt_2.ramckpt").exists()
        assert (tmp_path / "run" / "ckpt_final.ramckpt").exists()
        lines = (tmp_path / "run" / "loss.csv").read_text().strip().splitlines()
        assert lines[0] == "step,loss" and len(lines) == 4

    def test_identical_runs_byte_identical(self, tmp_path):
        entries = small_manifest(tmp_path)

        def run(tag):
            m = build(RamConfig(**TINY))
            train(m, entries, TrainConfig(steps=3, batch=1, patch=32, checkpoint_every=0), tmp_path / tag)
            return (
                (tmp_path / tag / "ckpt_final.ramckpt").read_bytes(),
                (tmp_path / tag / "loss.csv").read_bytes(),
            )

        assert run("a") == run("b")
