"""Smoke tests for the python bindings."""

import numpy as np
import pytest

import oatlab


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("ckpt") / "tiny.ckpt")
    summary = oatlab.train(
        {
            "mode": "oat",
            "epochs": 1,
            "n_per_class": 8,
            "test_per_class": 4,
            "batch_size": 20,
            "attack_steps": 2,
            "seed": 3,
            "log": str(tmp_path_factory.mktemp("logs") / "train.csv"),
        },
        path,
    )
    assert summary["steps"] == 4
    return path


def test_synth_dataset_shapes_and_range():
    ds = oatlab.synth_glyphs(5, classes=10, size=16, noise_sigma=0.2, seed=7)
    assert ds.size == 50
    imgs = ds.images
    assert imgs.shape == (50, 1, 16, 16)
    assert imgs.min() >= 0.0 and imgs.max() <= 1.0
    assert sorted(set(ds.labels)) == list(range(10))

    again = oatlab.synth_glyphs(5, classes=10, size=16, noise_sigma=0.2, seed=7)
    np.testing.assert_array_equal(imgs, again.images)


def test_encoder_columns_orthonormal():
    grid = [0.0, 0.1, 0.2, 0.3, 0.4, 1.0]
    cols = np.stack([oatlab.encode_lambda("ro", 128, grid, g, seed=9) for g in grid])
    gram = cols @ cols.T
    np.testing.assert_allclose(gram, np.eye(len(grid)), atol=1e-6)

    none = oatlab.encode_lambda("none", 1, grid, 0.3)
    assert none.shape == (1,) and none[0] == pytest.approx(0.3)


def test_model_eval_and_sweep(tiny_checkpoint):
    model = oatlab.Model(tiny_checkpoint)
    ds = oatlab.synth_glyphs(4, seed=11, split="test")

    sa = model.sa(ds, lam=0.0)
    assert 0.0 <= sa <= 100.0
    ra = model.ra(ds, lam=1.0, steps=2)
    assert 0.0 <= ra <= sa + 5.0

    rows = model.sweep(ds, lambdas=[0.0, 0.5, 1.0], widths=[1.0], steps=2)
    assert len(rows) == 3
    assert {r["lambda"] for r in rows} == {0.0, 0.5, 1.0}


def test_attack_budget(tiny_checkpoint):
    model = oatlab.Model(tiny_checkpoint)
    ds = oatlab.synth_glyphs(2, seed=13)
    x = ds.images[:6]
    y = list(ds.labels[:6])
    adv = model.attack(x, y, lam=1.0, attack="pgd", epsilon=8 / 255, steps=3)
    assert adv.shape == x.shape
    assert np.abs(adv - x).max() <= 8 / 255 + 1e-7
    assert adv.min() >= 0.0 and adv.max() <= 1.0


def test_saliency_and_flops(tiny_checkpoint):
    model = oatlab.Model(tiny_checkpoint)
    ds = oatlab.synth_glyphs(2, seed=17, split="test")
    sal = model.saliency(ds, 0, lam=0.2)
    assert sal.shape == (1, 16, 16)
    assert np.isfinite(sal).all()

    full = model.flops(1.0)
    overhead = model.conditioning_flops(1.0)
    assert 0 < overhead < full


def test_checkpoint_roundtrip_evaluation(tiny_checkpoint, tmp_path):
    ds = oatlab.synth_glyphs(3, seed=19, split="test")
    a = oatlab.Model(tiny_checkpoint)
    b = oatlab.Model(tiny_checkpoint)
    assert a.sa(ds, lam=0.3) == b.sa(ds, lam=0.3)
    assert a.ra(ds, lam=0.3, steps=2, seed=5) == b.ra(ds, lam=0.3, steps=2, seed=5)
