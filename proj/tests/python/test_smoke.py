# SPDX-License-Identifier: Apache-2.0
import math

import pytest

import v2apt


def small_config():
    return v2apt.RunConfig.from_text(
        "\n".join(
            [
                "model.layers = 2",
                "model.dim = 16",
                "model.heads = 2",
                "model.mlp_ratio = 2",
                "model.num_classes = 3",
                "model.prompt_tokens = 4",
                "model.instance_tokens = 2",
                "model.latent_dim = 4",
                "model.vae_hidden = 8",
                "train.batch_size = 16",
                "train.pretrain_steps = 10",
                "train.tune_steps = 8",
            ]
        )
    )


@pytest.fixture(scope="module")
def data():
    train, test = v2apt.split(v2apt.generate("easy-3", seed=1), 0.8, 0)
    return train, test


@pytest.fixture(scope="module")
def backbone(data):
    train, test = data
    return v2apt.pretrain(small_config(), train, test)["checkpoint"]


def test_presets_and_generation():
    assert "shift-A" in v2apt.presets()
    a = v2apt.generate("easy-3", seed=4)
    b = v2apt.generate("easy-3", seed=4)
    assert a == b
    assert len(a) == 300
    assert a.num_classes == 3
    assert len(a.image(0)) == a.height * a.width * a.channels
    assert v2apt.Dataset.from_bytes(a.to_bytes()) == a
    with pytest.raises(v2apt.ConfigError):
        v2apt.generate("missing")


def test_config_round_trip():
    cfg = small_config()
    assert v2apt.RunConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(v2apt.ConfigError):
        v2apt.RunConfig.from_text("model.bogus = 1")


def test_kl_divergence():
    assert v2apt.kl_divergence([0.0, 0.0], [0.0, 0.0]) == 0.0
    assert v2apt.kl_divergence([1.0], [0.0]) == pytest.approx(0.5)
    mu, lv = 0.3, -0.7
    assert v2apt.kl_divergence([mu], [lv]) == pytest.approx(0.5 * (mu * mu + math.exp(lv) - 1 - lv))
    with pytest.raises(v2apt.ShapeError):
        v2apt.kl_divergence([0.0], [0.0, 1.0])


def test_gradcheck_tiny():
    report = v2apt.gradcheck()
    assert report["passed"]
    assert report["worst_rel_error"] < 1e-4


def test_tune_keeps_backbone_frozen(data, backbone):
    train, test = data
    for method in ("vpt", "v2apt", "head"):
        out = v2apt.tune(small_config(), backbone, method, train, test)
        assert out["frozen_unchanged"]
        assert len(out["losses"]) == 8
        assert 0.0 <= out["test_accuracy"] <= 1.0
    with pytest.raises(v2apt.ConfigError):
        v2apt.tune(small_config(), backbone, "lora", train)


def test_resume_and_eval_are_reproducible(data, backbone):
    train, test = data
    cfg = small_config()
    full = v2apt.tune(cfg, backbone, "v2apt", train)
    part = v2apt.tune(cfg, backbone, "v2apt", train, stop_at=3)
    ckpt = v2apt.Checkpoint.from_bytes(part["checkpoint"].to_bytes())
    rest = v2apt.tune(cfg, backbone, "v2apt", train, resume=ckpt)
    assert part["losses"] + rest["losses"] == full["losses"]
    assert full["checkpoint"].to_bytes() == rest["checkpoint"].to_bytes()
    acc = v2apt.evaluate(full["checkpoint"], test)
    assert v2apt.evaluate(full["checkpoint"], test) == acc


def test_analysis(data, backbone):
    train, test = data
    tuned = v2apt.tune(small_config(), backbone, "v2apt", train)["checkpoint"]
    maps = v2apt.similarity_maps(tuned, test, 0)
    assert len(maps) == 2
    assert len(maps[0]) == 4
    assert all(-1.0 <= v <= 1.0 for m in maps for row in m for v in row)
    stats = v2apt.latent_stats(tuned, test)
    assert len(stats["mu_mean"]) == 4
    assert stats["samples"] == len(test)
    plain = v2apt.tune(small_config(), backbone, "vpt", train)["checkpoint"]
    with pytest.raises(v2apt.ConfigError):
        v2apt.latent_stats(plain, test)


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"nonsense")
    with pytest.raises(v2apt.FormatError):
        v2apt.Checkpoint.load(str(bad))
    with pytest.raises(v2apt.IoError):
        v2apt.Checkpoint.load(str(tmp_path / "missing.ckpt"))
