import math

import pytest
import torch

from burstdiff.training import (CHECKPOINT_NAME, NumericError, ResumeMismatchError, TrainData, build_model,
                                load_checkpoint, load_model, loss_log_steps, probe_loss, train)


@pytest.mark.parametrize("kind", ["baseline", "diffusion"])
def test_resume_matches_uninterrupted(kind, tiny_cfg, tiny_data, tmp_path):
    full_cfg = tiny_cfg.override(optim__iters=4)
    _, full = train(kind, tiny_data, full_cfg, out_dir=tmp_path / "full")
    train(kind, tiny_data, tiny_cfg.override(optim__iters=2), out_dir=tmp_path / "split")
    model, resumed = train(kind, tiny_data, full_cfg, out_dir=tmp_path / "split", resume=True)
    assert [r["loss"] for r in resumed] == [r["loss"] for r in full]
    a = load_checkpoint(tmp_path / "full" / CHECKPOINT_NAME)["model"]
    b = load_checkpoint(tmp_path / "split" / CHECKPOINT_NAME)["model"]
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_resume_rejects_changed_config(tiny_cfg, tiny_data, tmp_path):
    train("baseline", tiny_data, tiny_cfg.override(optim__iters=1), out_dir=tmp_path)
    with pytest.raises(ResumeMismatchError):
        train("baseline", tiny_data, tiny_cfg.override(optim__lr=1e-3), out_dir=tmp_path, resume=True)
    with pytest.raises(ResumeMismatchError):
        train("diffusion", tiny_data, tiny_cfg, out_dir=tmp_path, resume=True)
    with pytest.raises(FileNotFoundError):
        train("baseline", tiny_data, tiny_cfg, out_dir=tmp_path / "empty", resume=True)


def test_zero_iterations_saves_initial_weights(tiny_cfg, tiny_data, tmp_path):
    train("diffusion", tiny_data, tiny_cfg.override(optim__iters=0), out_dir=tmp_path)
    ckpt = load_checkpoint(tmp_path / CHECKPOINT_NAME)
    assert ckpt["iteration"] == 0 and ckpt["kind"] == "diffusion"
    fresh = build_model("diffusion", tiny_cfg).state_dict()
    assert all(torch.equal(fresh[k], ckpt["model"][k]) for k in fresh)


def test_reloaded_model_is_bit_identical(tiny_cfg, tiny_data, tmp_path):
    model, _ = train("baseline", tiny_data, tiny_cfg, out_dir=tmp_path)
    again, cfg, ckpt = load_model(tmp_path / CHECKPOINT_NAME, "baseline")
    assert ckpt["config_hash"] == tiny_cfg.training_hash() and cfg.to_dict() == tiny_cfg.to_dict()
    with torch.no_grad():
        assert torch.equal(model(tiny_data.raw), again(tiny_data.raw))
    with pytest.raises(ValueError):
        load_model(tmp_path / CHECKPOINT_NAME, "diffusion")


def test_diffusion_log_restricted_steps(tiny_cfg, tiny_data, tmp_path):
    _, rows = train("diffusion", tiny_data, tiny_cfg.override(optim__iters=6), out_dir=tmp_path)
    steps = loss_log_steps(rows)
    assert len(steps) == 12 and steps.min() >= 1 and steps.max() <= 20
    assert all(int(r["t_max"]) <= 20 for r in rows)
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "iteration,loss,t_min,t_max,steps" and len(lines) == 7


def test_non_finite_loss_aborts(tiny_cfg, tiny_data):
    bad = TrainData(tiny_data.raw, torch.full_like(tiny_data.hr, math.nan))
    with pytest.raises(NumericError):
        train("baseline", bad, tiny_cfg)


def test_training_reduces_probe_loss(tiny_cfg, tiny_data):
    cfg = tiny_cfg.override(optim__iters=30, optim__lr=2e-3)
    before = probe_loss("baseline", build_model("baseline", cfg), tiny_data, cfg)
    model, _ = train("baseline", tiny_data, cfg)
    assert probe_loss("baseline", model, tiny_data, cfg) < 0.5 * before


def test_unknown_kind(tiny_cfg, tiny_data):
    with pytest.raises(ValueError):
        train("gan", tiny_data, tiny_cfg)
    with pytest.raises(ValueError):
        build_model("gan", tiny_cfg)
