import pytest

from burstdiff.config import ConfigError, RunConfig
from burstdiff.diffusion import Initializer


def test_defaults():
    cfg = RunConfig().validate()
    assert cfg.schedule.beta_1 == 1e-4 and cfg.schedule.steps == 1000
    assert cfg.optim.lr == 1e-4 and cfg.optim.batch_size == 8
    assert cfg.raw_size == 32 and cfg.data.burst_size == 8
    assert cfg.reverse_start().initializer is Initializer.BASELINE_SR


def test_sigmoid_default_start_variance():
    cfg = RunConfig.from_dict({"schedule": {"kind": "sigmoid"}})
    assert cfg.schedule.beta_1 == 1e-5
    assert cfg.make_schedule().beta[1] == 1e-5
    assert RunConfig().override(schedule__kind="sigmoid").schedule.beta_1 == 1e-5
    assert RunConfig().override(schedule__kind="sigmoid", schedule__beta_1=3e-5).schedule.beta_1 == 3e-5


def test_ini_round_trip(tmp_path):
    cfg = RunConfig().override(data__hr_size=64, model__widths=(16, 32), diffusion__tau=7, run__seed=3)
    cfg.save(tmp_path / "c.ini")
    back = RunConfig.load(tmp_path / "c.ini")
    assert back.to_dict() == cfg.to_dict()
    assert back.model.widths == (16, 32)


def test_override_skips_none_and_rejects_unknown():
    cfg = RunConfig().override(optim__lr=None, optim__iters=5)
    assert cfg.optim.lr == 1e-4 and cfg.optim.iters == 5
    with pytest.raises(ConfigError):
        RunConfig().override(optim__momentum=0.9)


@pytest.mark.parametrize("text", ["[optim]\nlr = fast\n", "[bogus]\nx = 1\n", "[optim]\nmomentum = 1\n",
                                  "not an ini"])
def test_malformed_files(text):
    with pytest.raises(ConfigError):
        RunConfig.from_ini(text)


@pytest.mark.parametrize("overrides", [
    {"diffusion__tau": 1001},
    {"diffusion__tau_train": 0},
    {"diffusion__initializer": "random_noise", "diffusion__tau": 5},
    {"diffusion__initializer": "gan"},
    {"data__hr_size": 60},
    {"data__downscale": 3, "data__hr_size": 48},
    {"optim__lr": 0.0},
    {"schedule__beta_1": 0.5},
])
def test_cross_field_validation(overrides):
    with pytest.raises(ConfigError):
        RunConfig().override(**overrides).validate()


def test_random_noise_at_full_chain_is_valid():
    RunConfig().override(diffusion__initializer="random-noise", diffusion__tau=1000).validate()


def test_training_hash_ignores_run_length_only():
    base = RunConfig()
    assert base.training_hash() == base.override(optim__iters=99, diffusion__tau=30).training_hash()
    assert base.training_hash() != base.override(optim__lr=2e-4).training_hash()
    assert base.training_hash() != base.override(diffusion__tau_train=50).training_hash()
