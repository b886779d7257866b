import csv
import json

import numpy as np
import pytest

from burstdiff.burst import read_dataset, write_dataset
from burstdiff.cli import main
from burstdiff.inference import read_sweep_csv


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture
def workspace(tmp_path, tiny_ini):
    """Tiny dataset plus a baseline and two diffusion checkpoints (0 iterations)."""
    d = tmp_path / "d.bsrd"
    assert run("generate", "--out", d, "--count", 3, "--seed", 1, "--config", tiny_ini) == 0
    assert run("train-baseline", "--data", d, "--out", tmp_path / "base", "--config", tiny_ini, "--iters", 2) == 0
    for tl in (100, 1000):
        assert run("train-diffusion", "--data", d, "--out", tmp_path / f"diff{tl}", "--config", tiny_ini,
                   "--iters", 0, "--tau-train", tl) == 0
    return tmp_path, d


def test_generate_deterministic_and_empty(tmp_path, tiny_ini):
    for name in ("a", "b"):
        assert run("generate", "--out", tmp_path / name, "--count", 2, "--seed", 7, "--config", tiny_ini) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert (tmp_path / "a.config.ini").exists()
    assert run("generate", "--out", tmp_path / "e", "--count", 0) == 0
    assert read_dataset(tmp_path / "e") == []


def test_generate_default_geometry(tmp_path):
    assert run("generate", "--out", tmp_path / "d", "--count", 1, "--no-noise") == 0
    s = read_dataset(tmp_path / "d")[0]
    assert s.raw.shape == (8, 4, 32, 32) and s.hr.shape == (3, 256, 256)
    assert s.meta.noise_shot == 0.0


def test_generate_from_image_dir(tmp_path, tiny_ini):
    from PIL import Image

    (tmp_path / "hr").mkdir()
    Image.fromarray(np.random.default_rng(0).integers(0, 255, (40, 50, 3), dtype=np.uint8)).save(tmp_path / "hr/x.png")
    assert run("generate", "--out", tmp_path / "d", "--count", 2, "--hr-dir", tmp_path / "hr", "--config", tiny_ini) == 0
    assert read_dataset(tmp_path / "d")[1].hr.shape == (3, 32, 32)
    assert run("generate", "--out", tmp_path / "d2", "--hr-dir", tmp_path / "nothing") == 3


def test_train_outputs(workspace):
    tmp, _ = workspace
    for sub in ("base", "diff100"):
        assert {"checkpoint.pt", "loss.csv", "config.ini"} <= {p.name for p in (tmp / sub).iterdir()}


def test_train_diffusion_logs_restricted_steps(workspace, tiny_ini):
    tmp, d = workspace
    assert run("train-diffusion", "--data", d, "--out", tmp / "t10", "--config", tiny_ini, "--iters", 5,
               "--tau-train", 10) == 0
    with (tmp / "t10" / "loss.csv").open() as fh:
        steps = [int(s) for row in csv.DictReader(fh) for s in row["steps"].split(";")]
    assert len(steps) == 10 and 1 <= min(steps) and max(steps) <= 10


def test_resume_and_mismatch_exit_codes(workspace, tiny_ini):
    tmp, d = workspace
    assert run("train-baseline", "--data", d, "--out", tmp / "base", "--config", tiny_ini, "--iters", 4,
               "--resume") == 0
    assert run("train-baseline", "--data", d, "--out", tmp / "base", "--config", tiny_ini, "--lr", 0.5,
               "--resume") == 2


def test_sample_tau_zero_equals_initializer(workspace):
    tmp, d = workspace
    assert run("sample", "--diffusion-ckpt", tmp / "diff100", "--baseline-ckpt", tmp / "base", "--data", d,
               "--out", tmp / "s0", "--tau", 0) == 0
    for i in range(3):
        sr, init = np.load(tmp / f"s0/sr_{i:04d}.npy"), np.load(tmp / f"s0/init_{i:04d}.npy")
        assert sr.tobytes() == init.tobytes()
        assert (tmp / f"s0/grid_{i:04d}.png").exists()
    assert json.loads((tmp / "s0/metrics.json").read_text())["ids"]["tau"] == 0


def test_sample_seeded_determinism(workspace):
    tmp, d = workspace
    for name in ("a", "b"):
        assert run("sample", "--diffusion-ckpt", tmp / "diff100", "--data", d, "--init", "bicubic",
                   "--out", tmp / name, "--tau", 8, "--seed", 4) == 0
    assert np.load(tmp / "a/sr_0001.npy").tobytes() == np.load(tmp / "b/sr_0001.npy").tobytes()
    run("sample", "--diffusion-ckpt", tmp / "diff100", "--data", d, "--init", "bicubic",
        "--out", tmp / "c", "--tau", 8, "--seed", 5)
    assert np.load(tmp / "a/sr_0001.npy").tobytes() != np.load(tmp / "c/sr_0001.npy").tobytes()


def test_sample_errors(workspace):
    tmp, d = workspace
    ck = tmp / "diff100"
    assert run("sample", "--diffusion-ckpt", ck, "--data", d, "--init", "random-noise", "--tau", 5,
               "--out", tmp / "x") == 2
    assert run("sample", "--diffusion-ckpt", tmp / "missing", "--data", d, "--init", "bicubic",
               "--out", tmp / "x") == 3
    assert run("sample", "--diffusion-ckpt", ck, "--data", d, "--out", tmp / "x") == 3  # no baseline
    assert run("sample", "--diffusion-ckpt", ck, "--data", d, "--init", "bicubic", "--tau", 5000,
               "--out", tmp / "x") == 2


def test_evaluate(workspace, tmp_path):
    tmp, d = workspace
    run("sample", "--diffusion-ckpt", tmp / "diff100", "--data", d, "--init", "bicubic", "--tau", 0,
        "--out", tmp / "s")
    assert run("evaluate", "--pred-dir", tmp / "s", "--data", d, "--out", tmp / "ev",
               "--plugin", "lpips=no-such-tool-xyz {a} {b}", "--workers", 2) == 0
    agg = json.loads((tmp / "ev/metrics.json").read_text())["aggregate"]
    ref = json.loads((tmp / "s/metrics.json").read_text())["aggregate"]
    assert agg["psnr"] == pytest.approx(ref["psnr"]) and agg["lpips"] == "unavailable"
    assert run("evaluate", "--pred-dir", tmp / "nope", "--data", d, "--out", tmp / "ev") == 3
    assert run("evaluate", "--pred-dir", tmp / "s", "--data", d, "--out", tmp / "ev", "--plugin", "bad") == 2


def test_sweep_tau(workspace):
    tmp, d = workspace
    out = tmp / "sweep.csv"
    assert run("sweep-tau", "--diffusion-ckpt", tmp / "diff100", "--data", d, "--init", "bicubic",
               "--taus", "0,3,150", "--out", out) == 0
    with out.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 * 2
    assert {r["tau"]: r["out_of_range"] for r in rows} == {"0": "0", "3": "0", "150": "1"}
    series = read_sweep_csv(out)
    assert [t for t, _ in series["psnr"]] == [0, 3, 150]
    run("sample", "--diffusion-ckpt", tmp / "diff100", "--data", d, "--init", "bicubic", "--tau", 0,
        "--out", tmp / "s")
    init_psnr = json.loads((tmp / "s/metrics.json").read_text())["aggregate"]["psnr"]
    assert series["psnr"][0][1] == pytest.approx(init_psnr, rel=1e-12)
    assert run("sweep-tau", "--diffusion-ckpt", tmp / "diff100", "--data", d, "--init", "bicubic",
               "--taus", "x", "--out", out) == 2


def test_sweep_plot(workspace):
    pytest.importorskip("matplotlib")
    tmp, d = workspace
    assert run("sweep-tau", "--diffusion-ckpt", tmp / "diff100", "--data", d, "--init", "bicubic",
               "--taus", "0,2", "--out", tmp / "s.csv", "--plot", tmp / "s.png") == 0
    assert (tmp / "s.png").stat().st_size > 0


def test_ablate(workspace):
    tmp, d = workspace
    args = ["ablate", "--data", d, "--out", tmp / "abl", "--limit", 1,
            "--diffusion-100", tmp / "diff100", "--diffusion-1000", tmp / "diff1000", "--baseline-ckpt", tmp / "base"]
    assert run(*args, "--rows", "abcde") == 0
    table = json.loads((tmp / "abl/ablation.json").read_text())
    by_row = {r["row"]: r for r in table}
    assert by_row["c"]["expected_degraded"] == 1 and by_row["c"]["initializer"] == "bicubic"
    assert (by_row["e"]["initializer"], by_row["e"]["tau_L"], by_row["e"]["tau"]) == ("baseline_sr", 100, 5)
    assert (tmp / "abl/ablation.md").exists()


def test_ablate_errors(workspace, capsys):
    tmp, d = workspace
    assert run("ablate", "--data", d, "--out", tmp / "a", "--rows", "") == 2
    assert run("ablate", "--data", d, "--out", tmp / "a", "--rows", "z") == 2
    assert run("ablate", "--data", d, "--out", tmp / "a", "--rows", "de", "--diffusion-100", tmp / "diff100") == 3
    err = capsys.readouterr().err
    assert "baseline" in err and "diffusion_1000" in err


def test_io_config_and_numeric_exit_codes(workspace, tmp_path, tiny_ini):
    tmp, d = workspace
    (tmp / "junk.bsrd").write_bytes(b"NOPE" + bytes(40))
    assert run("train-baseline", "--data", tmp / "junk.bsrd", "--out", tmp / "o") == 3
    assert run("train-baseline", "--data", tmp / "none.bsrd", "--out", tmp / "o") == 3
    (tmp / "bad.ini").write_text("[optim]\nlr = fast\n")
    assert run("train-baseline", "--data", d, "--out", tmp / "o", "--config", tmp / "bad.ini") == 2
    samples = read_dataset(d)
    samples[0].hr[:] = np.nan
    write_dataset(samples, tmp / "nan.bsrd")
    assert run("train-baseline", "--data", tmp / "nan.bsrd", "--out", tmp / "o", "--config", tiny_ini,
               "--batch-size", 3) == 4


def test_usage_error():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2
