"""Command line entry point: ``burstdiff <command> [options]``.

Exit codes: 0 success, 2 configuration/usage error, 3 missing or unreadable
input/output, 4 numeric failure during training.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import inference
from .burst import DatasetError, generate_dataset, load_hr_images, read_dataset, write_dataset
from .config import ConfigError, RunConfig
from .diffusion import Initializer, ReverseStartConfig
from .metrics import evaluate_pairs, parse_plugin_spec
from .schedule import ScheduleError
from .training import (CHECKPOINT_NAME, NumericError, ResumeMismatchError, TrainData, load_model, train)

logger = logging.getLogger("burstdiff")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class MissingInputError(FileNotFoundError):
    pass


# ----------------------------------------------------------------------------
# helpers

def _base_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.override(run__seed=args.seed)
    return cfg


def _require(path, what):
    if path is None or not Path(path).exists():
        raise MissingInputError(f"missing {what}: {path}")
    return Path(path)


def _load_data(path, limit=None):
    samples = read_dataset(_require(path, "dataset"))
    if limit is not None:
        samples = samples[:limit]
    if not samples:
        raise ConfigError(f"dataset {path} holds no samples")
    return samples


def _sync_data(cfg: RunConfig, samples) -> RunConfig:
    # model geometry follows the dataset actually used
    s = samples[0]
    return cfg.override(data__hr_size=int(s.hr.shape[-1]), data__burst_size=int(s.raw.shape[0]))


def _ckpt_path(path):
    p = Path(path) if path is not None else None
    if p is not None and p.is_dir():
        p = p / CHECKPOINT_NAME
    return _require(p, "checkpoint")


def _plugins(specs):
    try:
        return [parse_plugin_spec(s) for s in specs or ()]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _taus(text):
    try:
        taus = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad tau list {text!r}") from None
    if not taus:
        raise ConfigError("empty tau list")
    return taus


# ----------------------------------------------------------------------------
# commands

def cmd_generate(args) -> int:
    cfg = _base_config(args).override(
        data__burst_size=args.burst_size, data__max_shift=args.max_shift, data__max_rot=args.max_rot,
        data__hr_size=args.hr_size,
    )
    cfg.validate()
    if args.count < 0:
        raise ConfigError("--count must be >= 0")
    hr_images = load_hr_images(args.hr_dir) if args.hr_dir else None
    samples = generate_dataset(args.count, cfg.degradation(no_noise=args.no_noise), cfg.run.seed,
                               hr_size=cfg.data.hr_size, hr_images=hr_images)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(samples, out)
    cfg.save(out.with_name(out.name + ".config.ini"))
    logger.info("wrote %d samples to %s", len(samples), out)
    return EXIT_OK


def _cmd_train(kind, args) -> int:
    cfg = _base_config(args).override(
        optim__iters=args.iters, optim__batch_size=args.batch_size, optim__lr=args.lr,
        optim__log_every=args.log_every, optim__ckpt_every=args.ckpt_every,
        diffusion__tau_train=getattr(args, "tau_train", None), schedule__kind=getattr(args, "schedule", None),
    )
    samples = _load_data(args.data, args.limit)
    cfg = _sync_data(cfg, samples).validate()
    train(kind, TrainData.from_samples(samples), cfg, out_dir=args.out, resume=args.resume)
    logger.info("%s checkpoint written to %s", kind, Path(args.out) / CHECKPOINT_NAME)
    return EXIT_OK


def cmd_train_baseline(args) -> int:
    return _cmd_train("baseline", args)


def cmd_train_diffusion(args) -> int:
    return _cmd_train("diffusion", args)


def _load_pair(args, initializer):
    model, cfg, _ = load_model(_ckpt_path(args.diffusion_ckpt), "diffusion")
    baseline = None
    if Initializer.parse(initializer) is Initializer.BASELINE_SR:
        baseline, _, _ = load_model(_ckpt_path(args.baseline_ckpt), "baseline")
    elif getattr(args, "baseline_ckpt", None):
        baseline, _, _ = load_model(_ckpt_path(args.baseline_ckpt), "baseline")
    return model, cfg, baseline


def _reverse_start(cfg: RunConfig, tau, initializer) -> ReverseStartConfig:
    s = cfg.make_schedule()
    if tau is None:
        tau = s.T if Initializer.parse(initializer) is Initializer.RANDOM_NOISE else cfg.diffusion.tau
    rs = ReverseStartConfig(int(tau), cfg.diffusion.tau_train, initializer)
    rs.validate(s)
    return rs


def cmd_sample(args) -> int:
    initializer = Initializer.parse(args.init)
    model, cfg, baseline = _load_pair(args, initializer)
    cfg = cfg.override(run__seed=args.seed, diffusion__tau=args.tau, diffusion__initializer=initializer.value)
    rs = _reverse_start(cfg, args.tau, initializer)
    samples = _load_data(args.data, args.limit)
    data = TrainData.from_samples(samples)
    init01 = inference.initial_images(initializer, data.raw, cfg.data, baseline)
    pred = inference.sample_images(model, data.raw, init01, rs, cfg.make_schedule(), cfg.run.seed,
                                   args.batch_size)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.ini")
    bicubic = inference.initial_images(Initializer.BICUBIC, data.raw, cfg.data)
    base_imgs = inference.initial_images(Initializer.BASELINE_SR, data.raw, cfg.data, baseline) \
        if baseline is not None else None
    size = tuple(data.hr.shape[-2:])
    for i in range(pred.shape[0]):
        sr = pred[i].numpy()
        np.save(out / f"sr_{i:04d}.npy", sr)
        inference.save_png(sr, out / f"sr_{i:04d}.png")
        if init01 is not None:
            np.save(out / f"init_{i:04d}.npy", init01[i].numpy())
        grid = inference.make_grid([data.hr[i].numpy(), bicubic[i].numpy(),
                                    None if base_imgs is None else base_imgs[i].numpy(), sr], size)
        inference.save_png(grid, out / f"grid_{i:04d}.png")
    report = evaluate_pairs(pred.numpy(), data.hr.numpy(),
                            ids={"tau": rs.tau, "tau_L": rs.tau_L, "initializer": initializer.value,
                                 "seed": cfg.run.seed})
    report.to_csv(out / "metrics.csv")
    report.to_json(out / "metrics.json")
    logger.info("sampled %d images into %s: %s", pred.shape[0], out, report.aggregate())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pred_dir = _require(args.pred_dir, "prediction directory")
    samples = _load_data(args.data, args.limit)
    preds = []
    for i in range(len(samples)):
        preds.append(np.load(_require(pred_dir / f"{args.prefix}_{i:04d}.npy", "prediction")))
    report = evaluate_pairs(preds, [s.hr for s in samples], _plugins(args.plugin),
                            ids={"pred_dir": str(pred_dir)}, workers=args.workers)
    out = Path(args.out)
    report.to_csv(out / "metrics.csv")
    report.to_json(out / "metrics.json")
    print(json.dumps(report.aggregate(), sort_keys=True))
    return EXIT_OK


def cmd_sweep_tau(args) -> int:
    initializer = Initializer.parse(args.init)
    if initializer is Initializer.RANDOM_NOISE:
        raise ConfigError("a tau sweep needs an image initializer")
    taus = _taus(args.taus)
    model, cfg, baseline = _load_pair(args, initializer)
    cfg = cfg.override(run__seed=args.seed)
    s = cfg.make_schedule()
    for tau in taus:
        ReverseStartConfig(tau, cfg.diffusion.tau_train, initializer).validate(s)
    samples = _load_data(args.data, args.limit)
    data = TrainData.from_samples(samples)
    init01 = inference.initial_images(initializer, data.raw, cfg.data, baseline)
    rows = inference.sweep_tau(model, data.raw, data.hr, init01, taus, cfg.diffusion.tau_train,
                               initializer, s, cfg.run.seed, _plugins(args.plugin), args.batch_size)
    out = Path(args.out)
    inference.write_sweep_csv(rows, out)
    cfg.save(out.with_name(out.name + ".config.ini"))
    flagged = sorted({r["tau"] for r in rows if r["out_of_range"]})
    if flagged:
        logger.warning("tau values beyond the trained range 1..%d: %s", cfg.diffusion.tau_train, flagged)
    if args.plot:
        inference.plot_sweep(out, args.plot)
    return EXIT_OK


def cmd_ablate(args) -> int:
    try:
        rows = inference.parse_rows(args.rows)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    given = {"diffusion_1000": args.diffusion_1000, "diffusion_100": args.diffusion_100,
             "baseline": args.baseline_ckpt}
    missing = []
    for name in sorted(inference.required_checkpoints(rows)):
        path = given[name]
        if path is None or not (Path(path).is_file() or (Path(path) / CHECKPOINT_NAME).is_file()):
            missing.append(f"{name} ({path or 'not given'})")
    if missing:
        raise MissingInputError("missing checkpoints: " + ", ".join(missing))

    samples = _load_data(args.data, args.limit)
    data = TrainData.from_samples(samples)
    models = {}
    for name in inference.required_checkpoints(rows):
        kind = "baseline" if name == "baseline" else "diffusion"
        models[name] = load_model(_ckpt_path(given[name]), kind)
    baseline = models["baseline"][0] if "baseline" in models else None
    targets = data.hr.numpy()
    table = []
    for row in rows:
        model, cfg, _ = models[f"diffusion_{row.tau_train}"]
        if cfg.diffusion.tau_train != row.tau_train:
            raise ConfigError(f"row ({row.key}) needs a model trained on 1..{row.tau_train}, "
                              f"checkpoint has 1..{cfg.diffusion.tau_train}")
        cfg = cfg.override(run__seed=args.seed)
        s = cfg.make_schedule()
        rs = ReverseStartConfig(s.T if row.tau is None else row.tau, row.tau_train, row.initializer)
        init01 = inference.initial_images(row.initializer, data.raw, cfg.data, baseline)
        pred = inference.sample_images(model, data.raw, init01, rs, s, cfg.run.seed, args.batch_size)
        agg = evaluate_pairs(pred.numpy(), targets, _plugins(args.plugin)).aggregate()
        table.append({"row": row.key, "label": row.label, "initializer": row.initializer.value,
                      "tau_L": row.tau_train, "tau": rs.tau, "expected_degraded": int(row.expected_degraded),
                      **agg})
        logger.info("row (%s): %s", row.key, agg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(table, indent=2) + "\n")
    cols = list(table[0])
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in table:
        lines.append("| " + " | ".join(f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols) + " |")
    (out / "ablation.md").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="burstdiff", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="INI config file; flags override its values")
        if seed:
            p.add_argument("--seed", type=int)
        p.add_argument("--limit", type=int, help="use only the first N dataset samples")

    g = sub.add_parser("generate", help="synthesize a RAW burst dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=32)
    g.add_argument("--hr-dir", help="directory of HR images (default: procedural scenes)")
    g.add_argument("--hr-size", type=int)
    g.add_argument("--burst-size", type=int)
    g.add_argument("--max-shift", type=float)
    g.add_argument("--max-rot", type=float)
    g.add_argument("--no-noise", action="store_true")
    common(g)
    g.set_defaults(func=cmd_generate)

    for name, func, diffusion in (("train-baseline", cmd_train_baseline, False),
                                  ("train-diffusion", cmd_train_diffusion, True)):
        t = sub.add_parser(name, help=f"train the {'diffusion' if diffusion else 'baseline'} model")
        t.add_argument("--data", required=True)
        t.add_argument("--out", required=True, help="run directory (checkpoint, loss log, config)")
        t.add_argument("--iters", type=int)
        t.add_argument("--batch-size", type=int)
        t.add_argument("--lr", type=float)
        t.add_argument("--log-every", type=int)
        t.add_argument("--ckpt-every", type=int)
        t.add_argument("--resume", action="store_true")
        if diffusion:
            t.add_argument("--tau-train", type=int, help="train on steps 1..tau_train")
            t.add_argument("--schedule", choices=["linear", "sigmoid"])
        common(t)
        t.set_defaults(func=func)

    def sampling(p):
        p.add_argument("--diffusion-ckpt", required=True)
        p.add_argument("--baseline-ckpt")
        p.add_argument("--data", required=True)
        p.add_argument("--batch-size", type=int, default=8)
        p.add_argument("--plugin", action="append", help="perceptual metric as name=command")
        common(p)

    s = sub.add_parser("sample", help="refine initial SR images with the diffusion model")
    sampling(s)
    s.add_argument("--out", required=True)
    s.add_argument("--tau", type=int)
    s.add_argument("--init", default="baseline_sr", help="random-noise | bicubic | baseline")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("evaluate", help="score saved predictions against ground truth")
    e.add_argument("--pred-dir", required=True)
    e.add_argument("--prefix", default="sr")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--plugin", action="append", help="perceptual metric as name=command")
    e.add_argument("--workers", type=int, default=1, help="parallel per-sample evaluation")
    common(e, seed=False)
    e.set_defaults(func=cmd_evaluate)

    w = sub.add_parser("sweep-tau", help="metrics as a function of the reverse start step")
    sampling(w)
    w.add_argument("--taus", default="1,5,30,100")
    w.add_argument("--init", default="baseline_sr")
    w.add_argument("--out", required=True, help="CSV path")
    w.add_argument("--plot", help="optional PNG plot path")
    w.set_defaults(func=cmd_sweep_tau)

    a = sub.add_parser("ablate", help="run ablation rows a-e")
    a.add_argument("--rows", default="abcde")
    a.add_argument("--diffusion-1000", help="checkpoint of a model trained on steps 1..1000")
    a.add_argument("--diffusion-100", help="checkpoint of a model trained on steps 1..100")
    a.add_argument("--baseline-ckpt")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--batch-size", type=int, default=8)
    a.add_argument("--plugin", action="append")
    common(a)
    a.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.use_deterministic_algorithms(True)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ResumeMismatchError, ScheduleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
