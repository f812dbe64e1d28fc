"""Command-line pipeline: train-denoiser, train-gan, generate, eval, finetune, mix, toy-data.

Every command reads an optional JSON config (``--config``) plus
``--section.key=value`` overrides, echoes the resolved config into the run
directory and exits 0 on success. Failures print one JSON line to stderr
and exit with 2 (missing checkpoint or input), 3 (invalid config) or
4 (numerical abort).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, from_dict, load_config
from .denoiser import DenoiserConfig, load_denoiser, save_denoiser
from .evaluation import dataset_psnr, domain_report, ssim
from .generator import generate_dataset
from .imaging import MixSpec, PairedDataset, load_dataset, load_png, mix_datasets, save_dataset, synthetic_scenes
from .noise import ToyCameraConfig, synthesize
from .training import (DenoiserSchedule, NumericalAbort, TrainConfig, finetune_denoiser,
                       fit_denoiser, load_gan_checkpoint, save_gan_checkpoint, train_gan)

log = logging.getLogger("pngan")

EXIT_MISSING = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


class MissingInput(FileNotFoundError):
    def __init__(self, path, what="checkpoint"):
        super().__init__(f"missing {what}: {path}")
        self.path = str(path)
        self.what = what


def _require(path, what="checkpoint") -> Path:
    if path is None or not Path(path).exists():
        raise MissingInput(path, what)
    return Path(path)


def _run_dir(cfg: RunConfig) -> Path:
    d = cfg.resolved_run_dir()
    d.mkdir(parents=True, exist_ok=True)
    return d


def _echo_config(cfg: RunConfig, run_dir: Path, command: str):
    tree = cfg.to_dict()
    tree["run_dir"] = str(run_dir)
    (run_dir / "config.json").write_text(json.dumps(tree, indent=2, sort_keys=True))
    (run_dir / f"config.{command}.json").write_text(json.dumps(tree, indent=2, sort_keys=True))


def _load_clean_images(path) -> list:
    path = _require(path, "clean image directory")
    if (path / "clean").is_dir():
        path = path / "clean"
    files = sorted(path.glob("*.png"))
    return [load_png(f) for f in files], [f.stem for f in files]


def cmd_train_denoiser(cfg: RunConfig) -> int:
    run_dir = _run_dir(cfg)
    _echo_config(cfg, run_dir, "train-denoiser")
    data = load_dataset(_require(cfg.data.train, "training dataset"))
    d = cfg.denoiser
    sched = DenoiserSchedule(steps=d.steps, batch=d.batch, patch=d.patch, lr_init=d.lr_init,
                             lr_final=d.lr_final, seed=d.seed)
    with open(run_dir / "denoiser_log.jsonl", "w") as fh:
        net = fit_denoiser(data, sched, config=DenoiserConfig(d.depth, d.width), log_to=fh)
    out = Path(d.checkpoint or run_dir / "denoiser.ckpt")
    save_denoiser(out, net)
    print(json.dumps({"denoiser": str(out), "final_l1": net.loss_curve[-1] if net.loss_curve else None}))
    return 0


def cmd_train_gan(cfg: RunConfig) -> int:
    run_dir = _run_dir(cfg)
    ckpt = _require(cfg.denoiser.checkpoint or run_dir / "denoiser.ckpt")
    data = load_dataset(_require(cfg.data.train, "training dataset"))
    _echo_config(cfg, run_dir, "train-gan")
    dd = load_denoiser(ckpt)
    try:
        g, d, state = train_gan(data, cfg.noise_config, cfg.gan, dd, run_dir=run_dir)
    except NumericalAbort as exc:
        snap = {k: v for k, v in exc.snapshot.items() if isinstance(v, np.ndarray)}
        np.savez(run_dir / "abort_snapshot.npz", **snap)
        raise
    out = save_gan_checkpoint(run_dir / "gan.ckpt", g, d, state, cfg.gan)
    print(json.dumps({"gan": str(out), "steps": state.step}))
    return 0


def _load_generator(path):
    from .checkpoint import load_checkpoint

    _, meta = load_checkpoint(path)
    tcfg = from_dict(TrainConfig, meta["config"])
    g, _, _ = load_gan_checkpoint(path, tcfg)
    return g


def cmd_generate(cfg: RunConfig) -> int:
    run_dir = _run_dir(cfg)
    ckpt = _require(cfg.generate.checkpoint or run_dir / "gan.ckpt")
    clean, names = _load_clean_images(cfg.data.clean or cfg.data.train)
    _echo_config(cfg, run_dir, "generate")
    g = _load_generator(ckpt)
    ds = generate_dataset(clean, cfg.noise_config, g, seed=cfg.generate.seed, names=names)
    out = save_dataset(ds, cfg.generate.out or run_dir / "generated")
    print(json.dumps({"generated": str(out), "count": len(ds)}))
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    run_dir = _run_dir(cfg)
    e = cfg.eval
    real = load_dataset(_require(cfg.data.test, "test dataset"))
    generated = load_dataset(_require(e.generated or run_dir / "generated", "generated dataset"),
                             source="generated")
    if e.baseline:
        baseline = load_dataset(_require(e.baseline, "baseline dataset"), source="synthetic")
    else:
        noise = cfg.noise_config
        baseline = PairedDataset(tuple((c, synthesize(c, noise, seed=e.seed * 100_003 + i))
                                       for i, c in enumerate(real.clean)), "synthetic")
    _echo_config(cfg, run_dir, "eval")
    report = domain_report(generated, real, baseline, patch=e.patch, max_patches=e.max_patches,
                           seed=e.seed, bandwidth=e.bandwidth)
    if e.denoiser:
        net = load_denoiser(_require(e.denoiser))
        from .denoiser import denoise

        report["psnr"] = dataset_psnr(net, real)
        report["ssim"] = float(np.mean([ssim(denoise(n, net), c) for c, n in real]))
    (run_dir / "report.json").write_text(json.dumps(report, indent=2))
    print(json.dumps(report))
    return 0


def cmd_mix(cfg: RunConfig) -> int:
    run_dir = _run_dir(cfg)
    m = cfg.mix
    real = load_dataset(_require(cfg.data.train, "training dataset"))
    generated = load_dataset(_require(m.generated or run_dir / "generated", "generated dataset"),
                             source="generated")
    _echo_config(cfg, run_dir, "mix")
    mixed = mix_datasets(real, generated, MixSpec(m.q, m.seed))
    out = save_dataset(mixed, m.out or run_dir / "mixed")
    print(json.dumps({"mixed": str(out), "count": len(mixed)}))
    return 0


def cmd_finetune(cfg: RunConfig) -> int:
    run_dir = _run_dir(cfg)
    f = cfg.finetune
    base = load_denoiser(_require(f.base or cfg.denoiser.checkpoint or run_dir / "denoiser.ckpt"))
    real = load_dataset(_require(cfg.data.train, "training dataset"))
    if f.q > 0:
        generated = load_dataset(_require(f.generated or run_dir / "generated", "generated dataset"),
                                 source="generated")
    else:
        generated = PairedDataset((), "generated")
    _echo_config(cfg, run_dir, "finetune")
    mixed = mix_datasets(real, generated, MixSpec(f.q, f.mix_seed))
    with open(run_dir / "finetune_log.jsonl", "w") as fh:
        net = finetune_denoiser(base, mixed, f.schedule(), log_to=fh)
    out = save_denoiser(run_dir / "finetuned.ckpt", net, {"q": f.q})
    result = {"finetuned": str(out), "pairs": len(mixed)}
    if cfg.data.test:
        result["psnr"] = dataset_psnr(net, load_dataset(_require(cfg.data.test, "test dataset")))
    print(json.dumps(result))
    return 0


def cmd_toy_data(cfg: RunConfig, count: int, size: int, seed: int, out: Path,
                 camera: ToyCameraConfig) -> int:
    clean = synthetic_scenes(count, size, seed)
    pairs = tuple((c, synthesize(c, camera, seed=seed * 1_000_003 + i)) for i, c in enumerate(clean))
    ds = PairedDataset(pairs, "real", metadata={"noise": camera.to_dict(), "seed": seed})
    save_dataset(ds, out, bits=16)
    print(json.dumps({"dataset": str(out), "count": count}))
    return 0


COMMANDS = {
    "train-denoiser": (cmd_train_denoiser, "train the frozen denoiser on real pairs"),
    "train-gan": (cmd_train_gan, "adversarially train the generator against real noise"),
    "generate": (cmd_generate, "write fake noisy/clean pairs with a trained generator"),
    "eval": (cmd_eval, "MMD domain report (and denoiser PSNR/SSIM)"),
    "finetune": (cmd_finetune, "finetune a denoiser on real pairs mixed with generated ones"),
    "mix": (cmd_mix, "write a real+generated mixed dataset at ratio q"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pngan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text,
                           epilog="Override any config key with --section.key=value, "
                                  "e.g. --gan.total_steps=2000 --noise.sigma_n=25.")
        p.add_argument("--config", help="JSON config file")
    toy = sub.add_parser("toy-data", help="write a toy real-noise dataset (16-bit PNG)")
    toy.add_argument("out")
    toy.add_argument("--count", type=int, default=500)
    toy.add_argument("--size", type=int, default=64)
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--a", type=float, default=0.01)
    toy.add_argument("--b", type=float, default=0.02)
    toy.add_argument("--correlation-radius", type=int, default=1)
    return parser


def _fail(code: int, kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "exit": code, "message": message, **extra}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        if args.command == "toy-data":
            if extra:
                raise ConfigError(f"unexpected arguments {extra}")
            cam = ToyCameraConfig(a=args.a, b=args.b, correlation_radius=args.correlation_radius)
            return cmd_toy_data(None, args.count, args.size, args.seed, Path(args.out), cam)
        bad = [e for e in extra if not e.startswith("--") or "=" not in e]
        if bad:
            raise ConfigError(f"unrecognized arguments {bad}; overrides look like --section.key=value")
        cfg = load_config(args.config, extra)
        return COMMANDS[args.command][0](cfg)
    except MissingInput as exc:
        return _fail(EXIT_MISSING, "missing_input", str(exc), path=exc.path, what=exc.what)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "invalid_config", str(exc))
    except NumericalAbort as exc:
        return _fail(EXIT_NUMERIC, "numerical_abort", str(exc), step=exc.snapshot.get("step"))


if __name__ == "__main__":
    sys.exit(main())
