"""``nerfgan`` command line: train, render, sample, interpolate, refine, evaluate, make-dataset.

Every invocation writes ``run.json`` (a run manifest) into its output
directory. Exit codes: 0 success, 1 runtime failure, 2 usage or
configuration error. Outputs default to ``$NERFGAN_OUT/<command>-<time>``
(``$NERFGAN_OUT`` defaults to ``./runs``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .config import PRESETS, TrainingConfig, ablation_config, dump_config, parse_config
from .data import load_image, load_image_folder, make_synthetic_dataset, to_pil
from .errors import CheckpointError, ConfigurationError, EvaluationError, NonFiniteLossError

log = logging.getLogger("nerfgan")

OUTPUT_ROOT_ENV = "NERFGAN_OUT"
RUN_MANIFEST = "run.json"
SUMMARY_CSV = "summary.csv"


class UsageError(Exception):
    pass


def _output_dir(args, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        out = root / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, argv, started: float, outputs: list[str],
                    config: TrainingConfig | None = None, seed: int | None = None,
                    extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "seed": seed,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "outputs": outputs,
    }
    if config is not None:
        manifest["config"] = {f.name: line.split(" = ", 1)[1]
                              for f, line in zip(fields(config), dump_config(config).splitlines())}
    if extra:
        manifest.update(extra)
    (out / RUN_MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")


def _load_config(args) -> TrainingConfig:
    base = PRESETS[args.preset]() if getattr(args, "preset", None) else TrainingConfig()
    path = args.config
    overrides = list(args.set or [])
    if path and Path(path).suffix == ".json":
        # a previous run manifest: replay its resolved config
        stored = json.loads(Path(path).read_text()).get("config")
        if stored is None:
            raise ConfigurationError(f"{path}: run manifest has no config block")
        overrides = [f"{k} = {v}" for k, v in stored.items()] + overrides
        path = None
    if args.seed is not None:
        overrides.append(f"seed = {args.seed}")
    cfg = parse_config(path, overrides, base)
    if getattr(args, "ablation", None):
        cfg = ablation_config(args.ablation, cfg)
    return cfg


def _save_images(images, out: Path, prefix: str) -> list[str]:
    names = []
    for i, img in enumerate(images):
        name = f"{prefix}_{i:03d}.png"
        to_pil(img).save(out / name)
        names.append(name)
    return names


def _load_state(path):
    from .training import load_checkpoint
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args, argv) -> dict:
    from .training import load_checkpoint, load_pretrained_generator, new_state, set_deterministic, train

    started = time.time()
    cfg = _load_config(args)
    if args.deterministic:
        set_deterministic(True)
    out = _output_dir(args, "train")
    top_res = max(stage.resolution for _, stage in cfg.stages)
    if args.dataset:
        data = load_image_folder(args.dataset, center_crop=True, resolution=top_res)
    else:
        data = make_synthetic_dataset(cfg.n_scenes, 1, cfg.prior, top_res, cfg.seed,
                                      radius=cfg.radius, fov=cfg.fov)
    state = load_checkpoint(args.resume, expected=cfg) if args.resume else new_state(cfg)
    if args.pretrained:
        load_pretrained_generator(state, args.pretrained)
    elif cfg.flags.freeze_generator:
        log.warning("ablation A freezes an untrained generator; pass --pretrained to load one")
    (out / "config.cfg").write_text(dump_config(cfg))
    state = train(cfg, data.image_source(), out, iterations=args.iters, state=state,
                  checkpoint_every=args.checkpoint_every, log_every=args.log_every)
    # paths relative to the run directory keep the summary comparable across runs
    summary = {"iteration": state.iteration, "checkpoint": "checkpoint", "log": "log.csv",
               "images": len(data)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    _write_manifest(out, "train", argv, started, ["checkpoint", "log.csv", "config.cfg", "summary.json"],
                    cfg, cfg.seed, {"ablation_flags": asdict(cfg.flags)})
    return summary


def cmd_render(args, argv) -> dict:
    from .inference import ViewRequest, novel_views, parse_poses

    started = time.time()
    state = _load_state(args.checkpoint)
    out = _output_dir(args, "render")
    image = load_image(args.input, state.config.resolution)
    poses = parse_poses(args.poses, state.config.prior)
    images = novel_views(image, ViewRequest(poses), state)
    names = _save_images(images, out, "view")
    _write_manifest(out, "render", argv, started, names, seed=None,
                    extra={"poses": [list(p) for p in poses], "checkpoint": str(args.checkpoint)})
    return {"images": len(names), "out": str(out)}


def cmd_sample(args, argv) -> dict:
    from .inference import sample_unconditional

    started = time.time()
    state = _load_state(args.checkpoint)
    out = _output_dir(args, "sample")
    images = sample_unconditional(args.n, state, seed=args.seed or 0)
    names = _save_images(images, out, "sample")
    _write_manifest(out, "sample", argv, started, names, seed=args.seed or 0,
                    extra={"checkpoint": str(args.checkpoint)})
    return {"images": len(names), "out": str(out)}


def cmd_interpolate(args, argv) -> dict:
    from .inference import interpolate

    started = time.time()
    state = _load_state(args.checkpoint)
    out = _output_dir(args, "interpolate")
    res = state.config.resolution
    images = interpolate(load_image(args.input_a, res), load_image(args.input_b, res), args.steps,
                         state, args.pose_mode)
    names = _save_images(images, out, "frame")
    _write_manifest(out, "interpolate", argv, started, names,
                    extra={"checkpoint": str(args.checkpoint), "pose_mode": args.pose_mode})
    return {"images": len(names), "out": str(out)}


def cmd_refine(args, argv) -> dict:
    from .inference import refine_latent

    started = time.time()
    state = _load_state(args.checkpoint)
    out = _output_dir(args, "refine")
    image = load_image(args.input, state.config.resolution)
    result = refine_latent(image, state, init=args.init, iterations=args.iters,
                           step_size=args.step_size, optimize_pose=not args.z_only,
                           seed=args.seed or 0)
    to_pil(result.image).save(out / "refined.png")
    summary = {"loss": result.loss, "initial_loss": result.initial_loss,
               "best_iteration": result.best_iteration,
               "z": result.z.tolist(), "pose": result.pose.tolist()}
    (out / "refine.json").write_text(json.dumps(summary, indent=2) + "\n")
    _write_manifest(out, "refine", argv, started, ["refined.png", "refine.json"], seed=args.seed,
                    extra={"checkpoint": str(args.checkpoint)})
    return {k: summary[k] for k in ("loss", "initial_loss", "best_iteration")}


def cmd_evaluate(args, argv) -> dict:
    from .metrics import evaluate

    started = time.time()
    state = _load_state(args.checkpoint)
    out = _output_dir(args, "evaluate")
    data = load_image_folder(args.dataset, resolution=state.config.resolution)
    seed = args.seed or 0
    reports = evaluate(state, args.mode, data, n_samples=args.n_samples, seed=seed)
    payload = {"mode": args.mode, "checkpoint": str(args.checkpoint), "iteration": state.iteration,
               "metrics": [r.to_dict() for r in reports]}
    (out / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n")
    summary = out / SUMMARY_CSV
    new = not summary.exists()
    with open(summary, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(["checkpoint", "iteration", "mode", "metric", "value", "n_samples",
                             "n_reference", "extractor", "seed"])
        for r in reports:
            writer.writerow([args.checkpoint, state.iteration, r.mode, r.name, f"{r.value:.9g}",
                             r.n_samples, r.n_reference, r.extractor, r.seed])
    _write_manifest(out, "evaluate", argv, started, ["metrics.json", SUMMARY_CSV], seed=seed,
                    extra={"checkpoint": str(args.checkpoint)})
    print(json.dumps(payload, indent=2))
    return {r.name: r.value for r in reports}


def cmd_make_dataset(args, argv) -> dict:
    started = time.time()
    cfg = _load_config(args)
    out = _output_dir(args, "make-dataset")
    data = make_synthetic_dataset(args.n_scenes, args.views, cfg.prior, args.resolution or cfg.resolution,
                                  cfg.seed, radius=cfg.radius, fov=cfg.fov)
    data.save(out)
    _write_manifest(out, "make-dataset", argv, started, [f"{len(data)} png", "ground_truth.json"],
                    cfg, cfg.seed)
    return {"images": len(data), "out": str(out)}


COMMANDS = {
    "train": cmd_train,
    "render": cmd_render,
    "sample": cmd_sample,
    "interpolate": cmd_interpolate,
    "refine": cmd_refine,
    "evaluate": cmd_evaluate,
    "make-dataset": cmd_make_dataset,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nerfgan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def common(p, config=False):
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--deterministic", action="store_true",
                       help="fixed reduction order and a single thread")
        if config:
            p.add_argument("--config", help="key = value file, or a run.json to replay")
            p.add_argument("--preset", choices=sorted(PRESETS))
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")

    p = sub.add_parser("train", help="train G, D and E")
    common(p, config=True)
    p.add_argument("--ablation", help="ablation tag A..J")
    p.add_argument("--iters", type=int, help="stop after this many iterations")
    p.add_argument("--dataset", help="image folder (default: synthetic scenes)")
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.add_argument("--pretrained", help="checkpoint whose G and D are loaded first")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--log-every", type=int, default=100)

    p = sub.add_parser("render", help="novel views of one input image")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--poses", required=True, help="'p,y,p,y,...' or 'turntable:k'")

    p = sub.add_parser("sample", help="unconditional samples")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=8)

    p = sub.add_parser("interpolate", help="blend the encodings of two images")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input-a", required=True)
    p.add_argument("--input-b", required=True)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--pose-mode", choices=("interpolate", "fixed"), default="interpolate")

    p = sub.add_parser("refine", help="optimize the latent code of one image")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--step-size", type=float, default=5e-3)
    p.add_argument("--init", choices=("encoder", "random"), default="encoder")
    p.add_argument("--z-only", action="store_true", help="keep the pose fixed")

    p = sub.add_parser("evaluate", help="FID / KID / IS (and PSNR / SSIM when conditional)")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=("conditional", "unconditional"), default="conditional")
    p.add_argument("--n-samples", type=int, default=64)

    p = sub.add_parser("make-dataset", help="render a synthetic image folder with hidden ground truth")
    common(p, config=True)
    p.add_argument("--n-scenes", type=int, default=256)
    p.add_argument("--views", type=int, default=1)
    p.add_argument("--resolution", type=int)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.deterministic:
        from .training import set_deterministic
        set_deterministic(True)
    try:
        result = COMMANDS[args.command](args, argv)
    except (ConfigurationError, UsageError) as exc:
        print(f"nerfgan {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, EvaluationError, NonFiniteLossError, OSError, ValueError) as exc:
        print(f"nerfgan {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    if args.command != "evaluate":
        print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
