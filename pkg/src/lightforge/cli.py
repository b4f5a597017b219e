"""``forge`` command line: scenes, trajectories, rendering, campaigns, toy training and evaluation."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import lightfield as lf
from . import scene as sc

log = logging.getLogger("forge")


def _size(text: str) -> tuple[int, int]:
    """``64`` or ``48x64`` (height x width)."""
    parts = text.lower().split("x")
    if len(parts) == 1:
        return int(parts[0]), int(parts[0])
    if len(parts) == 2:
        return int(parts[0]), int(parts[1])
    raise argparse.ArgumentTypeError(f"bad size {text!r}; use N or HxW")


def _preset(text: str):
    if text in lf.SCHEDULE_PRESETS:
        return text
    try:
        floor, peak = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"preset must be one of {sorted(lf.SCHEDULE_PRESETS)} or 'floor,peak'") from None
    return (floor, peak)


def _render_settings(args, base=None):
    from .renderer import RenderSettings

    base = base or RenderSettings()
    changes = {k: getattr(args, k) for k in ("spp", "bounces", "exposure") if getattr(args, k, None) is not None}
    return RenderSettings(**{**base.to_json(), **changes})


def _add_render_flags(p):
    p.add_argument("--spp", type=int, help="samples per pixel")
    p.add_argument("--bounces", type=int, help="diffuse bounces")
    p.add_argument("--exposure", type=float, help="linear exposure before tone mapping")
    p.add_argument("--workers", type=int, help="worker processes (default: $FORGE_WORKERS or 1)")


# -- subcommands -----------------------------------------------------------------

def cmd_compose(args) -> int:
    if args.mode == "single":
        scene = sc.compose_single(args.seed, args.object, image_size=args.size, lambertian=args.lambertian)
    else:
        scene = sc.compose_multi(args.seed, image_size=args.size, lambertian=args.lambertian)
    sc.save_scene(scene, args.out)
    log.info("wrote %s (%d objects)", args.out, len(scene.objects))
    return 0


def cmd_trajectories(args) -> int:
    if args.mode == "single":
        trajs = lf.single_object_trajectories(args.seed, args.count, args.split, args.preset)
    else:
        kinds = lf.multi_object_kinds(args.split) if args.count is None else \
            [("bezier", "spiral", "hybrid")[i % 3] for i in range(args.count)]
        trajs = lf.multi_object_trajectories(args.seed, kinds, args.preset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, traj in enumerate(trajs):
        lf.save_trajectory(traj, out / f"traj_{i:03d}.json")
    log.info("wrote %d trajectories to %s", len(trajs), out)
    return 0


def cmd_render(args) -> int:
    from .renderer import render_clip, save_clip

    scene = sc.load_scene(args.scene)
    if args.size:
        scene = scene.with_image_size(*args.size)
    traj = lf.load_trajectory(args.traj)
    settings = _render_settings(args)
    clip = render_clip(scene, traj, settings, seed=args.seed, workers=args.workers)
    out = Path(args.out)
    names = save_clip(clip, out, settings, pfm=args.pfm)
    lf.save_trajectory(traj, out / "trajectory.json")
    log.info("wrote %d frames to %s", len(names), out)
    return 0


def load_campaign_config(args):
    from .campaign import CampaignConfig, replace_config

    data = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.mode:
        data["mode"] = args.mode  # before from_dict so the default scene count follows the mode
    config = CampaignConfig.from_dict(data)
    render = _render_settings(args, config.render)
    return replace_config(config, mode=args.mode, split=args.split, scenes=args.scenes,
                          trajectories=args.trajectories, preset=args.preset, object=args.object,
                          image_size=args.size, seed=args.seed, output=args.out, render=render,
                          lambertian=True if args.lambertian else None)


def cmd_campaign(args) -> int:
    from .campaign import run_campaign

    config = load_campaign_config(args)
    if args.dry_run:
        print(json.dumps(config.to_json(), indent=1, sort_keys=True))
        return 0
    manifest = run_campaign(config, workers=args.workers)
    log.info("%d clips (%d rendered, %d already complete) -> %s/manifest.json",
             len(manifest.clips), manifest.rendered, manifest.skipped, config.output)
    if manifest.failed:
        for rec in manifest.failed:
            log.error("clip %s failed: %s", rec["clip_id"], rec["error"])
        log.error("%d clip(s) failed", len(manifest.failed))
        return 1
    return 0


def cmd_train_toy(args) -> int:
    from .campaign import load_dataset
    from .diffusion import ToyRelighter

    data = load_dataset(args.data)
    est = ToyRelighter(channels=args.channels, n_steps=args.steps, batch_size=args.batch_size,
                       learning_rate=args.lr, optimizer=args.optimizer, grad_clip=args.grad_clip,
                       frozen_base=args.frozen_base, sample_steps=args.sample_steps, random_state=args.seed)

    def progress(step, loss):
        if step % args.log_every == 0:
            log.info("step %d loss %.4f", step, loss)

    est.fit(data.clips, data.controls, callback=progress)
    est.save(args.out)
    log.info("evaluation loss %.4f -> %.4f (%.1f%% lower); checkpoint %s", est.eval_history_[0][1],
             est.eval_history_[-1][1], 100 * est.loss_reduction_, args.out)
    return 0


def cmd_sample(args) -> int:
    from .campaign import from_model_range, to_model_range
    from .diffusion import ToyRelighter
    from .renderer import render_frame, tonemap, write_png

    est = ToyRelighter.load(args.ckpt)
    _, h, w, _ = est.clip_shape_
    scene = sc.load_scene(args.scene).with_image_size(h, w)
    traj = lf.load_trajectory(args.traj)
    settings = _render_settings(args)
    first = render_frame(scene, traj.states[0], settings, seed=args.seed)
    first = to_model_range(tonemap(first, settings.gamma, settings.exposure) / 255.0)
    control = lf.build_control_volume(traj, h, w).data
    frames = from_model_range(est.predict(first, control, seed=args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        write_png(out / f"frame_{i + 1:03d}.png", np.floor(frame * 255 + 0.5).astype(np.uint8))
    lf.write_control_manifest(traj, out / "control.json")
    lf.save_trajectory(traj, out / "trajectory.json")
    log.info("wrote %d sampled frames to %s", len(frames), out)
    return 0


def cmd_eval(args) -> int:
    from .eval import evaluate_dirs

    crop = None if args.center_crop is None else (args.center_crop, args.center_crop)
    report = evaluate_dirs(args.pred, args.gt, args.mask, crop, window=args.window)
    text = json.dumps(report.to_json(), indent=1, sort_keys=True, allow_nan=False) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    m = report.means
    log.info("rmse %.4f  ssim %.4f  psnr %s", m["rmse"], m["ssim"],
             "inf" if m["psnr"] is None else f"{m['psnr']:.2f} dB")
    return 0


def cmd_mit_build(args) -> int:
    from .eval import mit_trajectories

    text = mit_trajectories().dumps()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_sheet(args) -> int:
    from .campaign import save_contact_sheet

    out = args.out or str(Path(args.clip_dir) / "sheet.png")
    result = save_contact_sheet(args.clip_dir, out, columns=args.columns, scale=args.scale)
    log.info("wrote %dx%d sheet %s", *result.grid, out)
    return 0


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compose", help="compose a random scene")
    p.add_argument("--mode", choices=("single", "multi"), default="single")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--object", default="sphere", help="sphere, box, asset:NAME or a mesh path")
    p.add_argument("--size", type=_size, default=(64, 64))
    p.add_argument("--lambertian", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("trajectories", help="sample light trajectories")
    p.add_argument("--mode", choices=("single", "multi"), default="single")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", type=_preset, default="default")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_trajectories)

    p = sub.add_parser("render", help="render one clip")
    p.add_argument("--scene", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_size)
    p.add_argument("--pfm", action="store_true", help="also write linear .pfm frames")
    _add_render_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("campaign", help="render a dataset campaign")
    p.add_argument("--config", help="JSON config; flags override its fields")
    p.add_argument("--mode", choices=("single", "multi"))
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--scenes", type=int)
    p.add_argument("--trajectories", type=int, help="per scene")
    p.add_argument("--preset", type=_preset)
    p.add_argument("--object")
    p.add_argument("--lambertian", action="store_true")
    p.add_argument("--size", type=_size)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out")
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    _add_render_flags(p)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("train-toy", help="train the toy relighting model on a campaign")
    p.add_argument("--data", required=True, help="campaign directory")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="toy.ckpt")
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("sgd", "adamw"), default="sgd")
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--frozen-base", action="store_true")
    p.add_argument("--sample-steps", type=int, default=12)
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("sample", help="relight a scene along a trajectory with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--out", default="sample")
    p.add_argument("--seed", type=int, default=0)
    _add_render_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="RMSE / PSNR / SSIM between two clip directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask", help="directory holding mask.png")
    p.add_argument("--center-crop", type=int)
    p.add_argument("--window", type=int, default=8, help="SSIM window")
    p.add_argument("--out", help="report path (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mit-build", help="emit the MIT multi-illumination trajectory table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_mit_build)

    p = sub.add_parser("sheet", help="contact sheet of a rendered clip")
    p.add_argument("clip_dir")
    p.add_argument("--out")
    p.add_argument("--columns", type=int, default=7)
    p.add_argument("--scale", type=int, default=4)
    p.set_defaults(func=cmd_sheet)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, sc.MeshLoadError) as exc:
        log.error("forge %s: %s", args.command, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
