"""Dataset campaigns: compose scenes, sample trajectories, render clips, write a manifest.

Every seed below the master seed comes from :func:`derive_seed`, so a config
plus its master seed pins the whole campaign. Clips are written to
``clips/scene_XXXX/traj_YYY`` and skipped on rerun when their content hash
matches.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from . import __version__
from . import lightfield as lf
from . import scene as sc
from .renderer import RenderSettings, read_image, render_clip, save_clip
from .renderer.render import resolve_workers
from .renderer.io import write_png

MODES = ("single", "multi")
SPLITS = ("train", "test")
# Campaign sizes of the reference dataset; desk-scale runs override these.
REFERENCE_SCENES = {"single": 1200, "multi": 1000}
REFERENCE_TRAJECTORIES_PER_SCENE = 40
OBJECT_CHOICES = ("sphere", "box", *sc.bundled_assets())


def derive_seed(master: int, tag: str, index: int) -> int:
    """64-bit child seed from (master, role tag, index) via BLAKE2b."""
    key = f"{int(master)}:{tag}:{int(index)}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class CampaignConfig:
    mode: str = "single"
    split: str = "train"
    scenes: int = REFERENCE_SCENES["single"]
    trajectories: int | None = None  # per scene; None -> 40 (single) or the split's curve mix (multi)
    preset: str | tuple[float, float] = "default"
    object: str = "random"  # single mode: an OBJECT_CHOICES entry, a mesh path, or "random"
    lambertian: bool = False
    image_size: tuple[int, int] = (64, 64)
    render: RenderSettings = field(default_factory=RenderSettings)
    output: str = "campaign"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")
        if self.scenes < 1:
            raise ValueError("scenes must be >= 1")
        if self.trajectories is not None and self.trajectories < 1:
            raise ValueError("trajectories must be >= 1")
        if isinstance(self.render, dict):
            object.__setattr__(self, "render", RenderSettings(**self.render))
        if not isinstance(self.preset, str):
            object.__setattr__(self, "preset", tuple(float(v) for v in self.preset))
        lf._validate_preset(self.preset)
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignConfig":
        data = dict(data)
        if "scenes" not in data:
            data["scenes"] = REFERENCE_SCENES[data.get("mode", "single")]
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["image_size"] = list(self.image_size)
        doc["preset"] = self.preset if isinstance(self.preset, str) else list(self.preset)
        return doc

    def portable_json(self) -> dict:
        """``to_json`` without the output path, which does not shape any file contents."""
        doc = self.to_json()
        doc.pop("output")
        return doc

    def content_hash(self) -> str:
        """Stable under key reordering: hashed from sorted-key JSON."""
        return hashlib.sha256(json.dumps(self.portable_json(), sort_keys=True).encode()).hexdigest()

    def trajectory_kinds(self) -> list[str]:
        if self.mode == "single":
            return ["linear-grid"] * (self.trajectories or REFERENCE_TRAJECTORIES_PER_SCENE)
        kinds = lf.multi_object_kinds(self.split)
        if self.trajectories is None:
            return kinds
        cycle = ("bezier", "spiral", "hybrid")
        return [cycle[i % 3] for i in range(self.trajectories)]


def compose_scene(config: CampaignConfig, index: int) -> sc.SceneSpec:
    seed = derive_seed(config.seed, "scene", index)
    if config.mode == "multi":
        return sc.compose_multi(seed, image_size=config.image_size, lambertian=config.lambertian)
    choice = config.object
    if choice == "random":
        choice = OBJECT_CHOICES[seed % len(OBJECT_CHOICES)]
    return sc.compose_single(seed, choice, image_size=config.image_size, lambertian=config.lambertian)


def scene_trajectories(config: CampaignConfig, index: int) -> list[lf.Trajectory]:
    seed = derive_seed(config.seed, "trajectory", index)
    kinds = config.trajectory_kinds()
    if config.mode == "single":
        return lf.single_object_trajectories(seed, len(kinds), config.split, config.preset)
    return lf.multi_object_trajectories(seed, kinds, config.preset)


@dataclass
class ClipJob:
    clip_id: str
    scene_index: int
    traj_index: int
    scene_json: str
    trajectory_json: str
    render_seed: int
    out_dir: str

    def content_hash(self, settings: RenderSettings) -> str:
        doc = {"scene": self.scene_json, "trajectory": self.trajectory_json, "render_seed": self.render_seed,
               "settings": settings.to_json(), "version": __version__}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _clip_complete(out_dir: Path, clip_hash: str) -> dict | None:
    meta_path = out_dir / "manifest.json"
    if not meta_path.exists():
        return None
    meta = json.loads(meta_path.read_text())
    if meta.get("clip_hash") != clip_hash:
        return None
    files = meta["frames"] + [meta["control"], meta["mask"], "trajectory.json"]
    return meta if all((out_dir / f).exists() for f in files) else None


def _render_job(job: ClipJob, settings: RenderSettings) -> dict:
    out = Path(job.out_dir)
    clip_hash = job.content_hash(settings)
    meta = _clip_complete(out, clip_hash)
    if meta is not None:
        return {"skipped": True, "frames": meta["frames"]}
    scene = sc.SceneSpec.loads(job.scene_json)
    traj = lf.Trajectory.from_json(json.loads(job.trajectory_json))
    clip = render_clip(scene, traj, settings, seed=job.render_seed, workers=1)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectory.json").write_text(job.trajectory_json)
    names = save_clip(clip, out, settings, extra={"clip_hash": clip_hash, "clip_id": job.clip_id})
    return {"skipped": False, "frames": names}


@dataclass
class Manifest:
    version: str
    config_hash: str
    config: dict
    clips: list[dict]
    failed: list[dict] = field(default_factory=list)
    rendered: int = 0
    skipped: int = 0

    def to_json(self) -> dict:
        # run statistics are left out so reruns write identical bytes
        return {"tool": "lightforge", "version": self.version, "config_hash": self.config_hash,
                "config": self.config, "clips": self.clips, "failed": self.failed}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def load(cls, path) -> "Manifest":
        doc = json.loads(Path(path).read_text())
        return cls(doc["version"], doc["config_hash"], doc["config"], doc["clips"], doc.get("failed", []))


def plan_campaign(config: CampaignConfig) -> list[ClipJob]:
    root = Path(config.output)
    jobs = []
    per_scene = len(config.trajectory_kinds())
    for i in range(config.scenes):
        scene_json = compose_scene(config, i).dumps()
        for j, traj in enumerate(scene_trajectories(config, i)):
            clip_id = f"scene_{i:04d}/traj_{j:03d}"
            jobs.append(ClipJob(clip_id, i, j, scene_json, json.dumps(traj.to_json(), sort_keys=True, indent=1),
                                derive_seed(config.seed, "render", i * per_scene + j),
                                str(root / "clips" / clip_id)))
    return jobs


def run_campaign(config: CampaignConfig, workers: int | None = None) -> Manifest:
    """Render every clip of the campaign (skipping completed ones) and write ``manifest.json``.

    Failed clips are listed in ``Manifest.failed`` rather than raised.
    """
    root = Path(config.output)
    root.mkdir(parents=True, exist_ok=True)
    (root / "scenes").mkdir(exist_ok=True)
    jobs = plan_campaign(config)
    for i in range(config.scenes):
        path = root / "scenes" / f"scene_{i:04d}.json"
        text = next(j.scene_json for j in jobs if j.scene_index == i) + "\n"
        if not path.exists() or path.read_text() != text:
            path.write_text(text)

    workers = resolve_workers(workers)
    results: list[dict | Exception] = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_render_job, job, config.render) for job in jobs]
            for fut in futures:
                try:
                    results.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - reported per clip
                    results.append(exc)
    else:
        for job in jobs:
            try:
                results.append(_render_job(job, config.render))
            except Exception as exc:  # noqa: BLE001
                results.append(exc)

    clips, failed, rendered, skipped = [], [], 0, 0
    for job, res in zip(jobs, results):
        if isinstance(res, Exception):
            failed.append({"clip_id": job.clip_id, "error": f"{type(res).__name__}: {res}"})
            continue
        rendered += not res["skipped"]
        skipped += res["skipped"]
        clip_dir = Path(job.out_dir).relative_to(root)
        clips.append({
            "clip_id": job.clip_id,
            "scene": f"scenes/scene_{job.scene_index:04d}.json",
            "trajectory": str(clip_dir / "trajectory.json"),
            "frames": [str(clip_dir / f) for f in res["frames"]],
            "mask": str(clip_dir / "mask.png"),
            "control": str(clip_dir / "control.json"),
            "seeds": {
                "scene": derive_seed(config.seed, "scene", job.scene_index),
                "trajectory": derive_seed(config.seed, "trajectory", job.scene_index),
                "render": job.render_seed,
            },
            "clip_hash": job.content_hash(config.render),
        })
    manifest = Manifest(__version__, config.content_hash(), config.portable_json(), clips, failed,
                        rendered, skipped)
    missing = [p for c in clips for p in [c["scene"], c["trajectory"], c["mask"], c["control"], *c["frames"]]
               if not (root / p).exists()]
    if missing:
        raise RuntimeError(f"manifest references missing files: {missing[:5]}")
    (root / "manifest.json").write_text(manifest.dumps())
    return manifest


# -- loading rendered data ---------------------------------------------------------

@dataclass
class ClipDataset:
    clips: np.ndarray  # (M, N, H, W, 3) in [-1, 1]
    controls: np.ndarray  # (M, N, H, W, 5)
    trajectories: list[lf.Trajectory]
    clip_ids: list[str]

    @property
    def first_frames(self) -> np.ndarray:
        return self.clips[:, 0]


def to_model_range(image01: np.ndarray) -> np.ndarray:
    return image01 * 2.0 - 1.0


def from_model_range(x: np.ndarray) -> np.ndarray:
    return np.clip((x + 1.0) / 2.0, 0.0, 1.0)


def load_clip_dir(clip_dir) -> tuple[np.ndarray, lf.Trajectory]:
    """Frames in [0, 1] and the trajectory of one rendered clip directory."""
    clip_dir = Path(clip_dir)
    traj = lf.load_trajectory(clip_dir / "trajectory.json")
    frames = np.stack([read_image(clip_dir / f"frame_{i + 1:03d}.png") for i in range(traj.n_frames)])
    return frames, traj


def load_dataset(root, clip_ids: Sequence[str] | None = None) -> ClipDataset:
    """Clips of a campaign directory, ready for ``ToyRelighter.fit``."""
    root = Path(root)
    manifest = Manifest.load(root / "manifest.json")
    records = manifest.clips
    if clip_ids is not None:
        wanted = set(clip_ids)
        records = [c for c in records if c["clip_id"] in wanted]
    if not records:
        raise ValueError(f"no clips in {root}")
    clips, controls, trajs = [], [], []
    for rec in records:
        frames = np.stack([read_image(root / f) for f in rec["frames"]])
        traj = lf.load_trajectory(root / rec["trajectory"])
        clips.append(to_model_range(frames))
        controls.append(lf.build_control_volume(traj, frames.shape[1], frames.shape[2]).data)
        trajs.append(traj)
    return ClipDataset(np.stack(clips), np.stack(controls), trajs, [c["clip_id"] for c in records])


# -- contact sheets ----------------------------------------------------------------

@dataclass
class Arrow:
    frame: int  # 1-based
    start: tuple[float, float]  # (x, y) pixels
    end: tuple[float, float]
    theta_deg: float

    @property
    def angle_deg(self) -> float:
        """Drawn direction, measured counter-clockwise from image-right."""
        dx, dy = self.end[0] - self.start[0], self.start[1] - self.end[1]
        return math.degrees(math.atan2(dy, dx)) % 360.0


@dataclass
class ContactSheet:
    image: np.ndarray  # uint8 (rows * h, cols * w, 3)
    arrows: list[Arrow]
    grid: tuple[int, int]


def contact_sheet(clip_dir, columns: int = 7, scale: int = 4) -> ContactSheet:
    """Frame montage with an arrow per tile pointing along the light azimuth."""
    clip_dir = Path(clip_dir)
    control_path = clip_dir / "control.json"
    if not control_path.exists():
        raise FileNotFoundError(f"{clip_dir}: no control.json (not a clip directory)")
    records = json.loads(control_path.read_text())
    if not records:
        raise ValueError(f"{control_path}: empty control sidecar")
    tiles = []
    for i in range(len(records)):
        path = clip_dir / f"frame_{i + 1:03d}.png"
        if not path.exists():
            raise FileNotFoundError(f"missing frame {path}")
        with Image.open(path) as im:
            im = im.convert("RGB")
            tiles.append(im.resize((im.width * scale, im.height * scale), Image.NEAREST))
    tw, th = tiles[0].size
    rows = math.ceil(len(tiles) / columns)
    cols = min(columns, len(tiles))
    sheet = Image.new("RGB", (cols * tw, rows * th))
    draw = ImageDraw.Draw(sheet)
    arrows = []
    length = 0.35 * min(tw, th)
    for i, (tile, rec) in enumerate(zip(tiles, records)):
        x0, y0 = (i % columns) * tw, (i // columns) * th
        sheet.paste(tile, (x0, y0))
        theta = float(rec["theta_deg"])
        cx, cy = x0 + tw / 2, y0 + th / 2
        ex = cx + length * math.cos(math.radians(theta))
        ey = cy - length * math.sin(math.radians(theta))
        draw.line([(cx, cy), (ex, ey)], fill=(255, 220, 0), width=max(1, scale // 2))
        for side in (150.0, -150.0):
            a = math.radians(theta + side)
            draw.line([(ex, ey), (ex + 0.3 * length * math.cos(a), ey - 0.3 * length * math.sin(a))],
                      fill=(255, 220, 0), width=max(1, scale // 2))
        arrows.append(Arrow(i + 1, (cx, cy), (ex, ey), theta))
    return ContactSheet(np.asarray(sheet), arrows, (rows, cols))


def save_contact_sheet(clip_dir, out_path, **kwargs) -> ContactSheet:
    result = contact_sheet(clip_dir, **kwargs)
    write_png(out_path, result.image)
    return result


def replace_config(config: CampaignConfig, **changes) -> CampaignConfig:
    """``dataclasses.replace`` that drops ``None`` overrides."""
    return replace(config, **{k: v for k, v in changes.items() if v is not None})
