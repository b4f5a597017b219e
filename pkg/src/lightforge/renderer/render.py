"""Frame and clip rendering with a point light, sky ambient and diffuse bounces.

Per-pixel radiance is the sum of emission, ``I_e`` times the sky ambient
reflected by the diffuse lobe, direct point-light illumination with a hard
shadow ray (Lambert + Phong) and up to ``bounces`` cosine-sampled diffuse
bounces. The point light's power is treated radiometrically: irradiance at
distance d is ``P / (4 pi d^2) * cos``.

Every tile draws its random numbers from a stream keyed by
(seed, frame index, tile index), which is what makes the output independent of
how frames and tiles are spread over workers.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..lightfield import LightState, Trajectory, polar_to_cartesian, write_control_manifest
from ..scene import CameraSpec, SceneSpec
from .geometry import EPS, GROUND_ID, MISS_ID, CompiledScene, _sphere_t, compile_scene_cached, normalize
from .io import write_pfm, write_png
from .post import GlowSettings, composite_glow, tonemap

WORKERS_ENV = "FORGE_WORKERS"


@dataclass(frozen=True)
class RenderSettings:
    spp: int = 16
    bounces: int = 2
    gamma: float = 2.2
    exposure: float = 0.5
    glow: GlowSettings = GlowSettings()
    tile_size: int = 16
    marker_radius: float = 0.03
    # Off: every frame reuses the same sample pattern, so a static light gives
    # identical frames and noise does not flicker. On: the frame index is mixed
    # into each tile stream.
    animated_seed: bool = False

    def __post_init__(self):
        if self.spp < 1:
            raise ValueError("spp must be >= 1")
        if self.bounces < 0:
            raise ValueError("bounces must be >= 0")
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if isinstance(self.glow, dict):
            object.__setattr__(self, "glow", GlowSettings(**self.glow))

    def to_json(self) -> dict:
        return asdict(self)


# Reference settings of the original dataset renders; far too slow for tests.
REFERENCE_SINGLE_OBJECT = RenderSettings(spp=1024, bounces=8)
REFERENCE_MULTI_OBJECT = RenderSettings(spp=512, bounces=8)


@dataclass
class FramePasses:
    image: np.ndarray
    object_ids: np.ndarray
    light_mask: np.ndarray


@dataclass
class VideoClip:
    frames: np.ndarray = field(repr=False)
    control: Trajectory = field(repr=False)
    seed: int = 0
    object_ids: np.ndarray | None = field(default=None, repr=False)
    light_masks: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.frames) != self.control.n_frames:
            raise ValueError("frame count does not match trajectory length")

    @property
    def foreground(self) -> np.ndarray:
        return self.object_ids > GROUND_ID


def camera_basis(camera: CameraSpec):
    pos = np.asarray(camera.position)
    forward = normalize(np.asarray(camera.look_at) - pos)
    hint = np.array([0.0, 0.0, 1.0]) if abs(forward[2]) < 0.999 else np.array([0.0, 1.0, 0.0])
    right = normalize(np.cross(forward, hint))
    up = np.cross(right, forward)
    return pos, forward, right, up


def camera_rays(camera: CameraSpec, rows: np.ndarray, cols: np.ndarray, jitter: np.ndarray):
    """Pinhole rays through (row + jy, col + jx); image row 0 is the top."""
    pos, forward, right, up = camera_basis(camera)
    tan_half = math.tan(math.radians(camera.fov_deg) / 2)
    aspect = camera.width / camera.height
    x = ((cols + jitter[:, 0]) / camera.width * 2.0 - 1.0) * tan_half * aspect
    y = (1.0 - (rows + jitter[:, 1]) / camera.height * 2.0) * tan_half
    d = normalize(forward + x[:, None] * right + y[:, None] * up)
    return np.broadcast_to(pos, d.shape).copy(), d


def project(camera: CameraSpec, points) -> np.ndarray:
    """Continuous (row, col) image coordinates of world points."""
    pos, forward, right, up = camera_basis(camera)
    rel = np.atleast_2d(points) - pos
    z = rel @ forward
    tan_half = math.tan(math.radians(camera.fov_deg) / 2)
    x = (rel @ right) / z / (tan_half * camera.width / camera.height)
    y = (rel @ up) / z / tan_half
    col = (x + 1.0) / 2.0 * camera.width
    row = (1.0 - y) / 2.0 * camera.height
    return np.stack([row, col], axis=1)


def point_light_irradiance(cs: CompiledScene, points, normals, light_pos, power: float,
                           shadows: bool = True) -> np.ndarray:
    """Irradiance ``P / (4 pi d^2) * max(0, n.l)``, zero where the shadow ray is blocked."""
    to_light = np.asarray(light_pos, dtype=np.float64) - points
    d2 = np.einsum("ij,ij->i", to_light, to_light)
    l = normalize(to_light)
    cos = np.maximum(0.0, np.einsum("ij,ij->i", normals, l))
    e = power / (4.0 * math.pi * d2) * cos
    if shadows:
        lit = cos > 0
        if lit.any():
            vis = np.zeros(len(points), dtype=bool)
            vis[lit] = cs.visible(points[lit], light_pos)
            e = np.where(vis, e, 0.0)
    return e


def _surface_albedo(cs: CompiledScene, points, object_id):
    albedo = cs.albedo[object_id]
    ground = object_id == GROUND_ID
    if ground.any():
        albedo[ground] = cs.ground_albedo(points[ground])
    return albedo


def shade(cs: CompiledScene, points, normals, object_id, wo, light_pos, light: LightState):
    """Emission + ambient + direct radiance leaving each hit point towards ``wo``."""
    albedo = _surface_albedo(cs, points, object_id)
    ks = cs.spec_strength[object_id]
    exponent = cs.spec_exponent[object_id]
    valid = np.any(normals != 0, axis=1)
    out = cs.emissive[object_id].copy()
    diffuse = albedo * (1.0 - ks)[:, None]
    out += light.I_e * diffuse * cs.ambient.radiance(normals[:, 2])
    if light.I_p > 0:
        e = point_light_irradiance(cs, points, normals, light_pos, light.I_p)
        l = normalize(light_pos - points)
        refl = 2.0 * np.einsum("ij,ij->i", normals, l)[:, None] * normals - l
        rv = np.maximum(0.0, np.einsum("ij,ij->i", refl, wo))
        phong = ks * (exponent + 2.0) / (2.0 * math.pi) * rv ** exponent
        out += (diffuse / math.pi + phong[:, None]) * e[:, None]
    out[~valid] = 0.0
    return out, diffuse


def cosine_hemisphere(normals: np.ndarray, u: np.ndarray) -> np.ndarray:
    r = np.sqrt(u[:, 0])
    phi = 2.0 * math.pi * u[:, 1]
    local = np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(np.maximum(0.0, 1.0 - u[:, 0]))], axis=1)
    helper = np.where(np.abs(normals[:, :1]) > 0.9, [[0.0, 1.0, 0.0]], [[1.0, 0.0, 0.0]])
    t = normalize(np.cross(helper, normals))
    b = np.cross(normals, t)
    return normalize(local[:, :1] * t + local[:, 1:2] * b + local[:, 2:] * normals)


def tiles(height: int, width: int, size: int):
    """Row-major tiles as (tile index, row slice, col slice)."""
    index = 0
    for r0 in range(0, height, size):
        for c0 in range(0, width, size):
            yield index, slice(r0, min(r0 + size, height)), slice(c0, min(c0 + size, width))
            index += 1


def _render_tile(cs: CompiledScene, light: LightState, settings: RenderSettings, rng: np.random.Generator,
                 rows: slice, cols: slice):
    camera = cs.spec.camera
    light_pos = polar_to_cartesian(light)
    rr, cc = np.meshgrid(np.arange(rows.start, rows.stop), np.arange(cols.start, cols.stop), indexing="ij")
    n_pix = rr.size
    spp = settings.spp
    pr = np.repeat(rr.ravel(), spp).astype(np.float64)
    pc = np.repeat(cc.ravel(), spp).astype(np.float64)
    n = len(pr)
    jitter = np.full((n, 2), 0.5) if spp == 1 else rng.random((n, 2))
    o, d = camera_rays(camera, pr, pc, jitter)

    radiance = np.zeros((n, 3))
    beta = np.ones((n, 3))
    alive = np.arange(n)
    marker = np.zeros(n)
    for depth in range(settings.bounces + 1):
        hit = cs.intersect(o[alive], d[alive])
        if depth == 0:
            t_marker = _sphere_t(o, d, light_pos, settings.marker_radius)
            marker = (t_marker < hit.t).astype(np.float64)
            missed = ~hit.mask
            radiance[missed] = light.I_e * cs.ambient.radiance(d[missed, 2])
        h = hit.mask
        idx = alive[h]
        contrib, diffuse = shade(cs, hit.point[h], hit.normal[h], hit.object_id[h], -d[idx], light_pos, light)
        radiance[idx] += beta[idx] * contrib
        if depth == settings.bounces:
            break
        # draw for every ray so the stream position never depends on the scene
        u = rng.random((n, 2))
        normals = hit.normal[h]
        keep = np.any(normals != 0, axis=1)
        idx, normals, diffuse = idx[keep], normals[keep], diffuse[keep]
        beta[idx] *= diffuse
        d[idx] = cosine_hemisphere(normals, u[idx])
        o[idx] = hit.point[h][keep] + EPS * normals
        alive = idx
        if alive.size == 0:
            break

    image = radiance.reshape(n_pix, spp, 3).mean(axis=1).reshape(rr.shape + (3,))
    mask = marker.reshape(n_pix, spp).mean(axis=1).reshape(rr.shape)
    co, cd = camera_rays(camera, rr.ravel().astype(np.float64), cc.ravel().astype(np.float64),
                         np.full((n_pix, 2), 0.5))
    ids = cs.intersect(co, cd).object_id.reshape(rr.shape)
    return image, ids, mask


def _compiled(scene) -> CompiledScene:
    if isinstance(scene, CompiledScene):
        return scene
    return compile_scene_cached(scene.dumps())


def render_passes(scene, light: LightState, settings: RenderSettings = RenderSettings(), seed: int = 0,
                  frame_index: int = 0) -> FramePasses:
    cs = _compiled(scene)
    cam = cs.spec.camera
    image = np.zeros((cam.height, cam.width, 3))
    ids = np.full((cam.height, cam.width), MISS_ID)
    mask = np.zeros((cam.height, cam.width))
    for tile, rows, cols in tiles(cam.height, cam.width, settings.tile_size):
        frame_key = int(frame_index) if settings.animated_seed else 0
        rng = np.random.default_rng([int(seed), frame_key, tile])
        image[rows, cols], ids[rows, cols], mask[rows, cols] = _render_tile(cs, light, settings, rng, rows, cols)
    return FramePasses(image, ids, mask)


def render_frame(scene, light: LightState, settings: RenderSettings = RenderSettings(), seed: int = 0,
                 frame_index: int = 0) -> np.ndarray:
    """Linear RGB image (H, W, 3) of the scene under one light state."""
    return render_passes(scene, light, settings, seed, frame_index).image


def _frame_job(scene_json: str, light: LightState, settings: RenderSettings, seed: int, frame_index: int):
    passes = render_passes(compile_scene_cached(scene_json), light, settings, seed, frame_index)
    return passes


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(workers))


def render_clip(scene: SceneSpec, traj: Trajectory, settings: RenderSettings = RenderSettings(), seed: int = 0,
                workers: int | None = None) -> VideoClip:
    """Render every trajectory frame of a static scene; glow is composited in multi-object mode."""
    workers = resolve_workers(workers)
    scene_json = scene.dumps()
    jobs = [(scene_json, light, settings, seed, i) for i, light in enumerate(traj.states)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_frame_job, *job) for job in jobs]
            results = []
            for i, fut in enumerate(futures):
                try:
                    results.append(fut.result())
                except Exception as exc:
                    raise RuntimeError(f"frame {i + 1} failed: {exc}") from exc
    else:
        results = []
        for i, job in enumerate(jobs):
            try:
                results.append(_frame_job(*job))
            except Exception as exc:
                raise RuntimeError(f"frame {i + 1} failed: {exc}") from exc
    frames = []
    for passes in results:
        image = passes.image
        if scene.mode == "multi":
            image = composite_glow(image, passes.light_mask, settings.glow)
        frames.append(image)
    return VideoClip(
        frames=np.stack(frames),
        control=traj,
        seed=seed,
        object_ids=results[0].object_ids,
        light_masks=np.stack([p.light_mask for p in results]),
    )


def frame_name(index: int) -> str:
    """File name of the 0-based ``index``-th frame; files are numbered from 1."""
    return f"frame_{index + 1:03d}.png"


def save_clip(clip: VideoClip, out_dir, settings: RenderSettings = RenderSettings(), *, pfm: bool = False,
              extra: dict | None = None) -> list[str]:
    """Write frames, foreground mask, control sidecar and a per-clip manifest. Returns frame names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, frame in enumerate(clip.frames):
        name = frame_name(i)
        write_png(out / name, tonemap(frame, settings.gamma, settings.exposure))
        if pfm:
            write_pfm(out / name.replace(".png", ".pfm"), frame)
        names.append(name)
    write_png(out / "mask.png", clip.foreground.astype(np.uint8) * 255)
    write_control_manifest(clip.control, out / "control.json")
    manifest = {
        "seed": int(clip.seed),
        "settings": settings.to_json(),
        "frames": names,
        "control": "control.json",
        "mask": "mask.png",
        **(extra or {}),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return names
