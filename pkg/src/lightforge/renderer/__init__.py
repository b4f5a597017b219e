"""Desk-scale physically based renderer for point-light relighting clips."""
from .geometry import BVH, CompiledScene, Hit, compile_scene_cached
from .io import read_image, read_pfm, read_png, write_pfm, write_png
from .post import GlowSettings, composite_glow, tonemap
from .render import (
    REFERENCE_MULTI_OBJECT,
    REFERENCE_SINGLE_OBJECT,
    FramePasses,
    RenderSettings,
    VideoClip,
    point_light_irradiance,
    project,
    render_clip,
    render_frame,
    render_passes,
    save_clip,
)

__all__ = [
    "BVH", "CompiledScene", "Hit", "compile_scene_cached", "read_image", "read_pfm", "read_png",
    "write_pfm", "write_png", "GlowSettings", "composite_glow", "tonemap", "REFERENCE_MULTI_OBJECT",
    "REFERENCE_SINGLE_OBJECT", "FramePasses", "RenderSettings", "VideoClip", "point_light_irradiance",
    "project", "render_clip", "render_frame", "render_passes", "save_clip",
]
