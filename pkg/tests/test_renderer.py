import json
import math

import numpy as np
import pytest

from lightforge import lightfield as lf
from lightforge import scene as sc
from lightforge.lightfield import LightState
from lightforge.renderer import (
    BVH,
    CompiledScene,
    GlowSettings,
    RenderSettings,
    composite_glow,
    point_light_irradiance,
    project,
    read_pfm,
    render_clip,
    render_frame,
    render_passes,
    save_clip,
    tonemap,
    write_pfm,
)
from lightforge.renderer.geometry import moller_trumbore
from lightforge.renderer.render import camera_rays

UP = np.array([[0.0, 0.0, 1.0]])


def empty_scene(size=(16, 16), **ground):
    return sc.SceneSpec(sc.GroundSpec(**ground), (), sc.CameraSpec(height=size[0], width=size[1]))


def light_above(height, power, ie=0.0):
    """A light straight above the origin at the given height."""
    return LightState(0.0, 90.0, height, power, ie)


class TestDirectLighting:
    def test_closed_form_irradiance(self):
        cs = CompiledScene(empty_scene())
        e = point_light_irradiance(cs, np.zeros((1, 3)), UP, (0, 0, 1), 120.0)
        assert e[0] == pytest.approx(120.0 / (4 * math.pi), rel=1e-12)
        assert e[0] == pytest.approx(9.549, abs=5e-4)

    def test_inverse_square(self):
        cs = CompiledScene(empty_scene())
        p = np.zeros((1, 3))
        for d in (0.5, 1.0, 1.7):
            near = point_light_irradiance(cs, p, UP, (0, 0, d), 120.0)[0]
            far = point_light_irradiance(cs, p, UP, (0, 0, 2 * d), 120.0)[0]
            assert abs(near / far - 4.0) < 1e-6

    def test_occluder_zeroes_direct(self):
        blocker = sc.ObjectInstance(sc.Geometry("box", size=(0.4, 0.4, 0.1)), sc.MaterialSpec(), (0, 0, 0.5))
        scene = sc.SceneSpec(sc.GroundSpec(), (blocker,), sc.CameraSpec(height=8, width=8))
        cs = CompiledScene(scene)
        e = point_light_irradiance(cs, np.zeros((1, 3)), UP, (0, 0, 1.0), 120.0)
        assert e[0] == 0.0
        assert point_light_irradiance(cs, np.zeros((1, 3)), UP, (0, 0, 1.0), 120.0, shadows=False)[0] > 0

    def test_doubling_power_doubles_image(self):
        scene = sc.compose_single(2, "asset:torus", image_size=(12, 12))
        settings = RenderSettings(spp=4, bounces=1)
        a = render_frame(scene, LightState(30, 60, 1, 60, 0.0), settings, seed=3)
        b = render_frame(scene, LightState(30, 60, 1, 120, 0.0), settings, seed=3)
        np.testing.assert_allclose(b, 2 * a, rtol=1e-12, atol=0)

    def test_lambert_pixel_value(self):
        # ground directly below the light, uniform white albedo, no ambient
        scene = empty_scene(size=(1, 1), colors=((1.0, 1.0, 1.0), (1.0, 1.0, 1.0)))
        scene = sc.SceneSpec(scene.ground, (), sc.CameraSpec(position=(0, 0, 2), look_at=(0, 0, 0), height=1, width=1))
        img = render_frame(scene, LightState(0, 90, 1.0, 120, 0.0), RenderSettings(spp=1, bounces=0))
        np.testing.assert_allclose(img[0, 0], 120 / (4 * math.pi) / math.pi, rtol=1e-12)


class TestShadowOracle:
    @staticmethod
    def brute_force_blocked(tris, p, light):
        # plane hit + same-side edge tests over every triangle; deliberately
        # not Moller-Trumbore and no acceleration structure
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        n = np.cross(b - a, c - a)
        seg = light - p
        dist = np.linalg.norm(seg, axis=1)
        blocked = np.zeros(len(p), dtype=bool)
        for i in range(len(tris)):
            denom = seg @ n[i]
            with np.errstate(divide="ignore", invalid="ignore"):
                s = ((a[i] - p) @ n[i]) / denom
            ok = (denom != 0) & (s > 1e-4 / dist) & (s < 1 - 1e-4 / dist)
            x = p + s[:, None] * seg
            for u, v in ((a[i], b[i]), (b[i], c[i]), (c[i], a[i])):
                ok &= np.cross(v - u, x - u) @ n[i] >= 0
            blocked |= ok
        return blocked

    def test_visibility_matches_brute_force(self):
        objs = (
            sc.ObjectInstance(sc.make_geometry("asset:torus", 0.8), sc.MaterialSpec(), (0, 0, 0.5), 20.0),
            sc.ObjectInstance(sc.make_geometry("asset:icosphere", 0.3), sc.MaterialSpec(), (0.1, 0.1, 1.0), 0.0),
        )
        scene = sc.SceneSpec(sc.GroundSpec(), objs, sc.CameraSpec(height=8, width=8))
        cs = CompiledScene(scene)
        assert cs.bvh is not None and cs.n_triangles > 64
        tris = np.stack([cs.v0, cs.v0 + cs.e1, cs.v0 + cs.e2], axis=1)

        rng = np.random.default_rng(0)
        n = 10_000
        points = rng.uniform([-0.8, -0.8, 0.01], [0.8, 0.8, 1.5], size=(n, 3))
        lights = rng.uniform([-1.0, -1.0, 0.2], [1.0, 1.0, 2.0], size=(n, 3))
        to_light = lights - points
        dist = np.linalg.norm(to_light, axis=1)
        got = ~cs.occluded(points, to_light / dist[:, None], dist - 1e-4)
        want = ~self.brute_force_blocked(tris, points, lights)
        assert (~want).sum() > n // 10  # the sample actually exercises occlusion
        assert int(np.sum(got != want)) == 0
        # the per-light helper agrees too
        assert np.array_equal(cs.visible(points[:50], lights[0]),
                              ~self.brute_force_blocked(tris, points[:50], np.tile(lights[0], (50, 1))))


class TestBVH:
    def test_bvh_matches_brute_force_closest_hit(self):
        scene = sc.compose_single(0, "asset:torus", image_size=(8, 8))
        cs = CompiledScene(scene)
        assert cs.bvh is not None
        rng = np.random.default_rng(1)
        o = rng.uniform(-1, 1, (3000, 3)) + [0, 0, 1.2]
        target = rng.uniform(-0.3, 0.3, (3000, 3)) + [0, 0, 0.1]
        d = (target - o) / np.linalg.norm(target - o, axis=1, keepdims=True)
        tri, t, _, _ = cs._closest_triangle(o, d, np.full(3000, np.inf))
        tri_b, t_b, _, _ = cs._brute_closest(o, d, np.full(3000, np.inf))
        assert np.array_equal(tri >= 0, tri_b >= 0)
        np.testing.assert_allclose(t[tri >= 0], t_b[tri_b >= 0], rtol=1e-12)

    def test_leaves_cover_all_triangles(self):
        rng = np.random.default_rng(2)
        v = rng.uniform(size=(3, 200, 3))
        bvh = BVH(v[0], v[1], v[2])
        assert sorted(bvh.order.tolist()) == list(range(200))
        leaves = bvh.left < 0
        assert bvh.count[leaves].sum() == 200

    def test_moller_trumbore_simple(self):
        t, u, v = moller_trumbore(np.array([[0.2, 0.2, 1.0]]), np.array([[0, 0, -1.0]]),
                                  np.zeros((1, 3)), np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
        assert t[0] == pytest.approx(1.0) and u[0] == pytest.approx(0.2) and v[0] == pytest.approx(0.2)


def red_wall_scene(size=32):
    white = sc.GroundSpec(colors=((0.8, 0.8, 0.8), (0.8, 0.8, 0.8)))
    wall = sc.ObjectInstance(sc.Geometry("box", size=(0.1, 1.2, 0.6)),
                             sc.MaterialSpec(albedo=(0.9, 0.05, 0.05)), (0.3, 0.0, 0.3))
    camera = sc.CameraSpec(position=(0.0, -0.3, 2.0), look_at=(0.0, 0.0, 0.0), fov_deg=45, height=size, width=size)
    return sc.SceneSpec(white, (wall,), camera, sc.AmbientSpec(kind="constant"))


def floor_strip_means(scene, image, ids, x_range):
    cam = scene.camera
    rows, cols = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    o, d = camera_rays(cam, rows.ravel().astype(float), cols.ravel().astype(float), np.full((rows.size, 2), 0.5))
    x = (o - d * (o[:, 2:] / d[:, 2:]))[:, 0].reshape(rows.shape)
    strip = (ids == 0) & (x > x_range[0]) & (x < x_range[1])
    return image[strip].mean(axis=0), int(strip.sum())


class TestInterreflection:
    def test_red_wall_bleeds_onto_floor(self):
        scene = red_wall_scene()
        settings = RenderSettings(spp=64, bounces=1)
        light = LightState(180.0, 60.0, 1.0, 120.0, 0.2)
        passes = render_passes(scene, light, settings, seed=0)
        mean, count = floor_strip_means(scene, passes.image, passes.object_ids, (0.05, 0.25))
        assert count >= 10
        assert mean[0] > 1.05 * mean[2]

    def test_no_bleed_without_bounces(self):
        scene = red_wall_scene(16)
        passes = render_passes(scene, LightState(180.0, 60.0, 1.0, 120.0, 0.2), RenderSettings(spp=4, bounces=0))
        mean, _ = floor_strip_means(scene, passes.image, passes.object_ids, (0.05, 0.25))
        assert mean[0] == pytest.approx(mean[2], rel=1e-9)


class TestClip:
    def test_constant_trajectory_identical_frames(self):
        scene = sc.compose_single(0, "sphere", image_size=(8, 8))
        state = LightState(10, 50, 1, 120, 0.2)
        traj = lf.Trajectory((state,) * 6, kind="linear-grid")
        clip = render_clip(scene, traj, RenderSettings(spp=2, bounces=1), seed=4)
        assert all(np.array_equal(clip.frames[0], f) for f in clip.frames)
        animated = render_clip(scene, traj, RenderSettings(spp=2, bounces=1, animated_seed=True), seed=4)
        assert not np.array_equal(animated.frames[0], animated.frames[1])

    def test_default_clip_length_and_dimming(self):
        scene = empty_scene(size=(8, 8))
        traj = lf.single_object_trajectories(0, 1)[0]
        clip = render_clip(scene, traj, RenderSettings(spp=1, bounces=0))
        assert clip.frames.shape == (14, 8, 8, 3)
        ambient_only = [
            render_frame(scene, LightState(s.theta_deg, s.phi_deg, s.r, 0.0, s.I_e), RenderSettings(spp=1, bounces=0))
            for s in traj.states[:4]
        ]
        lum = [img.mean() for img in ambient_only]
        assert all(a >= b for a, b in zip(lum, lum[1:]))
        assert lum[3] == pytest.approx(0.2 * lum[0])

    def test_worker_count_does_not_change_output(self):
        scene = sc.compose_single(5, "asset:vase", image_size=(20, 20))
        traj = lf.single_object_trajectories(1, 1)[0]
        settings = RenderSettings(spp=2, bounces=1, tile_size=8)
        a = render_clip(scene, traj, settings, seed=9, workers=1)
        b = render_clip(scene, traj, settings, seed=9, workers=2)
        assert a.frames.tobytes() == b.frames.tobytes()

    def test_glow_only_in_multi_mode(self):
        traj = lf.multi_object_trajectories(0, ["spiral"])[0]
        settings = RenderSettings(spp=1, bounces=0, marker_radius=0.2)
        multi = sc.compose_multi(1, image_size=(16, 16))
        single = sc.SceneSpec(multi.ground, multi.objects, multi.camera, multi.ambient, multi.seed, mode="single")
        clip_m = render_clip(multi, traj, settings)
        clip_s = render_clip(single, traj, settings)
        assert clip_m.light_masks.max() > 0
        assert np.array_equal(clip_m.light_masks, clip_s.light_masks)
        assert not np.array_equal(clip_m.frames, clip_s.frames)
        assert np.all(clip_m.frames >= clip_s.frames)

    def test_no_nan(self, tmp_path):
        # a mesh with a zero-area triangle and a duplicated vertex
        degenerate = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nv 0 0 1\nf 1 2 3\nf 1 2 4\nf 4 5 4\nf 2 3 4\n"
        path = tmp_path / "deg.obj"
        path.write_text(degenerate)
        scene = sc.compose_single(0, str(path), image_size=(12, 12))
        for state in lf.single_object_trajectories(0, 1)[0].states[::3]:
            img = render_frame(scene, state, RenderSettings(spp=2, bounces=2))
            assert np.all(np.isfinite(img)) and np.all(img >= 0)
        for seed in range(3):
            multi = sc.compose_multi(seed, image_size=(10, 10))
            traj = lf.multi_object_trajectories(seed, ["hybrid"])[0]
            clip = render_clip(multi, traj, RenderSettings(spp=1, bounces=1))
            assert np.all(np.isfinite(clip.frames))

    def test_save_clip(self, tmp_path):
        scene = sc.compose_single(0, "sphere", image_size=(8, 8))
        traj = lf.single_object_trajectories(0, 1)[0]
        clip = render_clip(scene, traj, RenderSettings(spp=1, bounces=0))
        names = save_clip(clip, tmp_path, pfm=True)
        assert names[0] == "frame_001.png" and names[-1] == "frame_014.png"
        assert (tmp_path / "frame_001.pfm").exists()
        np.testing.assert_allclose(read_pfm(tmp_path / "frame_003.pfm"), clip.frames[2], rtol=1e-6)
        control = json.loads((tmp_path / "control.json").read_text())
        assert len(control) == 14
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["frames"] == names


class TestProjection:
    def test_project_inverts_camera_rays(self):
        cam = sc.CameraSpec(position=(0.1, -0.5, 2.1), height=20, width=30)
        rows = np.array([0.0, 5.0, 19.0])
        cols = np.array([0.0, 12.0, 29.0])
        o, d = camera_rays(cam, rows, cols, np.full((3, 2), 0.5))
        pts = o + 1.7 * d
        np.testing.assert_allclose(project(cam, pts), np.stack([rows + 0.5, cols + 0.5], 1), atol=1e-9)

    def test_image_right_is_world_x(self):
        cam = sc.CameraSpec(height=16, width=16)
        (r0, c0), (r1, c1) = project(cam, [[0, 0, 0], [0.3, 0, 0]])
        assert c1 > c0 and abs(r1 - r0) < 1e-9
        (r0, c0), (r2, c2) = project(cam, [[0, 0, 0], [0, 0.3, 0]])
        assert r2 < r0


class TestGlow:
    def test_empty_mask_identity(self):
        img = np.random.default_rng(0).random((9, 9, 3))
        out = composite_glow(img, np.zeros((9, 9)), GlowSettings())
        assert np.array_equal(out, img)

    def test_single_pixel_gaussian(self):
        glow = GlowSettings(threshold=0.5, radius_px=1.5, gain=1.0, color=(1.0, 1.0, 1.0))
        mask = np.zeros((21, 21))
        mask[10, 10] = 1.0
        out = composite_glow(np.zeros((21, 21, 3)), mask, glow)[..., 0]
        # separable truncated Gaussian, built independently
        radius = int(3.0 * 1.5 + 0.5)
        x = np.arange(-radius, radius + 1)
        k = np.exp(-x**2 / (2 * 1.5**2))
        k /= k.sum()
        expected = np.zeros((21, 21))
        expected[10 - radius:10 + radius + 1, 10 - radius:10 + radius + 1] = np.outer(k, k)
        np.testing.assert_allclose(out, expected, atol=1e-12)
        for dr, dc in [(2, 0), (0, 2), (-2, 0), (0, -2)]:
            assert out[10 + dr, 10 + dc] == pytest.approx(out[12, 10], rel=1e-12)

    def test_outside_support_unchanged(self):
        img = np.random.default_rng(1).random((30, 30, 3))
        mask = np.zeros((30, 30))
        mask[3, 3] = 1.0
        out = composite_glow(img, mask, GlowSettings(radius_px=1.0))
        assert np.max(np.abs(out[10:, 10:] - img[10:, 10:])) <= 1e-9
        assert out[3, 3, 0] > img[3, 3, 0]

    def test_below_threshold_ignored(self):
        img = np.zeros((5, 5, 3))
        mask = np.full((5, 5), 0.2)
        assert np.array_equal(composite_glow(img, mask, GlowSettings(threshold=0.5)), img)


class TestTonemap:
    def test_endpoints(self):
        out = tonemap(np.array([0.0, 1.0, 7.0]), gamma=2.2, exposure=1.0)
        assert out.tolist() == [0, 255, 255]

    def test_half_rounds_up(self):
        assert tonemap(np.array([0.5]), gamma=1.0, exposure=1.0)[0] == 128

    def test_monotone(self):
        rng = np.random.default_rng(0)
        vals = np.sort(rng.uniform(0, 1.5, 5000))
        out = tonemap(vals, gamma=2.2, exposure=1.0).astype(int)
        assert np.all(np.diff(out) >= 0)


class TestSettings:
    def test_invalid(self):
        with pytest.raises(ValueError):
            RenderSettings(spp=0)
        with pytest.raises(ValueError):
            RenderSettings(bounces=-1)

    def test_reference_presets(self):
        from lightforge.renderer import REFERENCE_MULTI_OBJECT, REFERENCE_SINGLE_OBJECT
        assert (REFERENCE_SINGLE_OBJECT.spp, REFERENCE_SINGLE_OBJECT.bounces) == (1024, 8)
        assert (REFERENCE_MULTI_OBJECT.spp, REFERENCE_MULTI_OBJECT.bounces) == (512, 8)


def test_pfm_round_trip(tmp_path):
    img = np.random.default_rng(0).random((5, 7, 3)).astype(np.float32)
    write_pfm(tmp_path / "x.pfm", img)
    np.testing.assert_array_equal(read_pfm(tmp_path / "x.pfm"), img.astype(np.float64))
