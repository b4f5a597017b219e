import itertools

import numpy as np
import pytest

from lightforge import scene as sc
from lightforge.scene import AABB, Geometry, aabb_overlap

TETRA = """# unit tetrahedron
v 0 0 0
v 1 0 0
v 0 1 0
v 0 0 1
f 1 3 2
f 1 2 4
f 1 4 3
f 2 3 4
"""


class TestAABB:
    def test_identical(self):
        a = AABB((0, 0, 0), (1, 1, 1))
        assert aabb_overlap(a, a)

    def test_separated_x(self):
        assert not aabb_overlap(AABB((0, 0, 0), (1, 1, 1)), AABB((1.5, 0, 0), (2, 1, 1)))

    def test_touching_counts(self):
        assert aabb_overlap(AABB((0, 0, 0), (1, 1, 1)), AABB((1, 0, 0), (2, 1, 1)))

    def test_invalid(self):
        with pytest.raises(ValueError):
            AABB((1, 0, 0), (0, 1, 1))

    def test_against_sampling_oracle(self):
        # Two boxes overlap iff some point lies in both. Points are drawn on a
        # lattice that includes every box corner coordinate so thin or touching
        # intersections are not missed; 10^5 memberships per pair in total.
        rng = np.random.default_rng(0)
        n_points = 0
        for _ in range(200):
            boxes = []
            for _ in range(2):
                lo = rng.uniform(0, 1, 3).round(1)
                boxes.append(AABB(lo, lo + rng.uniform(0, 0.6, 3).round(1)))
            a, b = boxes
            axes = [np.unique(np.concatenate([np.linspace(0, 1.6, 17), [a.lo[k], a.hi[k], b.lo[k], b.hi[k]]]))
                    for k in range(3)]
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
            n_points += len(pts)
            inside = lambda box: np.all((pts >= box.lo) & (pts <= box.hi), axis=1)
            assert aabb_overlap(a, b) == bool(np.any(inside(a) & inside(b)))
        assert n_points >= 100_000


class TestMesh:
    def test_tetrahedron(self, tmp_path):
        p = tmp_path / "tetra.obj"
        p.write_text(TETRA)
        mesh = sc.load_mesh(p)
        assert mesh.vertices.shape == (4, 3) and mesh.faces.shape == (4, 3)
        box = mesh.aabb
        assert all(0 <= v <= 1 for v in box.lo + box.hi)
        assert np.allclose(np.linalg.norm(mesh.normals, axis=1), 1.0)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.obj"
        p.write_text("")
        with pytest.raises(sc.MeshLoadError, match="no faces"):
            sc.load_mesh(p)

    def test_malformed_line_number(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1\nf 1 2 3\n")
        with pytest.raises(sc.MeshLoadError, match=r"bad.obj:3"):
            sc.load_mesh(p)

    def test_index_out_of_range(self):
        with pytest.raises(sc.MeshLoadError, match=":4:"):
            sc.parse_mesh("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n")

    def test_missing_file_reports_path(self, tmp_path):
        with pytest.raises(sc.MeshLoadError, match="nope.obj"):
            sc.load_mesh(tmp_path / "nope.obj")

    def test_flat_quad_normals(self):
        verts = np.array([[0, 0, 0], [2, 0, 0.5], [2, 1, 0.5], [0, 1, 0]], dtype=float)
        text = "\n".join(f"v {x} {y} {z}" for x, y, z in verts) + "\nf 1 2 3\nf 1 3 4\n"
        mesh = sc.parse_mesh(text)
        n = np.cross(verts[1] - verts[0], verts[2] - verts[0])
        n /= np.linalg.norm(n)
        np.testing.assert_allclose(mesh.normals, np.tile(n, (4, 1)), atol=1e-12)

    def test_non_manifold_accepted(self):
        # three triangles sharing one edge
        mesh = sc.parse_mesh("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 -1 0\nv 0 0 1\nf 1 2 3\nf 1 2 4\nf 1 2 5\n")
        assert len(mesh.faces) == 3

    def test_bundled_assets(self):
        assets = sc.bundled_assets()
        assert 1 <= len(assets) <= 20
        for name in assets:
            assert len(sc.load_mesh(name).faces) >= 4


class TestComposeSingle:
    def test_deterministic(self):
        assert sc.compose_single(11).dumps() == sc.compose_single(11).dumps()
        assert sc.compose_single(11).dumps() != sc.compose_single(12).dumps()

    def test_camera_elevation(self):
        zs = [sc.compose_single(s).camera.position[2] for s in range(1000)]
        base = sc.SINGLE_CAMERA["base_height"]
        assert min(zs) >= base - 0.3 and max(zs) <= base + 0.3
        assert max(zs) - min(zs) > 0.5

    @pytest.mark.parametrize("choice", ["sphere", "box", "asset:torus", "asset:tetrahedron"])
    def test_rests_on_ground(self, choice):
        scene = sc.compose_single(3, choice)
        obj = scene.objects[0]
        assert obj.aabb.lo[2] == pytest.approx(0.0, abs=1e-12)
        if obj.geometry.kind == "mesh":
            pts = sc.load_mesh(obj.geometry.source).vertices * obj.geometry.scale
            world = pts @ sc.rotation_z(obj.rotation_deg).T + obj.position
            assert world[:, 2].min() == pytest.approx(0.0, abs=1e-12)
            assert np.all(world >= np.array(obj.aabb.lo) - 1e-12)
            assert np.all(world <= np.array(obj.aabb.hi) + 1e-12)

    def test_rotation_normalized(self):
        obj = sc.ObjectInstance(Geometry("box", size=(1, 1, 1)), sc.MaterialSpec(), (0, 0, 0.5), 725.0)
        assert obj.rotation_deg == 5.0

    def test_missing_mesh_reports_path(self, tmp_path):
        with pytest.raises(sc.MeshLoadError, match="missing.obj"):
            sc.compose_single(0, str(tmp_path / "missing.obj"))


class TestSpiral:
    def test_two_cubes_displaced(self):
        cube = Geometry("box", size=(1, 1, 1))
        placements = sc.place_on_spiral([(cube, 0.0), (cube, 0.0)])
        (p0, s0), (p1, s1) = placements
        assert p0 == (0.0, 0.0, 0.5)
        assert s1 > s0
        a, b = (cube.world_aabb(p, 0.0) for p in (p0, p1))
        assert not aabb_overlap(a, b)

    def test_distance_non_decreasing(self):
        radii = [np.hypot(*sc.spiral_point(k)) for k in range(300)]
        assert all(a <= b for a, b in zip(radii, radii[1:]))

    def test_no_slot_found(self):
        big = Geometry("box", size=(2, 2, 1))
        with pytest.raises(sc.PlacementError, match="no collision-free slot"):
            sc.place_on_spiral([(big, 0.0), (big, 0.0)], max_radius=0.5)


class TestComposeMulti:
    def test_ten_objects_disjoint(self):
        scene = next(s for s in map(sc.compose_multi, range(40)) if len(s.objects) == 10)
        boxes = [o.aabb for o in scene.objects]
        pairs = list(itertools.combinations(boxes, 2))
        assert len(pairs) == 45
        for a, b in pairs:
            # brute-force separation test on every axis
            assert any(a.hi[k] < b.lo[k] or b.hi[k] < a.lo[k] for k in range(3))

    def test_hero_present(self):
        for seed in range(20):
            scene = sc.compose_multi(seed)
            assert sum(o.hero for o in scene.objects) >= 1
            assert 2 <= len(scene.objects) <= 11

    def test_all_rest_on_ground(self):
        scene = sc.compose_multi(5)
        assert all(abs(o.aabb.lo[2]) < 1e-12 for o in scene.objects)

    def test_empty_pool(self):
        with pytest.raises(ValueError):
            sc.compose_multi(0, object_pool=[])

    def test_deterministic(self):
        assert sc.compose_multi(9).dumps() == sc.compose_multi(9).dumps()


class TestSerialization:
    @pytest.mark.parametrize("make", [lambda: sc.compose_single(4, "asset:vase"), lambda: sc.compose_multi(4)])
    def test_round_trip(self, make, tmp_path):
        scene = make()
        sc.save_scene(scene, tmp_path / "scene.json")
        back = sc.load_scene(tmp_path / "scene.json")
        assert back == scene
        assert back.dumps() == scene.dumps()
