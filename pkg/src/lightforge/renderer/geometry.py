"""Ray casting against a compiled scene: ground plane, analytic spheres, triangles.

All queries are vectorized over a batch of rays. Triangle sets larger than
``BRUTE_FORCE_MAX`` go through a median-split BVH that is traversed as a
frontier of (ray, node) pairs, so no per-ray Python loop is involved.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from ..scene import SceneSpec, box_triangles, load_mesh, rotation_z, vertex_normals

EPS = 1e-4
BRUTE_FORCE_MAX = 64
LEAF_SIZE = 4

GROUND_ID = 0
MISS_ID = -1


@dataclass
class Hit:
    t: np.ndarray
    point: np.ndarray
    normal: np.ndarray
    object_id: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.object_id != MISS_ID


def normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def moller_trumbore(o, d, v0, e1, e2):
    """Pairwise ray/triangle intersection. Returns (t, u, v) with t = inf on miss."""
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-14
    inv = np.divide(1.0, det, out=np.zeros_like(det), where=ok)
    s = o - v0
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", d, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    ok &= (u >= 0) & (v >= 0) & (u + v <= 1)
    return np.where(ok, t, np.inf), u, v


class BVH:
    """Flattened median-split bounding volume hierarchy over triangle centroids."""

    def __init__(self, v0: np.ndarray, v1: np.ndarray, v2: np.ndarray, leaf_size: int = LEAF_SIZE):
        lo_tri = np.minimum(np.minimum(v0, v1), v2)
        hi_tri = np.maximum(np.maximum(v0, v1), v2)
        centroid = (v0 + v1 + v2) / 3.0
        order = np.arange(len(v0))
        lo, hi, left, right, start, count = [], [], [], [], [], []

        def build(idx: np.ndarray) -> int:
            node = len(lo)
            lo.append(lo_tri[idx].min(axis=0))
            hi.append(hi_tri[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
            if len(idx) <= leaf_size:
                start[node] = len(leaf_order)
                count[node] = len(idx)
                leaf_order.extend(idx.tolist())
                return node
            c = centroid[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            # stable sort keeps the split deterministic under ties
            idx = idx[np.argsort(c[:, axis], kind="stable")]
            mid = len(idx) // 2
            left[node] = build(idx[:mid])
            right[node] = build(idx[mid:])
            return node

        leaf_order: list[int] = []
        build(order)
        self.lo = np.array(lo)
        self.hi = np.array(hi)
        self.left = np.array(left)
        self.right = np.array(right)
        self.start = np.array(start)
        self.count = np.array(count)
        self.order = np.array(leaf_order)

    @property
    def n_nodes(self) -> int:
        return len(self.lo)


def _slab(o, inv_d, lo, hi):
    with np.errstate(invalid="ignore"):
        t0 = (lo - o) * inv_d
        t1 = (hi - o) * inv_d
    t0 = np.nan_to_num(t0, nan=-np.inf)
    t1 = np.nan_to_num(t1, nan=np.inf)
    tmin = np.minimum(t0, t1).max(axis=1)
    tmax = np.maximum(t0, t1).min(axis=1)
    return tmin, tmax


class CompiledScene:
    """Flattened, immutable render-time view of a SceneSpec."""

    def __init__(self, scene: SceneSpec):
        self.spec = scene
        self.ground = scene.ground
        self.ambient = scene.ambient
        n_obj = len(scene.objects)
        # material row 0 is the ground; its albedo comes from the texture
        self.albedo = np.zeros((n_obj + 1, 3))
        self.spec_strength = np.zeros(n_obj + 1)
        self.spec_exponent = np.ones(n_obj + 1)
        self.emissive = np.zeros((n_obj + 1, 3))
        sph_c, sph_r, sph_id = [], [], []
        tris, tri_n, tri_id = [], [], []
        for k, obj in enumerate(scene.objects, start=1):
            m = obj.material
            self.albedo[k] = m.albedo
            self.spec_strength[k] = m.specular_strength
            self.spec_exponent[k] = m.specular_exponent
            self.emissive[k] = m.emissive
            g = obj.geometry
            if g.kind == "sphere":
                sph_c.append(obj.position)
                sph_r.append(g.radius)
                sph_id.append(k)
                continue
            if g.kind == "box":
                verts, faces = box_triangles(g.size)
                normals = vertex_normals(verts, faces)
            else:
                mesh = load_mesh(g.source)
                verts, faces, normals = mesh.vertices * g.scale, mesh.faces, mesh.normals
            rot = rotation_z(obj.rotation_deg)
            world = verts @ rot.T + np.asarray(obj.position)
            wn = normals @ rot.T
            tris.append(world[faces])
            tri_n.append(wn[faces])
            tri_id.append(np.full(len(faces), k))
        self.sph_c = np.array(sph_c, dtype=np.float64).reshape(-1, 3)
        self.sph_r = np.array(sph_r, dtype=np.float64)
        self.sph_id = np.array(sph_id, dtype=np.int64)
        if tris:
            tri = np.concatenate(tris)
            self.tri_n = np.concatenate(tri_n)
            self.tri_id = np.concatenate(tri_id)
        else:
            tri = np.zeros((0, 3, 3))
            self.tri_n = np.zeros((0, 3, 3))
            self.tri_id = np.zeros(0, dtype=np.int64)
        self.bvh = BVH(tri[:, 0], tri[:, 1], tri[:, 2]) if len(tri) > BRUTE_FORCE_MAX else None
        if self.bvh is not None:
            tri = tri[self.bvh.order]
            self.tri_n = self.tri_n[self.bvh.order]
            self.tri_id = self.tri_id[self.bvh.order]
        self.v0 = tri[:, 0].copy()
        self.e1 = tri[:, 1] - tri[:, 0]
        self.e2 = tri[:, 2] - tri[:, 0]
        self._texture = None

    @property
    def n_triangles(self) -> int:
        return len(self.v0)

    # -- closest hit -------------------------------------------------------

    def intersect(self, o: np.ndarray, d: np.ndarray, t_max=np.inf, include_ground: bool = True) -> Hit:
        k = len(o)
        best_t = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (k,)).copy()
        best_id = np.full(k, MISS_ID)
        normal = np.zeros((k, 3))

        if include_ground:
            t = self._ground_t(o, d)
            sel = t < best_t
            best_t[sel] = t[sel]
            best_id[sel] = GROUND_ID
            normal[sel] = (0.0, 0.0, 1.0)

        for c, r, oid in zip(self.sph_c, self.sph_r, self.sph_id):
            t = _sphere_t(o, d, c, r)
            sel = t < best_t
            best_t[sel] = t[sel]
            best_id[sel] = oid
            normal[sel] = (o[sel] + t[sel, None] * d[sel] - c) / r

        if self.n_triangles:
            tri, tt, u, v = self._closest_triangle(o, d, best_t)
            sel = tri >= 0
            best_t[sel] = tt[sel]
            best_id[sel] = self.tri_id[tri[sel]]
            n = self.tri_n[tri[sel]]
            w = np.stack([1 - u[sel] - v[sel], u[sel], v[sel]], axis=1)
            shading = normalize(np.einsum("ij,ijk->ik", w, n))
            geometric = normalize(np.cross(self.e1[tri[sel]], self.e2[tri[sel]]))
            bad = ~np.any(shading != 0, axis=1)
            shading[bad] = geometric[bad]
            normal[sel] = shading

        hit_any = best_id != MISS_ID
        point = np.where(hit_any[:, None], o + np.where(hit_any, best_t, 0.0)[:, None] * d, 0.0)
        flip = np.einsum("ij,ij->i", normal, d) > 0
        normal[flip] *= -1
        best_t[~hit_any] = np.inf
        return Hit(best_t, point, normal, best_id)

    def _ground_t(self, o, d):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -o[:, 2] / d[:, 2]
        t = np.where(np.isfinite(t) & (t > EPS), t, np.inf)
        p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
        inside = (np.abs(p[:, 0]) <= self.ground.half_extent) & (np.abs(p[:, 1]) <= self.ground.half_extent)
        return np.where(inside, t, np.inf)

    def _closest_triangle(self, o, d, t_max):
        k = len(o)
        if self.bvh is None:
            return self._brute_closest(o, d, t_max)
        best_t = t_max.copy()
        best_tri = np.full(k, -1)
        inv_d = 1.0 / np.where(np.abs(d) < 1e-300, 1e-300, d)
        rays = np.arange(k)
        nodes = np.zeros(k, dtype=np.int64)
        bvh = self.bvh
        while rays.size:
            tmin, tmax = _slab(o[rays], inv_d[rays], bvh.lo[nodes], bvh.hi[nodes])
            keep = (tmax >= np.maximum(tmin, EPS)) & (tmin <= best_t[rays])
            rays, nodes = rays[keep], nodes[keep]
            leaf = bvh.left[nodes] < 0
            lr, ln = rays[leaf], nodes[leaf]
            if lr.size:
                counts = bvh.count[ln]
                tri_ray = np.repeat(lr, counts)
                offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
                tri_idx = np.repeat(bvh.start[ln], counts) + offsets
                t, _, _ = moller_trumbore(o[tri_ray], d[tri_ray], self.v0[tri_idx], self.e1[tri_idx], self.e2[tri_idx])
                valid = (t > EPS) & (t < best_t[tri_ray])
                tri_ray, tri_idx, t = tri_ray[valid], tri_idx[valid], t[valid]
                np.minimum.at(best_t, tri_ray, t)
                win = t == best_t[tri_ray]
                # smallest index wins ties within a batch
                r_, i_ = _first_per_ray(tri_ray[win], tri_idx[win])
                best_tri[r_] = i_
            ir, inn = rays[~leaf], nodes[~leaf]
            rays = np.concatenate([ir, ir])
            nodes = np.concatenate([bvh.left[inn], bvh.right[inn]])
        return self._finish(o, d, best_tri)

    def _brute_closest(self, o, d, t_max):
        k, n = len(o), self.n_triangles
        ray = np.repeat(np.arange(k), n)
        tri = np.tile(np.arange(n), k)
        t, _, _ = moller_trumbore(o[ray], d[ray], self.v0[tri], self.e1[tri], self.e2[tri])
        t = np.where(t > EPS, t, np.inf).reshape(k, n)
        best = np.argmin(t, axis=1)
        best_t = t[np.arange(k), best]
        best_tri = np.where(best_t < t_max, best, -1)
        return self._finish(o, d, best_tri)

    def _finish(self, o, d, best_tri):
        k = len(o)
        t = np.full(k, np.inf)
        u = np.zeros(k)
        v = np.zeros(k)
        sel = best_tri >= 0
        if sel.any():
            i = best_tri[sel]
            t[sel], u[sel], v[sel] = moller_trumbore(o[sel], d[sel], self.v0[i], self.e1[i], self.e2[i])
        return best_tri, t, u, v

    # -- occlusion -------------------------------------------------------------

    def occluded(self, o: np.ndarray, d: np.ndarray, t_max: np.ndarray) -> np.ndarray:
        """True where anything is hit with EPS < t < t_max."""
        k = len(o)
        hit = self._ground_t(o, d) < t_max
        for c, r in zip(self.sph_c, self.sph_r):
            hit |= _sphere_t(o, d, c, r) < t_max
        if not self.n_triangles:
            return hit
        if self.bvh is None:
            tri, _, _, _ = self._brute_closest(o, d, t_max)
            return hit | (tri >= 0)
        bvh = self.bvh
        inv_d = 1.0 / np.where(np.abs(d) < 1e-300, 1e-300, d)
        rays = np.flatnonzero(~hit)
        nodes = np.zeros(len(rays), dtype=np.int64)
        while rays.size:
            keep = ~hit[rays]
            rays, nodes = rays[keep], nodes[keep]
            tmin, tmax = _slab(o[rays], inv_d[rays], bvh.lo[nodes], bvh.hi[nodes])
            keep = (tmax >= np.maximum(tmin, EPS)) & (tmin <= t_max[rays])
            rays, nodes = rays[keep], nodes[keep]
            leaf = bvh.left[nodes] < 0
            lr, ln = rays[leaf], nodes[leaf]
            if lr.size:
                counts = bvh.count[ln]
                tri_ray = np.repeat(lr, counts)
                offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
                tri_idx = np.repeat(bvh.start[ln], counts) + offsets
                t, _, _ = moller_trumbore(o[tri_ray], d[tri_ray], self.v0[tri_idx], self.e1[tri_idx], self.e2[tri_idx])
                hit[tri_ray[(t > EPS) & (t < t_max[tri_ray])]] = True
            ir, inn = rays[~leaf], nodes[~leaf]
            rays = np.concatenate([ir, ir])
            nodes = np.concatenate([bvh.left[inn], bvh.right[inn]])
        return hit

    def visible(self, points: np.ndarray, light_pos) -> np.ndarray:
        """Shadow-ray visibility of ``light_pos`` from each point."""
        to_light = np.asarray(light_pos, dtype=np.float64) - points
        dist = np.linalg.norm(to_light, axis=1)
        d = normalize(to_light)
        return ~self.occluded(points, d, dist - EPS)

    # -- textures -------------------------------------------------------------

    def ground_albedo(self, p: np.ndarray) -> np.ndarray:
        g = self.ground
        rot = rotation_z(-g.rotation_deg)[:2, :2]
        uv = p[:, :2] @ rot.T / g.checker_size
        if g.kind == "checker":
            parity = (np.floor(uv[:, 0]) + np.floor(uv[:, 1])).astype(np.int64) % 2
            colors = np.asarray(g.colors)
            return colors[parity]
        tex = self._load_texture()
        h, w = tex.shape[:2]
        col = (np.mod(uv[:, 0], 1.0) * w).astype(np.int64) % w
        row = (np.mod(-uv[:, 1], 1.0) * h).astype(np.int64) % h
        return tex[row, col]

    def _load_texture(self):
        if self._texture is None:
            from .io import read_image
            self._texture = np.clip(read_image(self.ground.image), 0.0, 1.0)
        return self._texture


def _sphere_t(o, d, c, r):
    oc = o - c
    b = np.einsum("ij,ij->i", oc, d)
    cc = np.einsum("ij,ij->i", oc, oc) - r * r
    disc = b * b - cc
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > EPS, t0, np.where(t1 > EPS, t1, np.inf))
    return np.where(disc >= 0, t, np.inf)


def _first_per_ray(rays: np.ndarray, tris: np.ndarray):
    if rays.size == 0:
        return rays, tris
    order = np.lexsort((tris, rays))
    rays, tris = rays[order], tris[order]
    first = np.ones(len(rays), dtype=bool)
    first[1:] = rays[1:] != rays[:-1]
    return rays[first], tris[first]


@functools.lru_cache(maxsize=8)
def compile_scene_cached(scene_json: str) -> CompiledScene:
    return CompiledScene(SceneSpec.loads(scene_json))
