"""Regenerate the bundled sample meshes in src/lightforge/assets."""
import math
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "lightforge" / "assets"


def write(name, verts, faces, comment):
    lines = [f"# {comment}"]
    lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in verts]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    (OUT / f"{name}.obj").write_text("\n".join(lines) + "\n")


def outward(verts, faces):
    """Flip faces whose normal points towards the centroid (convex shapes only)."""
    verts = np.asarray(verts, float)
    c = verts.mean(axis=0)
    fixed = []
    for a, b, cc in faces:
        n = np.cross(verts[b] - verts[a], verts[cc] - verts[a])
        fixed.append((a, b, cc) if np.dot(n, verts[a] - c) >= 0 else (a, cc, b))
    return fixed


def icosahedron():
    t = (1 + 5 ** 0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
         (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    v = [np.array(p) / np.linalg.norm(p) for p in v]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4), (11, 10, 2),
         (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9), (4, 9, 5),
         (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    return v, f


def subdivide(v, f):
    v = list(v)
    cache = {}

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in cache:
            m = (v[a] + v[b]) / 2
            v.append(m / np.linalg.norm(m))
            cache[key] = len(v) - 1
        return cache[key]

    out = []
    for a, b, c in f:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        out += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return v, out


def lathe(profile, segments):
    """Revolve (radius, z) profile points around z; end caps close at radius 0."""
    verts, faces = [], []
    rings = []
    for r, z in profile:
        if r == 0:
            rings.append([len(verts)])
            verts.append((0.0, 0.0, z))
            continue
        ring = []
        for s in range(segments):
            a = 2 * math.pi * s / segments
            ring.append(len(verts))
            verts.append((r * math.cos(a), r * math.sin(a), z))
        rings.append(ring)
    for lower, upper in zip(rings[:-1], rings[1:]):
        for s in range(segments):
            if len(lower) == 1:
                faces.append((lower[0], upper[s], upper[(s + 1) % segments]))
            elif len(upper) == 1:
                faces.append((lower[s], lower[(s + 1) % segments], upper[0]))
            else:
                a, b = lower[s], lower[(s + 1) % segments]
                c, d = upper[(s + 1) % segments], upper[s]
                faces += [(a, b, c), (a, c, d)]
    return verts, faces


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    tv = [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]
    write("tetrahedron", tv, outward(tv, [(0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2)]), "regular tetrahedron")
    ov = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    of = [(a, b, c) for a in (0, 1) for b in (2, 3) for c in (4, 5)]
    write("octahedron", ov, outward(ov, of), "octahedron")
    iv, iff = icosahedron()
    write("icosahedron", iv, outward(iv, iff), "icosahedron")
    sv, sf = subdivide(*subdivide(iv, iff))
    write("icosphere", sv, outward(sv, sf), "icosphere, two subdivisions (320 faces)")
    pv = [(-1, -1, 0), (1, -1, 0), (1, 1, 0), (-1, 1, 0), (0, 0, 1.2)]
    pf = [(0, 2, 1), (0, 3, 2), (0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)]
    write("pyramid", pv, outward(pv, pf), "square pyramid")
    v, f = lathe([(0, 0), (0.5, 0), (0.5, 1.0), (0, 1.0)], 24)
    write("cylinder", v, outward(v, f), "capped cylinder, 24 segments")
    v, f = lathe([(0, 0), (0.5, 0), (0, 1.0)], 24)
    write("cone", v, outward(v, f), "cone, 24 segments")
    prof = [(0, -0.5)] + [(0.35 * math.sin(a), -0.15 - 0.35 * math.cos(a)) for a in np.linspace(0.3, math.pi / 2, 4)]
    prof += [(0.35 * math.sin(a), 0.15 - 0.35 * math.cos(a)) for a in np.linspace(math.pi / 2, math.pi - 0.3, 4)] + [(0, 0.5)]
    v, f = lathe(prof, 20)
    write("capsule", v, outward(v, f), "capsule, 20 segments")
    prof = [(0, 0), (0.22, 0), (0.3, 0.1), (0.36, 0.3), (0.3, 0.55), (0.16, 0.75), (0.14, 0.9), (0.2, 1.0), (0, 1.0)]
    v, f = lathe(prof, 24)
    write("vase", v, f, "closed vase-like solid of revolution, 24 segments")
    R, r, nu, nv = 0.5, 0.18, 24, 12
    v = [((R + r * math.cos(b)) * math.cos(a), (R + r * math.cos(b)) * math.sin(a), r * math.sin(b))
         for a in np.linspace(0, 2 * math.pi, nu, endpoint=False) for b in np.linspace(0, 2 * math.pi, nv, endpoint=False)]
    f = []
    for i in range(nu):
        for j in range(nv):
            a, b = i * nv + j, ((i + 1) % nu) * nv + j
            c, d = ((i + 1) % nu) * nv + (j + 1) % nv, i * nv + (j + 1) % nv
            f += [(a, b, c), (a, c, d)]
    write("torus", v, f, "torus, 24 x 12 quads (576 faces)")


if __name__ == "__main__":
    main()
