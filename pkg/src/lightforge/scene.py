"""Scene composition: textured ground, placed objects, overhead camera, sky ambient."""
from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

ASSET_PREFIX = "asset:"
PRIMITIVES = ("sphere", "box")
DEFAULT_POOL = ("box", "sphere", "asset:tetrahedron", "asset:octahedron", "asset:icosahedron",
                "asset:cylinder", "asset:cone", "asset:pyramid", "asset:capsule")
HERO_POOL = ("asset:torus", "asset:icosphere", "asset:vase")

# Archimedean placement spiral
SPIRAL_GROWTH_PER_TURN = 0.25
SPIRAL_STEP_DEG = 15.0
SPIRAL_MAX_RADIUS = 3.0
AABB_MARGIN = 0.01

CAMERA_ELEVATION_JITTER = 0.3


class MeshLoadError(ValueError):
    pass


class PlacementError(RuntimeError):
    pass


# -- geometry ----------------------------------------------------------------

@dataclass(frozen=True)
class AABB:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"invalid AABB {self.lo} .. {self.hi}")

    @classmethod
    def from_points(cls, pts) -> "AABB":
        pts = np.asarray(pts, dtype=np.float64)
        return cls(pts.min(axis=0), pts.max(axis=0))

    def inflate(self, margin: float) -> "AABB":
        return AABB(np.subtract(self.lo, margin), np.add(self.hi, margin))

    def contains(self, p) -> bool:
        return all(lo <= v <= hi for lo, v, hi in zip(self.lo, p, self.hi))


def aabb_overlap(a: AABB, b: AABB) -> bool:
    """Closed-interval test on all three axes; touching faces count as overlap."""
    return all(a.lo[k] <= b.hi[k] and b.lo[k] <= a.hi[k] for k in range(3))


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray = field(repr=False)
    faces: np.ndarray = field(repr=False)
    normals: np.ndarray = field(repr=False)
    source: str = ""

    @property
    def aabb(self) -> AABB:
        return AABB.from_points(self.vertices)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted average of incident face normals; zero for isolated or degenerate vertices."""
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    face_n = np.cross(v1 - v0, v2 - v0)
    acc = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(acc, faces[:, k], face_n)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)


def parse_mesh(text: str, source: str = "<string>") -> TriangleMesh:
    verts, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        try:
            if tag == "v":
                if len(rest) != 3:
                    raise ValueError("vertex needs 3 coordinates")
                verts.append([float(x) for x in rest])
            elif tag == "f":
                if len(rest) < 3:
                    raise ValueError("face needs at least 3 indices")
                idx = [int(x) for x in rest]
                if any(i < 1 or i > len(verts) for i in idx):
                    raise ValueError(f"face index out of range (have {len(verts)} vertices)")
                # fan-triangulate polygons
                faces.extend([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1] for k in range(1, len(idx) - 1))
            else:
                raise ValueError(f"unknown record {tag!r}")
        except ValueError as exc:
            raise MeshLoadError(f"{source}:{lineno}: {exc}") from None
    if not faces:
        raise MeshLoadError(f"{source}: no faces found")
    v = np.array(verts, dtype=np.float64)
    f = np.array(faces, dtype=np.int64)
    return TriangleMesh(v, f, vertex_normals(v, f), source)


def resolve_mesh_path(source: str) -> Path:
    if source.startswith(ASSET_PREFIX):
        name = source[len(ASSET_PREFIX):]
        return Path(str(resources.files("lightforge") / "assets" / f"{name}.obj"))
    return Path(source)


@functools.lru_cache(maxsize=64)
def load_mesh(path) -> TriangleMesh:
    """Load a ``v x y z`` / ``f i j k`` text mesh. Results are cached and must not be mutated."""
    p = resolve_mesh_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise MeshLoadError(f"{p}: cannot read mesh ({exc.strerror})") from None
    mesh = parse_mesh(text, str(p))
    for arr in (mesh.vertices, mesh.faces, mesh.normals):
        arr.setflags(write=False)
    return mesh


def bundled_assets() -> list[str]:
    folder = resources.files("lightforge") / "assets"
    return sorted(ASSET_PREFIX + Path(str(p)).stem for p in folder.iterdir() if str(p).endswith(".obj"))


def rotation_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Geometry:
    """``kind`` is sphere, box or mesh. Spheres and boxes are centred on the local origin."""

    kind: str
    radius: float = 0.0
    size: tuple[float, float, float] = (0.0, 0.0, 0.0)
    source: str = ""
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("sphere", "box", "mesh"):
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))

    def local_points(self) -> np.ndarray:
        """Points whose hull bounds the geometry in its local frame."""
        if self.kind == "sphere":
            r = self.radius
            return np.array([[x, y, z] for x in (-r, r) for y in (-r, r) for z in (-r, r)])
        if self.kind == "box":
            h = np.asarray(self.size) / 2
            return np.array([[x, y, z] for x in (-h[0], h[0]) for y in (-h[1], h[1]) for z in (-h[2], h[2])])
        return load_mesh(self.source).vertices * self.scale

    def world_aabb(self, position, rotation_deg: float) -> AABB:
        position = np.asarray(position, dtype=np.float64)
        if self.kind == "sphere":
            return AABB(position - self.radius, position + self.radius)
        pts = self.local_points() @ rotation_z(rotation_deg).T + position
        return AABB.from_points(pts)

    def rest_height(self) -> float:
        """z offset that puts the lowest point on the ground."""
        return -float(self.local_points()[:, 2].min())


def box_triangles(size) -> tuple[np.ndarray, np.ndarray]:
    """Twelve triangles with per-face vertices so vertex normals stay flat."""
    h = np.asarray(size, dtype=np.float64) / 2
    verts, faces = [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u, v = [a for a in range(3) if a != axis]
            quad = []
            for du, dv in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                p = np.zeros(3)
                p[axis], p[u], p[v] = sign * h[axis], du * h[u], dv * h[v]
                quad.append(p)
            base = len(verts)
            verts.extend(quad)
            tri = [[0, 1, 2], [0, 2, 3]]
            n = np.cross(quad[1] - quad[0], quad[2] - quad[0])
            if n[axis] * sign < 0:
                tri = [[0, 2, 1], [0, 3, 2]]
            faces.extend([[base + a, base + b, base + c] for a, b, c in tri])
    return np.array(verts), np.array(faces, dtype=np.int64)


# -- scene description --------------------------------------------------------

@dataclass(frozen=True)
class MaterialSpec:
    albedo: tuple[float, float, float] = (0.8, 0.8, 0.8)
    specular_strength: float = 0.0
    specular_exponent: float = 32.0
    emissive: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "albedo", tuple(float(v) for v in self.albedo))
        object.__setattr__(self, "emissive", tuple(float(v) for v in self.emissive))
        if any(not 0.0 <= a <= 1.0 for a in self.albedo):
            raise ValueError(f"albedo must lie in [0, 1], got {self.albedo}")
        if not 0.0 <= self.specular_strength <= 1.0:
            raise ValueError("specular_strength must lie in [0, 1]")
        if self.specular_exponent < 1.0:
            raise ValueError("specular_exponent must be >= 1")
        if any(e < 0 for e in self.emissive):
            raise ValueError("emissive must be non-negative")


@dataclass(frozen=True)
class ObjectInstance:
    geometry: Geometry
    material: MaterialSpec
    position: tuple[float, float, float]
    rotation_deg: float = 0.0
    hero: bool = False
    aabb: AABB | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "rotation_deg", float(self.rotation_deg) % 360.0)
        if self.aabb is None:
            object.__setattr__(self, "aabb", self.geometry.world_aabb(self.position, self.rotation_deg))


@dataclass(frozen=True)
class CameraSpec:
    position: tuple[float, float, float] = (0.0, -0.5, 2.2)
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.0)
    fov_deg: float = 40.0
    height: int = 64
    width: int = 64

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "look_at", tuple(float(v) for v in self.look_at))
        if self.position == self.look_at:
            raise ValueError("camera position equals look-at point")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("fov must lie in (0, 180)")
        if self.height < 1 or self.width < 1:
            raise ValueError("image dims must be positive")


@dataclass(frozen=True)
class GroundSpec:
    kind: str = "checker"
    colors: tuple[tuple[float, float, float], tuple[float, float, float]] = ((0.75, 0.75, 0.7), (0.45, 0.45, 0.42))
    checker_size: float = 0.25
    rotation_deg: float = 0.0
    image: str = ""
    half_extent: float = 4.0

    def __post_init__(self):
        if self.kind not in ("checker", "image"):
            raise ValueError(f"unknown ground texture kind {self.kind!r}")
        object.__setattr__(self, "colors", tuple(tuple(float(c) for c in col) for col in self.colors))
        object.__setattr__(self, "rotation_deg", float(self.rotation_deg) % 360.0)


@dataclass(frozen=True)
class AmbientSpec:
    kind: str = "gradient"
    top: tuple[float, float, float] = (1.0, 1.0, 1.0)
    bottom: tuple[float, float, float] = (0.35, 0.33, 0.3)
    intensity: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "gradient"):
            raise ValueError(f"unknown ambient kind {self.kind!r}")
        object.__setattr__(self, "top", tuple(float(v) for v in self.top))
        object.__setattr__(self, "bottom", tuple(float(v) for v in self.bottom))

    def radiance(self, up_component):
        """Sky radiance as a function of the z component of a direction or normal."""
        top = np.asarray(self.top)
        if self.kind == "constant":
            return self.intensity * np.broadcast_to(top, np.shape(up_component) + (3,))
        w = (np.clip(up_component, -1.0, 1.0)[..., None] + 1.0) / 2.0
        return self.intensity * (np.asarray(self.bottom) + w * (top - np.asarray(self.bottom)))


@dataclass(frozen=True)
class SceneSpec:
    ground: GroundSpec
    objects: tuple[ObjectInstance, ...]
    camera: CameraSpec
    ambient: AmbientSpec = AmbientSpec()
    seed: int = 0
    mode: str = "single"

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    def validate(self, tol: float = 1e-9) -> None:
        for i, a in enumerate(self.objects):
            if abs(a.aabb.lo[2]) > tol:
                raise ValueError(f"object {i} does not rest on the ground (min z = {a.aabb.lo[2]})")
            for j in range(i + 1, len(self.objects)):
                if aabb_overlap(a.aabb, self.objects[j].aabb):
                    raise ValueError(f"objects {i} and {j} overlap")

    def with_image_size(self, height: int, width: int) -> "SceneSpec":
        return replace(self, camera=replace(self.camera, height=height, width=width))

    def to_json(self) -> dict:
        return _jsonable(asdict(self))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, data: dict) -> "SceneSpec":
        objects = tuple(
            ObjectInstance(
                geometry=Geometry(**o["geometry"]),
                material=MaterialSpec(**o["material"]),
                position=o["position"],
                rotation_deg=o["rotation_deg"],
                hero=o["hero"],
                aabb=AABB(**o["aabb"]),
            )
            for o in data["objects"]
        )
        return cls(
            ground=GroundSpec(**data["ground"]),
            objects=objects,
            camera=CameraSpec(**data["camera"]),
            ambient=AmbientSpec(**data["ambient"]),
            seed=data["seed"],
            mode=data["mode"],
        )

    @classmethod
    def loads(cls, text: str) -> "SceneSpec":
        return cls.from_json(json.loads(text))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def save_scene(scene: SceneSpec, path) -> None:
    Path(path).write_text(scene.dumps())


def load_scene(path) -> SceneSpec:
    return SceneSpec.loads(Path(path).read_text())


# -- composition ----------------------------------------------------------------

def make_geometry(choice: str, target_extent: float) -> Geometry:
    """Primitive or mesh geometry scaled so its largest extent is ``target_extent``."""
    if choice == "sphere":
        return Geometry("sphere", radius=target_extent / 2)
    if choice == "box":
        return Geometry("box", size=(target_extent,) * 3)
    mesh = load_mesh(choice)
    extent = float(np.max(mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)))
    if extent <= 0:
        raise MeshLoadError(f"{resolve_mesh_path(choice)}: mesh has zero extent")
    return Geometry("mesh", source=choice, scale=target_extent / extent)


def random_material(rng: np.random.Generator, lambertian: bool = False) -> MaterialSpec:
    albedo = tuple(float(a) for a in rng.uniform(0.25, 0.9, size=3))
    if lambertian:
        return MaterialSpec(albedo=albedo)
    return MaterialSpec(albedo=albedo, specular_strength=float(rng.uniform(0.0, 0.4)),
                        specular_exponent=float(rng.choice([8.0, 32.0, 128.0])))


def random_ground(rng: np.random.Generator) -> GroundSpec:
    base = rng.uniform(0.35, 0.8, size=3)
    dark = base * rng.uniform(0.5, 0.8)
    return GroundSpec(colors=(tuple(base), tuple(dark)), checker_size=float(rng.uniform(0.15, 0.4)),
                      rotation_deg=float(rng.uniform(0.0, 360.0)))


def overhead_camera(rng: np.random.Generator, base_height: float, back_offset: float, fov_deg: float,
                    height: int, width: int) -> CameraSpec:
    z = base_height + float(rng.uniform(-CAMERA_ELEVATION_JITTER, CAMERA_ELEVATION_JITTER))
    return CameraSpec(position=(0.0, -back_offset, z), look_at=(0.0, 0.0, 0.0), fov_deg=fov_deg,
                      height=height, width=width)


SINGLE_CAMERA = {"base_height": 2.2, "back_offset": 0.5, "fov_deg": 40.0}
MULTI_CAMERA = {"base_height": 3.4, "back_offset": 0.8, "fov_deg": 50.0}


def compose_single(seed: int, object_choice: str = "sphere", *, image_size=(64, 64),
                   lambertian: bool = False, object_extent: float = 0.5) -> SceneSpec:
    """One object at the origin with a random up-axis rotation on a rotated ground."""
    rng = np.random.default_rng(seed)
    geometry = make_geometry(object_choice, object_extent)
    rotation = float(rng.uniform(0.0, 360.0))
    material = random_material(rng, lambertian)
    obj = ObjectInstance(geometry, material, (0.0, 0.0, geometry.rest_height()), rotation)
    ground = random_ground(rng)
    camera = overhead_camera(rng, height=image_size[0], width=image_size[1], **SINGLE_CAMERA)
    scene = SceneSpec(ground, (obj,), camera, AmbientSpec(), seed=int(seed), mode="single")
    scene.validate()
    return scene


def spiral_point(slot: int) -> tuple[float, float]:
    angle = math.radians(slot * SPIRAL_STEP_DEG)
    radius = SPIRAL_GROWTH_PER_TURN * angle / (2 * math.pi)
    return radius * math.cos(angle), radius * math.sin(angle)


def place_on_spiral(items: Sequence[tuple[Geometry, float]], margin: float = AABB_MARGIN,
                    max_radius: float = SPIRAL_MAX_RADIUS) -> list[tuple[tuple[float, float, float], int]]:
    """Walk each (geometry, rotation) outward along the spiral until its box is free.

    Placement is sequential: each item starts from the slot after the previous
    item's final slot. Returns ``(position, slot)`` per item.
    """
    placed: list[AABB] = []
    out = []
    slot = 0
    max_slot = int(max_radius / SPIRAL_GROWTH_PER_TURN * 360.0 / SPIRAL_STEP_DEG)
    for index, (geometry, rotation) in enumerate(items):
        z = geometry.rest_height()
        while True:
            if slot > max_slot:
                raise PlacementError(
                    f"no collision-free slot for object {index} within spiral radius {max_radius} m "
                    f"({len(placed)} objects already placed)")
            x, y = spiral_point(slot)
            box = geometry.world_aabb((x, y, z), rotation).inflate(margin)
            if not any(aabb_overlap(box, other) for other in placed):
                break
            slot += 1
        placed.append(box)
        out.append(((x, y, z), slot))
        slot += 1
    return out


def compose_multi(seed: int, object_pool: Sequence[str] = DEFAULT_POOL, max_objects: int = 10, *,
                  hero_pool: Sequence[str] = HERO_POOL, image_size=(64, 64),
                  lambertian: bool = False) -> SceneSpec:
    """A hero object plus up to ``max_objects`` pool objects along the placement spiral."""
    if not object_pool:
        raise ValueError("object pool is empty")
    rng = np.random.default_rng(seed)
    n_pool = int(rng.integers(1, max_objects + 1))
    choices = [hero_pool[int(rng.integers(len(hero_pool)))]]
    choices += [object_pool[int(rng.integers(len(object_pool)))] for _ in range(n_pool)]
    items, materials = [], []
    for k, choice in enumerate(choices):
        extent = float(rng.uniform(0.35, 0.5)) if k == 0 else float(rng.uniform(0.15, 0.35))
        items.append((make_geometry(choice, extent), float(rng.uniform(0.0, 360.0))))
        materials.append(random_material(rng, lambertian))
    placements = place_on_spiral(items)
    objects = tuple(
        ObjectInstance(geom, mat, pos, rot, hero=(k == 0))
        for k, ((geom, rot), mat, (pos, _)) in enumerate(zip(items, materials, placements))
    )
    ground = random_ground(rng)
    camera = overhead_camera(rng, height=image_size[0], width=image_size[1], **MULTI_CAMERA)
    scene = SceneSpec(ground, objects, camera, AmbientSpec(), seed=int(seed), mode="multi")
    scene.validate()
    return scene
