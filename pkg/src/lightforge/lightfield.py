"""Point-light trajectories, intensity schedules and the per-frame 5D control signal.

Angles are in degrees. ``theta_deg`` is the azimuth around the up (z) axis and
``phi_deg`` the elevation above the ground plane. Frame numbers in schedule
metadata are 1-based, array indices are 0-based.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

TRAJECTORY_KINDS = ("linear-grid", "bezier", "spiral", "hybrid", "mit-index")

# (I_e floor, I_p max in lumens)
SCHEDULE_PRESETS = {
    "default": (0.2, 120.0),
    "ablation-40-75": (0.4, 75.0),
    "ablation-30-100": (0.3, 100.0),
    "ablation-20-120": (0.2, 120.0),
}

DIM_FRAMES = 4
SINGLE_OBJECT_FRAMES = 14
SINGLE_OBJECT_MOTION_START = 5
MULTI_OBJECT_FRAMES = 25
MULTI_OBJECT_MOTION_START = 7

TRAIN_GRID_M = 128
TEST_GRID_M = 64


@dataclass(frozen=True)
class LightState:
    theta_deg: float
    phi_deg: float
    r: float
    I_p: float
    I_e: float

    def __post_init__(self):
        if not 0.0 <= self.theta_deg < 360.0:
            raise ValueError(f"theta_deg must lie in [0, 360), got {self.theta_deg}")
        if not 0.0 <= self.I_e <= 1.0:
            raise ValueError(f"I_e must lie in [0, 1], got {self.I_e}")
        if self.I_p < 0.0:
            raise ValueError(f"I_p must be non-negative, got {self.I_p}")
        if not self.r > 0.0:
            raise ValueError(f"r must be positive, got {self.r}")

    @property
    def position(self) -> tuple[float, float, float]:
        return (self.theta_deg, self.phi_deg, self.r)


@dataclass(frozen=True)
class NormalizedLightState:
    theta: float
    phi: float
    r: float
    I_p: float
    I_e: float

    def __post_init__(self):
        for name, value in zip(("theta", "phi", "r", "I_p", "I_e"), self.as_array()):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"normalized {name} must lie in [0, 1], got {value}")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.phi, self.r, self.I_p, self.I_e], dtype=np.float64)


@dataclass(frozen=True)
class PolarBox:
    theta: tuple[float, float] = (0.0, 360.0)
    phi: tuple[float, float] = (45.0, 80.0)
    r: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        for name in ("theta", "phi", "r"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"PolarBox {name} range has min > max: ({lo}, {hi})")
        if self.r[0] <= 0:
            raise ValueError("PolarBox radius must be positive")

    @classmethod
    def single_object(cls) -> "PolarBox":
        return cls(theta=(0.0, 360.0), phi=(45.0, 80.0), r=(1.0, 1.0))

    @classmethod
    def multi_object(cls) -> "PolarBox":
        return cls(theta=(0.0, 360.0), phi=(45.0, 80.0), r=(0.8, 1.5))

    def contains(self, theta_deg: float, phi_deg: float, r: float, tol: float = 1e-9) -> bool:
        return (
            self.theta[0] - tol <= theta_deg <= self.theta[1] + tol
            and self.phi[0] - tol <= phi_deg <= self.phi[1] + tol
            and self.r[0] - tol <= r <= self.r[1] + tol
        )


@dataclass(frozen=True)
class Trajectory:
    """Ordered light states plus the schedule metadata they were built with."""

    states: tuple[LightState, ...]
    dim_frames: int = DIM_FRAMES
    motion_start: int = SINGLE_OBJECT_MOTION_START
    kind: str = "linear-grid"

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if len(self.states) < self.dim_frames:
            raise ValueError("trajectory shorter than its dimming window")
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def n_frames(self) -> int:
        return len(self.states)

    @property
    def motion_frames(self) -> range:
        """1-based frame numbers during which the light moves."""
        return range(self.motion_start, self.n_frames + 1)

    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.states], dtype=np.float64)

    def to_records(self) -> list[dict]:
        return [{"frame": i + 1, **asdict(s)} for i, s in enumerate(self.states)]

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "dim_frames": self.dim_frames,
            "motion_start": self.motion_start,
            "frames": self.to_records(),
        }

    @classmethod
    def from_json(cls, data) -> "Trajectory":
        """Accepts either the full trajectory object or a bare ``control.json`` array."""
        if isinstance(data, list):
            records = data
            motion_start = (
                MULTI_OBJECT_MOTION_START if len(records) == MULTI_OBJECT_FRAMES
                else SINGLE_OBJECT_MOTION_START
            )
            meta = {"dim_frames": DIM_FRAMES, "motion_start": motion_start, "kind": "linear-grid"}
        else:
            records = data["frames"]
            meta = {k: data[k] for k in ("dim_frames", "motion_start", "kind")}
        records = sorted(records, key=lambda rec: rec["frame"])
        states = tuple(
            LightState(rec["theta_deg"], rec["phi_deg"], rec["r"], rec["I_p"], rec["I_e"])
            for rec in records
        )
        return cls(states=states, **meta)


def save_trajectory(traj: Trajectory, path) -> None:
    Path(path).write_text(json.dumps(traj.to_json(), indent=1) + "\n")


def load_trajectory(path) -> Trajectory:
    return Trajectory.from_json(json.loads(Path(path).read_text()))


def write_control_manifest(traj: Trajectory, path) -> None:
    """Per-frame control sidecar written next to every rendered clip."""
    Path(path).write_text(json.dumps(traj.to_records(), indent=1) + "\n")


def polar_to_cartesian(state) -> np.ndarray:
    """Scene-space light position, z up, elevation measured from the ground plane.

    Accepts a LightState or any ``(theta_deg, phi_deg, r)`` triple.
    """
    if isinstance(state, LightState):
        theta, phi, r = state.position
    else:
        theta, phi, r = state
    if r <= 0:
        raise ValueError("radius must be positive")
    t = math.radians(theta)
    p = math.radians(phi)
    return np.array([r * math.cos(p) * math.cos(t), r * math.cos(p) * math.sin(t), r * math.sin(p)])


def grid_positions(M: int, box: PolarBox, offset_half_step: bool = False) -> list[tuple[float, float]]:
    """The M x M lattice of (theta, phi) points used for grid motions.

    Without offset, theta takes ``k * 360 / M`` and phi spans the box's range
    endpoint-inclusive. With the offset both axes move half a step inwards, so
    theta becomes ``(k + 1/2) * 360 / M`` and phi becomes cell-centred. The
    phi shift is what keeps an offset M=64 lattice disjoint from the M=128 one.
    """
    if M < 2:
        raise ValueError(f"grid needs M >= 2, got {M}")
    k = np.arange(M, dtype=np.float64)
    span = box.theta[1] - box.theta[0]
    phi_lo, phi_hi = box.phi
    if offset_half_step:
        thetas = box.theta[0] + (k + 0.5) * span / M
        phis = phi_lo + (k + 0.5) * (phi_hi - phi_lo) / M
    else:
        thetas = box.theta[0] + k * span / M
        phis = phi_lo + k * (phi_hi - phi_lo) / (M - 1)
    return [(float(t), float(p)) for p in phis for t in thetas]


def _wrap(theta):
    out = np.mod(theta, 360.0)
    # mod of a tiny negative rounds up to exactly 360
    return np.where(out >= 360.0, 0.0, out)


def shortest_arc(start_deg: float, end_deg: float) -> float:
    """Signed angular difference end - start in [-180, 180)."""
    return (end_deg - start_deg + 180.0) % 360.0 - 180.0


def linear_motion(start, end, n_motion: int, r: float) -> np.ndarray:
    """Interpolate (theta, phi) linearly, theta along the shorter arc.

    Returns an ``(n_motion, 3)`` array of (theta, phi, r).
    """
    if n_motion < 2:
        raise ValueError("linear motion needs at least two frames")
    t = np.linspace(0.0, 1.0, n_motion)
    dtheta = shortest_arc(start[0], end[0])
    theta = _wrap(start[0] + t * dtheta)
    phi = start[1] + t * (end[1] - start[1])
    return np.stack([theta, phi, np.full(n_motion, float(r))], axis=1)


def _bezier(ctrl: np.ndarray, t: np.ndarray) -> np.ndarray:
    s = 1.0 - t
    basis = np.stack([s**3, 3 * s**2 * t, 3 * s * t**2, t**3], axis=1)
    return basis @ ctrl


def bezier_motion(ctrl, n_motion: int) -> np.ndarray:
    """Cubic Bezier through four (theta, phi, r) control points, componentwise."""
    ctrl = np.asarray(ctrl, dtype=np.float64)
    if ctrl.shape != (4, 3):
        raise ValueError("bezier_motion takes four (theta, phi, r) control points")
    out = _bezier(ctrl, np.linspace(0.0, 1.0, n_motion))
    out[0], out[-1] = ctrl[0], ctrl[3]
    out[:, 0] = _wrap(out[:, 0])
    return out


def spiral_motion(start, end, turns: float, n_motion: int) -> np.ndarray:
    """Sweep theta by ``turns`` full revolutions while phi and r move linearly."""
    if turns <= 0:
        raise ValueError("spiral needs turns > 0")
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    t = np.linspace(0.0, 1.0, n_motion)
    theta = _wrap(start[0] + turns * 360.0 * t)
    phi = start[1] + t * (end[1] - start[1])
    r = start[2] + t * (end[2] - start[2])
    return np.stack([theta, phi, r], axis=1)


def hybrid_motion(ctrl, turns: float, n_motion: int) -> np.ndarray:
    """Bezier path with a spiral sweep added to its azimuth."""
    if turns < 0:
        raise ValueError("hybrid needs turns >= 0")
    ctrl = np.asarray(ctrl, dtype=np.float64)
    base = bezier_motion(ctrl, n_motion)
    t = np.linspace(0.0, 1.0, n_motion)
    base[:, 0] = _wrap(base[:, 0] + turns * 360.0 * t)
    return base


def _validate_preset(preset) -> tuple[float, float]:
    if isinstance(preset, str):
        if preset not in SCHEDULE_PRESETS:
            raise ValueError(f"unknown schedule preset {preset!r}")
        preset = SCHEDULE_PRESETS[preset]
    floor, peak = (float(v) for v in preset)
    if not 0.0 < floor <= 1.0:
        raise ValueError(f"I_e floor must lie in (0, 1], got {floor}")
    if peak < 0.0:
        raise ValueError(f"I_p max must be non-negative, got {peak}")
    return floor, peak


def schedule_intensities(frame: int, preset=SCHEDULE_PRESETS["default"], dim_frames: int = DIM_FRAMES):
    """(I_e, I_p) for a 1-based frame number under a linear dimming ramp."""
    floor, peak = _validate_preset(preset)
    if frame >= dim_frames:
        return floor, peak
    remaining = (dim_frames - frame) / (dim_frames - 1)
    done = (frame - 1) / (dim_frames - 1)
    # Written as floor + ... so the dimming end lands on the floor exactly.
    return floor + (1.0 - floor) * remaining, peak * done


def apply_schedule(
    positions,
    preset=SCHEDULE_PRESETS["default"],
    motion_start: int = SINGLE_OBJECT_MOTION_START,
    dim_frames: int = DIM_FRAMES,
    kind: str = "linear-grid",
) -> Trajectory:
    """Prefix the motion with static dimming frames and attach intensities.

    ``positions`` are the motion frames only; frames before ``motion_start``
    hold the first motion position.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ValueError("positions must be an (n, 3) array of (theta, phi, r)")
    if motion_start <= dim_frames:
        raise ValueError("motion must start after the dimming frames")
    full = np.concatenate([np.repeat(positions[:1], motion_start - 1, axis=0), positions])
    states = []
    for i, (theta, phi, r) in enumerate(full):
        I_e, I_p = schedule_intensities(i + 1, preset, dim_frames)
        states.append(LightState(float(_wrap(theta)), float(phi), float(r), I_p, I_e))
    return Trajectory(tuple(states), dim_frames=dim_frames, motion_start=motion_start, kind=kind)


def normalize(state: LightState, box: PolarBox, I_p_max: float) -> NormalizedLightState:
    if not box.contains(*state.position):
        raise ValueError(f"light state {state.position} lies outside {box}")
    if I_p_max <= 0:
        raise ValueError("I_p_max must be positive")
    if state.I_p > I_p_max * (1 + 1e-12):
        raise ValueError(f"I_p={state.I_p} exceeds I_p_max={I_p_max}")
    phi_span = box.phi[1] - box.phi[0]
    r_span = box.r[1] - box.r[0]
    return NormalizedLightState(
        theta=(state.theta_deg - box.theta[0]) / (box.theta[1] - box.theta[0]),
        phi=(state.phi_deg - box.phi[0]) / phi_span if phi_span > 0 else 0.5,
        r=(state.r - box.r[0]) / r_span if r_span > 0 else 0.5,
        I_p=min(state.I_p / I_p_max, 1.0),
        I_e=state.I_e,
    )


def denormalize(norm: NormalizedLightState, box: PolarBox, I_p_max: float) -> LightState:
    return LightState(
        theta_deg=box.theta[0] + norm.theta * (box.theta[1] - box.theta[0]),
        phi_deg=box.phi[0] + norm.phi * (box.phi[1] - box.phi[0]),
        r=box.r[0] + norm.r * (box.r[1] - box.r[0]) if box.r[1] > box.r[0] else box.r[0],
        I_p=norm.I_p * I_p_max,
        I_e=norm.I_e,
    )


@dataclass(frozen=True)
class ControlVolume:
    data: np.ndarray = field(repr=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[:3])


def build_control_volume(traj: Trajectory, H: int, W: int, box: PolarBox | None = None,
                         I_p_max: float | None = None) -> ControlVolume:
    """Broadcast each frame's normalized 5-vector over an H x W image."""
    if H < 1 or W < 1:
        raise ValueError("control volume needs H, W >= 1")
    box = box or _infer_box(traj)
    I_p_max = I_p_max or max(max(s.I_p for s in traj.states), 1e-12)
    vectors = np.stack([normalize(s, box, I_p_max).as_array() for s in traj.states])
    data = np.broadcast_to(vectors[:, None, None, :], (traj.n_frames, H, W, 5)).copy()
    return ControlVolume(data)


def _infer_box(traj: Trajectory) -> PolarBox:
    if traj.kind == "linear-grid":
        return PolarBox.single_object()
    return PolarBox.multi_object()


# -- random trajectory sampling ---------------------------------------------

def _sample_polar(rng: np.random.Generator, box: PolarBox) -> np.ndarray:
    theta = rng.uniform(box.theta[0], box.theta[1])
    if theta >= 360.0:
        theta = 0.0
    return np.array([theta, rng.uniform(*box.phi), rng.uniform(*box.r)])


def sample_grid_motion(rng: np.random.Generator, M: int, box: PolarBox, offset_half_step: bool,
                       n_motion: int) -> np.ndarray:
    """A horizontal, vertical or diagonal segment between two lattice points."""
    i0, j0 = int(rng.integers(M)), int(rng.integers(M))
    direction = ("horizontal", "vertical", "diagonal")[int(rng.integers(3))]
    length = int(rng.integers(1, max(1, M // 4) + 1))
    step = length if rng.random() < 0.5 else -length
    di = 0 if direction == "vertical" else step
    dj = 0 if direction == "horizontal" else step
    i1 = (i0 + di) % M
    j1 = j0 + dj if 0 <= j0 + dj < M else j0 - dj
    grid = grid_positions(M, box, offset_half_step)
    start = grid[j0 * M + i0]
    end = grid[j1 * M + i1]
    return linear_motion(start, end, n_motion, box.r[0])


def sample_bezier(rng: np.random.Generator, box: PolarBox, n_motion: int) -> np.ndarray:
    return bezier_motion(np.stack([_sample_polar(rng, box) for _ in range(4)]), n_motion)


def sample_spiral(rng: np.random.Generator, box: PolarBox, n_motion: int) -> np.ndarray:
    start, end = _sample_polar(rng, box), _sample_polar(rng, box)
    return spiral_motion(start, end, float(rng.uniform(0.5, 1.5)), n_motion)


def sample_hybrid(rng: np.random.Generator, box: PolarBox, n_motion: int) -> np.ndarray:
    ctrl = np.stack([_sample_polar(rng, box) for _ in range(4)])
    return hybrid_motion(ctrl, float(rng.uniform(0.25, 1.0)), n_motion)


_SAMPLERS = {"bezier": sample_bezier, "spiral": sample_spiral, "hybrid": sample_hybrid}


def single_object_trajectories(seed: int, count: int, split: str = "train",
                               preset=SCHEDULE_PRESETS["default"]) -> list[Trajectory]:
    """Grid motions on the M=128 train lattice or the offset M=64 test lattice."""
    rng = np.random.default_rng(seed)
    box = PolarBox.single_object()
    M, offset = (TRAIN_GRID_M, False) if split == "train" else (TEST_GRID_M, True)
    n_motion = SINGLE_OBJECT_FRAMES - SINGLE_OBJECT_MOTION_START + 1
    return [
        apply_schedule(sample_grid_motion(rng, M, box, offset, n_motion), preset,
                       motion_start=SINGLE_OBJECT_MOTION_START, kind="linear-grid")
        for _ in range(count)
    ]


def multi_object_kinds(split: str = "train") -> list[str]:
    """Curve categories per scene: 13/13/14 for training, 7 of each for testing."""
    if split == "train":
        return ["bezier"] * 13 + ["spiral"] * 13 + ["hybrid"] * 14
    return ["bezier"] * 7 + ["spiral"] * 7 + ["hybrid"] * 7


def multi_object_trajectories(seed: int, kinds: Sequence[str],
                              preset=SCHEDULE_PRESETS["default"]) -> list[Trajectory]:
    rng = np.random.default_rng(seed)
    box = PolarBox.multi_object()
    n_motion = MULTI_OBJECT_FRAMES - MULTI_OBJECT_MOTION_START + 1
    return [
        apply_schedule(_SAMPLERS[kind](rng, box, n_motion), preset,
                       motion_start=MULTI_OBJECT_MOTION_START, kind=kind)
        for kind in kinds
    ]
