"""Deterministic synthetic dynamic scenes with analytic ground truth.

Replaces the frozen neural local predictor: generates tracked per-pixel
pointmaps, camera poses, visibility, and per-chunk local predictions with
controllable gauges, noise, and confidence corruption. Pointmaps are
ray-cast against analytic surfaces (bumped wall, spheres, boxes); each
pixel is bound to the nearest surface point along its first-frame ray and
tracked through time, so per-pixel point tracks are exact physical
trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .chunking import plan_chunks
from .errors import InvalidSpec
from .model import Chunk, FramePrediction, PipelineConfig, Pose, SimilarityTransform

VISIBLE_CONF = (0.7, 1.0)
HIDDEN_CONF = (0.0, 0.05)
CORRUPT_CONF = (0.0, 0.02)


# ---------------------------------------------------------------------------
# Scene description


@dataclass(frozen=True)
class BackgroundSpec:
    """Bumped wall: z = distance - amplitude * sin(fx x + px) * cos(fy y + py)."""

    distance: float = 6.0
    amplitude: float = 0.2
    frequency: float = 1.1
    phase: tuple[float, float] = (0.4, 1.1)

    def height(self, x, y):
        px, py = self.phase
        return self.distance - self.amplitude * np.sin(self.frequency * x + px) * np.cos(
            self.frequency * y + py
        )


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str = "linear"
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 1.0
    angular_rate: float = 0.1
    phase: float = 0.0
    plane: str = "xy"
    times: tuple[float, ...] = ()
    points: tuple[tuple[float, float, float], ...] = ()

    def offsets(self, num_frames: int) -> np.ndarray:
        """Displacement from the frame-0 position, (num_frames, 3)."""
        t = np.arange(num_frames, dtype=np.float64)
        if self.kind == "linear":
            return t[:, None] * np.asarray(self.velocity)
        if self.kind == "circular":
            axes = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
            if self.plane not in axes:
                raise InvalidSpec(f"unknown circular plane {self.plane!r}")
            i, j = axes[self.plane]
            ang = self.angular_rate * t + self.phase
            out = np.zeros((num_frames, 3))
            out[:, i] = self.radius * (np.cos(ang) - math.cos(self.phase))
            out[:, j] = self.radius * (np.sin(ang) - math.sin(self.phase))
            return out
        if self.kind == "piecewise":
            if len(self.times) < 2 or len(self.times) != len(self.points):
                raise InvalidSpec("piecewise trajectory needs matching times and points, >= 2")
            times = np.asarray(self.times, dtype=np.float64)
            pts = np.asarray(self.points, dtype=np.float64)
            out = np.stack([np.interp(t, times, pts[:, k]) for k in range(3)], axis=1)
            return out - out[0]
        raise InvalidSpec(f"unknown trajectory kind {self.kind!r}")


@dataclass(frozen=True)
class ObjectSpec:
    shape: str = "sphere"
    size: tuple[float, float, float] = (0.5, 0.5, 0.5)
    position: tuple[float, float, float] = (0.0, 0.0, 4.0)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    visible_ranges: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if self.shape not in ("sphere", "box"):
            raise InvalidSpec(f"unknown object shape {self.shape!r}")
        size = self.size
        if isinstance(size, (int, float)):
            size = (float(size),) * 3
        object.__setattr__(self, "size", tuple(float(s) for s in size))
        if min(self.size) <= 0:
            raise InvalidSpec("object size must be positive")

    def forced_visible(self, t: int) -> bool:
        if self.visible_ranges is None:
            return True
        return any(lo <= t <= hi for lo, hi in self.visible_ranges)


@dataclass(frozen=True)
class CameraSpec:
    kind: str = "orbit"
    target: tuple[float, float, float] = (0.0, 0.0, 4.0)
    start: tuple[float, float, float] = (0.0, 0.0, -1.0)
    rate: float = 0.01
    bob: float = 0.0
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    accel: tuple[float, float, float] = (0.0, 0.0, 0.0)
    step: float = 0.02
    fov_deg: float = 55.0

    def positions(self, num_frames: int, rng: np.random.Generator) -> np.ndarray:
        t = np.arange(num_frames, dtype=np.float64)
        start = np.asarray(self.start, dtype=np.float64)
        target = np.asarray(self.target, dtype=np.float64)
        if self.kind == "orbit":
            arm = start - target
            if np.linalg.norm(arm) < 1e-9:
                raise InvalidSpec("orbit camera must start away from its target")
            ang = self.rate * t
            cos, sin = np.cos(ang), np.sin(ang)
            # rotate the arm about the world y axis, plus a vertical bob
            x = cos * arm[0] + sin * arm[2]
            z = -sin * arm[0] + cos * arm[2]
            pos = np.stack([x, np.full_like(x, arm[1]), z], axis=1) + target
            pos[:, 1] += self.bob * np.sin(2.0 * ang)
            return pos
        if self.kind == "dolly":
            v = np.asarray(self.velocity, dtype=np.float64)
            a = np.asarray(self.accel, dtype=np.float64)
            return start + t[:, None] * v + 0.5 * t[:, None] ** 2 * a
        if self.kind == "random_walk":
            steps = rng.uniform(-self.step, self.step, size=(num_frames, 3))
            steps[0] = 0.0
            return start + np.cumsum(steps, axis=0)
        raise InvalidSpec(f"unknown camera kind {self.kind!r}")


@dataclass(frozen=True)
class GaugeSpec:
    """Per-chunk gauge randomization bounds."""

    scale_range: tuple[float, float] = (1.0, 1.0)
    rotation_max: float = 0.0
    translation_max: float = 0.0

    def __post_init__(self):
        lo, hi = self.scale_range
        if lo <= 0 or hi < lo:
            raise InvalidSpec(f"bad gauge scale range {self.scale_range}")
        if self.rotation_max < 0 or self.translation_max < 0:
            raise InvalidSpec("gauge bounds must be non-negative")


@dataclass(frozen=True)
class SceneSpec:
    num_frames: int = 32
    height: int = 24
    width: int = 24
    seed: int = 0
    background: BackgroundSpec = field(default_factory=BackgroundSpec)
    objects: tuple[ObjectSpec, ...] = ()
    camera: CameraSpec = field(default_factory=CameraSpec)
    noise_sigma: float = 0.0
    corruption_rate: float = 0.0
    static_corruption: float = 0.0
    static_window: tuple[int, int, int, int] | None = None
    pose_noise: float = 0.0
    gauge: GaugeSpec = field(default_factory=GaugeSpec)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.num_frames < 1:
            raise InvalidSpec("num_frames must be >= 1")
        if self.height < 2 or self.width < 2:
            raise InvalidSpec("grid must be at least 2x2")
        if not 10.0 <= self.camera.fov_deg <= 130.0:
            raise InvalidSpec("camera fov must be within [10, 130] degrees")
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise InvalidSpec("corruption_rate must lie in [0, 1]")
        if not 0.0 <= self.static_corruption <= 1.0:
            raise InvalidSpec("static_corruption must lie in [0, 1]")
        if self.static_window is not None:
            object.__setattr__(self, "static_window", tuple(int(v) for v in self.static_window))
            r0, r1, c0, c1 = self.static_window
            if not (0 <= r0 < r1 <= self.height and 0 <= c0 < c1 <= self.width):
                raise InvalidSpec(f"static_window {self.static_window} outside the grid")
        if self.noise_sigma < 0 or self.pose_noise < 0:
            raise InvalidSpec("noise levels must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        data = dict(data)
        if "background" in data:
            bg = dict(data["background"])
            if "phase" in bg:
                bg["phase"] = tuple(bg["phase"])
            data["background"] = BackgroundSpec(**bg)
        if "camera" in data:
            data["camera"] = CameraSpec(**{
                k: tuple(v) if isinstance(v, list) else v for k, v in data["camera"].items()
            })
        if "gauge" in data:
            g = dict(data["gauge"])
            if "scale_range" in g:
                g["scale_range"] = tuple(g["scale_range"])
            data["gauge"] = GaugeSpec(**g)
        if data.get("static_window") is not None:
            data["static_window"] = tuple(data["static_window"])
        if "objects" in data:
            objs = []
            for o in data["objects"]:
                o = dict(o)
                if "trajectory" in o:
                    tr = dict(o["trajectory"])
                    for key in ("velocity",):
                        if key in tr:
                            tr[key] = tuple(tr[key])
                    if "times" in tr:
                        tr["times"] = tuple(tr["times"])
                    if "points" in tr:
                        tr["points"] = tuple(tuple(p) for p in tr["points"])
                    o["trajectory"] = TrajectorySpec(**tr)
                if "position" in o:
                    o["position"] = tuple(o["position"])
                if "size" in o and isinstance(o["size"], list):
                    o["size"] = tuple(o["size"])
                if o.get("visible_ranges") is not None:
                    o["visible_ranges"] = tuple(tuple(r) for r in o["visible_ranges"])
                objs.append(ObjectSpec(**o))
            data["objects"] = tuple(objs)
        return cls(**data)


# ---------------------------------------------------------------------------
# Ray casting


def _look_at_rotation(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    forward = target - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise InvalidSpec("camera position coincides with its target")
    forward = forward / norm
    up_hint = np.array([0.0, 1.0, 0.0])
    right = np.cross(up_hint, forward)
    if np.linalg.norm(right) < 1e-9:
        up_hint = np.array([0.0, 0.0, 1.0])
        right = np.cross(up_hint, forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def _pixel_directions(height: int, width: int, fov_deg: float) -> np.ndarray:
    """Unit ray directions in the camera frame, (H, W, 3), z forward."""
    focal = 0.5 * (width - 1) / math.tan(math.radians(fov_deg) / 2.0)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    r, c = np.mgrid[0:height, 0:width]
    d = np.stack([(c - cx) / focal, (r - cy) / focal, np.ones_like(c, dtype=np.float64)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def _ray_sphere(origin, dirs, center, radius):
    oc = origin - center
    b = (dirs * oc).sum(axis=-1)
    disc = b**2 - ((oc**2).sum() - radius**2)
    s = np.full(dirs.shape[:-1], np.inf)
    hit = disc >= 0
    root = np.sqrt(np.where(hit, disc, 0.0))
    near = -b - root
    far = -b + root
    s = np.where(hit & (near > 1e-9), near, s)
    s = np.where(hit & (near <= 1e-9) & (far > 1e-9), far, s)
    return s


def _ray_box(origin, dirs, center, half):
    lo = center - np.asarray(half)
    hi = center + np.asarray(half)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origin) * inv
        t1 = (hi - origin) * inv
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    # rays parallel to a slab: inside -> (-inf, inf), outside -> miss
    par = np.abs(dirs) < 1e-15
    inside = (origin >= lo) & (origin <= hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    enter = tmin.max(axis=-1)
    exit_ = tmax.min(axis=-1)
    s = np.full(dirs.shape[:-1], np.inf)
    hit = (enter <= exit_) & (exit_ > 1e-9)
    near = np.where(enter > 1e-9, enter, exit_)
    return np.where(hit, near, s)


def _ray_background(origin, dirs, bg: BackgroundSpec, s_cap):
    """First intersection with the bumped wall via sign scan + bisection."""
    flat = dirs.reshape(-1, 3)
    n = len(flat)
    s_out = np.full(n, np.inf)
    dz = flat[:, 2]
    towards = dz > 1e-12
    if not towards.any():
        return s_out.reshape(dirs.shape[:-1])
    idx = np.nonzero(towards)[0]
    d = flat[idx]
    s_flat = (bg.distance + abs(bg.amplitude) + 1.0 - origin[2]) / d[:, 2]
    cap = np.broadcast_to(np.asarray(s_cap, dtype=np.float64).ravel(), (n,))[idx] \
        if np.ndim(s_cap) else np.full(len(idx), float(s_cap))
    s_hi = np.minimum(s_flat, np.where(np.isfinite(cap), cap, s_flat))
    s_hi = np.maximum(s_hi, 1e-9)

    def g(s):
        p = origin + s[:, None] * d
        return p[:, 2] - bg.height(p[:, 0], p[:, 1])

    steps = 96
    grid = np.linspace(0.0, 1.0, steps + 1)
    lo = np.zeros(len(idx))
    hi = np.full(len(idx), np.nan)
    prev = g(lo)
    found = np.zeros(len(idx), dtype=bool)
    for k in range(1, steps + 1):
        s_k = grid[k] * s_hi
        val = g(s_k)
        new = ~found & (prev <= 0) & (val > 0)
        lo = np.where(new, grid[k - 1] * s_hi, lo)
        hi = np.where(new, s_k, hi)
        found |= new
        prev = val
    if found.any():
        flo = lo[found]
        fhi = hi[found]
        dd = d[found]

        def gf(s):
            p = origin + s[:, None] * dd
            return p[:, 2] - bg.height(p[:, 0], p[:, 1])

        for _ in range(60):
            mid = 0.5 * (flo + fhi)
            val = gf(mid)
            neg = val <= 0
            flo = np.where(neg, mid, flo)
            fhi = np.where(neg, fhi, mid)
        s_root = 0.5 * (flo + fhi)
        tmp = np.full(len(idx), np.inf)
        tmp[found] = s_root
        s_out[idx] = tmp
    return s_out.reshape(dirs.shape[:-1])


# ---------------------------------------------------------------------------
# Ground truth


@dataclass
class GroundTruth:
    """World-frame tracked pointmaps, poses, binding, and visibility."""

    spec: SceneSpec
    points: np.ndarray
    poses: list[Pose]
    object_ids: np.ndarray
    visible: np.ndarray
    scene_scale: float

    @property
    def num_frames(self) -> int:
        return self.points.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.points.shape[1:3]

    def trajectory_table(self, stride: int = 1) -> dict[tuple[int, int], np.ndarray]:
        H, W = self.grid_shape
        return {
            (r, c): self.points[:, r, c, :]
            for r in range(0, H, stride)
            for c in range(0, W, stride)
        }

    def centers(self) -> np.ndarray:
        return np.stack([p.center for p in self.poses])


def _object_offsets(spec: SceneSpec) -> np.ndarray:
    if not spec.objects:
        return np.zeros((0, spec.num_frames, 3))
    return np.stack([o.trajectory.offsets(spec.num_frames) for o in spec.objects])


def _cast_all(origin, dirs, spec: SceneSpec, offsets_t: np.ndarray, s_cap=np.inf):
    """Nearest hit over background and all objects: (s, owner id).

    Owner is -1 for the background, the object index otherwise.
    """
    best_s = _ray_background(origin, dirs, spec.background, s_cap)
    best_id = np.where(np.isfinite(best_s), -1, -2)
    for m, obj in enumerate(spec.objects):
        center = np.asarray(obj.position) + offsets_t[m]
        if obj.shape == "sphere":
            s = _ray_sphere(origin, dirs, center, obj.size[0])
        else:
            s = _ray_box(origin, dirs, center, obj.size)
        closer = s < best_s
        best_s = np.where(closer, s, best_s)
        best_id = np.where(closer, m, best_id)
    return best_s, best_id


def generate(spec: SceneSpec) -> GroundTruth:
    """Deterministic ground truth: same spec and seed, same bits."""
    if not spec.objects and spec.background.amplitude == 0.0 and spec.camera.kind == "dolly" \
            and spec.camera.velocity == (0.0, 0.0, 0.0) and spec.camera.accel == (0.0, 0.0, 0.0):
        # A featureless static wall with a static camera carries no scene
        # content at all; treat as an authoring error.
        raise InvalidSpec("scene is empty: no objects and no background relief or camera motion")
    ss = np.random.SeedSequence(spec.seed)
    cam_rng = np.random.default_rng(ss.spawn(1)[0])

    positions = spec.camera.positions(spec.num_frames, cam_rng)
    target = np.asarray(spec.camera.target, dtype=np.float64)
    wall_limit = spec.background.distance - abs(spec.background.amplitude)
    if (positions[:, 2] >= wall_limit - 0.25).any():
        raise InvalidSpec("camera path runs into the background wall")
    poses = [Pose(_look_at_rotation(p, target), p) for p in positions]

    offsets = _object_offsets(spec)
    dirs_cam = _pixel_directions(spec.height, spec.width, spec.camera.fov_deg)
    R0 = poses[0].rotation
    dirs0 = dirs_cam @ R0.T
    o0 = positions[0]
    s0, owner = _cast_all(o0, dirs0, spec, offsets[:, 0] if spec.objects else offsets[:, :0])
    if not np.isfinite(s0).all():
        raise InvalidSpec("some pixels hit no surface; widen the background or narrow the fov")
    bound = o0 + s0[..., None] * dirs0

    points = np.empty((spec.num_frames, spec.height, spec.width, 3))
    for t in range(spec.num_frames):
        disp = np.zeros((spec.height, spec.width, 3))
        for m in range(len(spec.objects)):
            mask = owner == m
            if mask.any():
                disp[mask] = offsets[m, t]
        points[t] = bound + disp

    cam_centers = positions
    dists = np.linalg.norm(points - cam_centers[:, None, None, :], axis=-1)
    scene_scale = float(np.median(dists))
    tol = 1e-6 * scene_scale

    visible = np.zeros((spec.num_frames, spec.height, spec.width), dtype=bool)
    focal = 0.5 * (spec.width - 1) / math.tan(math.radians(spec.camera.fov_deg) / 2.0)
    cy, cx = (spec.height - 1) / 2.0, (spec.width - 1) / 2.0
    for t in range(spec.num_frames):
        o = positions[t]
        R = poses[t].rotation
        rel = (points[t] - o) @ R
        z = rel[..., 2]
        in_front = z > 1e-6
        with np.errstate(divide="ignore", invalid="ignore"):
            u = cx + focal * rel[..., 0] / z
            v = cy + focal * rel[..., 1] / z
        in_frame = in_front & (u >= -0.5) & (u <= spec.width - 0.5) & (v >= -0.5) & (v <= spec.height - 0.5)
        dist = np.linalg.norm(points[t] - o, axis=-1)
        rays = (points[t] - o) / np.maximum(dist, 1e-12)[..., None]
        s_hit, _ = _cast_all(o, rays, spec, offsets[:, t] if spec.objects else offsets[:, :0], s_cap=dist + tol)
        unoccluded = s_hit >= dist - tol
        vis = in_frame & unoccluded
        for m, obj in enumerate(spec.objects):
            if not obj.forced_visible(t):
                vis &= owner != m
        visible[t] = vis

    return GroundTruth(
        spec=spec,
        points=points,
        poses=poses,
        object_ids=owner.astype(np.int32),
        visible=visible,
        scene_scale=scene_scale,
    )


# ---------------------------------------------------------------------------
# Chunk emission


@dataclass
class EmittedChunks:
    """Planned chunk ranges, their true gauges, and a lazy chunk stream."""

    plan: list[tuple[int, int]]
    gauges: list[SimilarityTransform]
    chunks: Iterator[Chunk]


def _random_gauge(rng: np.random.Generator, gauge: GaugeSpec, scene_scale: float) -> SimilarityTransform:
    lo, hi = gauge.scale_range
    scale = float(rng.uniform(lo, hi))
    if gauge.rotation_max > 0:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0.0, gauge.rotation_max)
        K = np.array([
            [0, -axis[2], axis[1]],
            [axis[2], 0, -axis[0]],
            [-axis[1], axis[0], 0],
        ])
        R = np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)
    else:
        R = np.eye(3)
    t = rng.uniform(-1.0, 1.0, size=3) * gauge.translation_max * scene_scale
    return SimilarityTransform(scale, R, t)


def emit_chunks(gt: GroundTruth, cfg: PipelineConfig, spec: SceneSpec) -> EmittedChunks:
    """Local predictions per planned chunk, in randomized chunk gauges.

    Gaussian point noise and camera-center noise are applied in the chunk
    gauge (scaled by the gauge scale, so they stay a fixed fraction of the
    scene scale as seen by that chunk); a per-chunk random pixel fraction
    has its confidence corrupted to near zero. ``static_corruption``
    additionally suppresses a fixed background pixel subset in every chunk,
    mimicking a textureless wall the local predictor never trusts. The
    sampled gauges are returned alongside for evaluation.
    """
    plan = plan_chunks(gt.num_frames, cfg.chunk_length, cfg.overlap)
    ss = np.random.SeedSequence(spec.seed)
    children = ss.spawn(5)
    gauge_rng = np.random.default_rng(children[2])
    noise_rng = np.random.default_rng(children[3])
    gauges = [_random_gauge(gauge_rng, spec.gauge, gt.scene_scale) for _ in plan]

    static_mask = np.zeros(gt.grid_shape, dtype=bool)
    if spec.static_corruption > 0:
        wall_rng = np.random.default_rng(children[4])
        corruptible = gt.object_ids == -1
        if spec.static_window is not None:
            r0, r1, c0, c1 = spec.static_window
            corruptible = corruptible.copy()
            corruptible[r0:r1, c0:c1] = False
        bg_rows, bg_cols = np.nonzero(corruptible)
        count = int(round(spec.static_corruption * len(bg_rows)))
        if count:
            pick = wall_rng.permutation(len(bg_rows))[:count]
            static_mask[bg_rows[pick], bg_cols[pick]] = True

    def stream() -> Iterator[Chunk]:
        H, W = gt.grid_shape
        for k, (start, end) in enumerate(plan):
            g = gauges[k]
            n = end - start + 1
            pts = g.apply(gt.points[start : end + 1])
            sigma = spec.noise_sigma * gt.scene_scale * g.scale
            if sigma > 0:
                pts = pts + noise_rng.normal(0.0, sigma, size=pts.shape)
            vis = gt.visible[start : end + 1]
            conf = np.where(
                vis,
                noise_rng.uniform(*VISIBLE_CONF, size=vis.shape),
                noise_rng.uniform(*HIDDEN_CONF, size=vis.shape),
            )
            if spec.corruption_rate > 0:
                flat = noise_rng.permutation(H * W)
                count = int(round(spec.corruption_rate * H * W))
                if count:
                    sel = np.zeros(H * W, dtype=bool)
                    sel[flat[:count]] = True
                    sel = sel.reshape(H, W)
                    conf[:, sel] = noise_rng.uniform(*CORRUPT_CONF, size=(n, int(sel.sum())))
            if static_mask.any():
                conf[:, static_mask] = noise_rng.uniform(
                    *CORRUPT_CONF, size=(n, int(static_mask.sum()))
                )
            frames = []
            for off in range(n):
                pose = g.apply_pose(gt.poses[start + off])
                if spec.pose_noise > 0:
                    jitter = noise_rng.normal(
                        0.0, spec.pose_noise * gt.scene_scale * g.scale, size=3
                    )
                    pose = Pose(pose.rotation, pose.translation + jitter)
                frames.append(
                    FramePrediction(
                        points=pts[off],
                        confidence=conf[off],
                        pose=pose,
                        frame_index=start + off,
                    )
                )
            yield Chunk(chunk_id=k, start_frame=start, end_frame=end, frames=tuple(frames))

    return EmittedChunks(plan=plan, gauges=gauges, chunks=stream())


def pixel_identity_truth(tracklets_i, tracklets_j) -> dict[int, int]:
    """Ground-truth correspondence for oracle scenes: same seed pixel.

    Every chunk tracks the same frame-0 seed grid, so the true partner of a
    tracklet is the opposite chunk's tracklet at the same pixel.
    """
    by_pixel = {t.pixel: t.tracklet_id for t in tracklets_j}
    return {
        t.tracklet_id: by_pixel[t.pixel]
        for t in tracklets_i
        if t.pixel in by_pixel
    }
