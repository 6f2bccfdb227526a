"""Core domain types: poses, per-frame predictions, chunks, similarity
transforms, tracklets, and the pipeline configuration.

All types are immutable value objects after construction (arrays are made
read-only), so they can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterable

import numpy as np

from .errors import InvalidConfig

ROTATION_TOL = 1e-9


def _as_readonly(a, shape, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


def check_rotation(R: np.ndarray, tol: float = ROTATION_TOL) -> None:
    """Raise ValueError unless R is orthonormal with det +1 within tol."""
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"rotation not orthonormal (max deviation {err:.3e} > {tol:.0e})")
    det = np.linalg.det(R)
    if abs(det - 1.0) > max(tol, 1e-8):
        raise ValueError(f"rotation determinant {det:.12f} != +1")


@dataclass(frozen=True)
class Pose:
    """Camera pose, camera-to-world convention.

    ``translation`` is therefore the camera center in world coordinates.
    World-to-camera inputs must be inverted before construction.
    """

    rotation: np.ndarray
    translation: np.ndarray
    _tol: float = field(default=ROTATION_TOL, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_readonly(self.rotation, (3, 3), "rotation"))
        object.__setattr__(self, "translation", _as_readonly(self.translation, (3,), "translation"))
        check_rotation(self.rotation, self._tol)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous camera-to-world matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, m, tol: float = ROTATION_TOL) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"pose matrix must be 4x4, got {m.shape}")
        if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 0:
            raise ValueError("pose matrix last row must be exactly (0, 0, 0, 1)")
        return cls(m[:3, :3], m[:3, 3], _tol=tol)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation, _tol=max(self._tol, 1e-8))

    def compose(self, other: "Pose") -> "Pose":
        """Pose equivalent to applying ``other`` first, then ``self``."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            _tol=max(self._tol, other._tol, 1e-8),
        )


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> scale * rotation @ x + translation.

    Closed under composition and inversion; see :meth:`compose` and
    :meth:`invert`.
    """

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", _as_readonly(self.rotation, (3, 3), "rotation"))
        object.__setattr__(self, "translation", _as_readonly(self.translation, (3,), "translation"))
        check_rotation(self.rotation, 1e-8)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, x) -> np.ndarray:
        """Apply to a 3-vector or an (..., 3) array of points."""
        x = np.asarray(x, dtype=np.float64)
        return self.scale * (x @ self.rotation.T) + self.translation

    def apply_pose(self, pose: Pose) -> Pose:
        """Map a camera pose expressed in this transform's source frame."""
        return Pose(
            self.rotation @ pose.rotation,
            self.apply(pose.translation),
            _tol=max(1e-8, pose._tol),
        )

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equivalent to applying ``other`` first, then ``self``."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * (self.rotation @ other.translation) + self.translation,
        )

    def invert(self) -> "SimilarityTransform":
        Rt = self.rotation.T
        inv_s = 1.0 / self.scale
        return SimilarityTransform(inv_s, Rt, -inv_s * (Rt @ self.translation))


def transform_apply(T: SimilarityTransform, x) -> np.ndarray:
    return T.apply(x)


def transform_compose(A: SimilarityTransform, B: SimilarityTransform) -> SimilarityTransform:
    return A.compose(B)


@dataclass(frozen=True)
class FramePrediction:
    """One frame of a chunk-local reconstruction.

    ``points`` is an HxWx3 grid of 3D positions in the chunk gauge;
    ``confidence`` is an HxW grid in [0, 1]. Out-of-range confidence is
    rejected, never clamped. Non-finite points are allowed only where
    confidence is exactly zero.
    """

    points: np.ndarray
    confidence: np.ndarray
    pose: Pose
    frame_index: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        conf = np.asarray(self.confidence, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise ValueError(f"points must be (H, W, 3), got {pts.shape}")
        if conf.shape != pts.shape[:2]:
            raise ValueError(
                f"confidence shape {conf.shape} does not match points grid {pts.shape[:2]}"
            )
        if conf.min() < 0.0 or conf.max() > 1.0:
            raise ValueError("confidence values must lie in [0, 1]")
        bad = ~np.isfinite(pts).all(axis=2) & (conf > 0.0)
        if bad.any():
            raise ValueError("non-finite points are only permitted where confidence == 0")
        pts = pts.copy()
        conf = conf.copy()
        pts.setflags(write=False)
        conf.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(self, "frame_index", int(self.frame_index))

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.points.shape[:2]


@dataclass(frozen=True)
class Chunk:
    """A contiguous window of frames in one chunk-local gauge."""

    chunk_id: int
    start_frame: int
    end_frame: int
    frames: tuple[FramePrediction, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        n = self.end_frame - self.start_frame + 1
        if len(frames) != n:
            raise ValueError(
                f"chunk [{self.start_frame}, {self.end_frame}] needs {n} frames, got {len(frames)}"
            )
        for offset, fp in enumerate(frames):
            if fp.frame_index != self.start_frame + offset:
                raise ValueError("frame indices must be consecutive and match the chunk range")
        shapes = {fp.grid_shape for fp in frames}
        if len(shapes) > 1:
            raise ValueError(f"all frames must share the same grid, got {shapes}")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.frames[0].grid_shape

    def frame(self, frame_index: int) -> FramePrediction:
        if not self.start_frame <= frame_index <= self.end_frame:
            raise IndexError(f"frame {frame_index} outside chunk [{self.start_frame}, {self.end_frame}]")
        return self.frames[frame_index - self.start_frame]

    def frame_range(self) -> range:
        return range(self.start_frame, self.end_frame + 1)


@dataclass(frozen=True)
class Tracklet:
    """A short per-pixel 3D trajectory segment over an overlap window."""

    tracklet_id: int
    source_chunk: int
    pixel: tuple[int, int]
    frames: tuple[int, ...]
    positions: np.ndarray
    confidences: np.ndarray
    mean_confidence: float

    def __post_init__(self):
        frames = tuple(int(f) for f in self.frames)
        pos = np.asarray(self.positions, dtype=np.float64)
        conf = np.asarray(self.confidences, dtype=np.float64)
        if len(frames) < 2:
            raise ValueError("a tracklet needs at least 2 positions to support velocities")
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("tracklet frames must be strictly increasing without duplicates")
        if pos.shape != (len(frames), 3):
            raise ValueError(f"positions must be ({len(frames)}, 3), got {pos.shape}")
        if conf.shape != (len(frames),):
            raise ValueError(f"confidences must be ({len(frames)},), got {conf.shape}")
        pos = pos.copy()
        conf = conf.copy()
        pos.setflags(write=False)
        conf.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "confidences", conf)
        object.__setattr__(self, "pixel", (int(self.pixel[0]), int(self.pixel[1])))
        object.__setattr__(self, "mean_confidence", float(self.mean_confidence))

    def transformed(self, T: SimilarityTransform) -> "Tracklet":
        return Tracklet(
            self.tracklet_id,
            self.source_chunk,
            self.pixel,
            self.frames,
            T.apply(self.positions),
            self.confidences,
            self.mean_confidence,
        )

    def position_at(self, frame_index: int) -> np.ndarray:
        return self.positions[self.frames.index(frame_index)]

    def restrict(self, frames: Iterable[int]) -> "Tracklet":
        wanted = sorted(set(frames) & set(self.frames))
        idx = [self.frames.index(f) for f in wanted]
        return Tracklet(
            self.tracklet_id,
            self.source_chunk,
            self.pixel,
            tuple(wanted),
            self.positions[idx],
            self.confidences[idx],
            self.mean_confidence,
        )


@dataclass(frozen=True)
class PipelineConfig:
    """All thresholds and weights of the cross-chunk pipeline.

    Length thresholds expressed in world units (``gamma_stat``, ``gamma_p``,
    ``min_displacement``) may be left as None, in which case they are
    resolved per chunk pair from the scene scale: ``gamma_stat`` becomes
    ``gamma_stat_frac`` times the pair's median camera-to-point distance,
    ``gamma_p`` becomes ``gamma_p_factor`` times the mean per-frame dynamic
    displacement, and ``min_displacement`` inherits the resolved
    ``gamma_stat``.
    """

    chunk_length: int = 16
    overlap: int = 4
    gamma_c: float = 0.5
    gamma_stat: float | None = None
    gamma_stat_frac: float = 0.01
    gamma_p: float | None = None
    gamma_p_factor: float = 3.0
    lambda_traj: float = 1.0
    lambda_vel: float = 0.5
    lambda_dir: float = 0.5
    traj_cap: float = 0.05
    dir_cap: float = 0.5
    cost_max: float = 1.0
    lambda_cam: float = 1.0
    lambda_sm: float = 1.0
    boundary_window: int | None = None
    min_displacement: float | None = None
    seed_stride: int = 2
    min_static_anchors: int = 50
    min_dynamic_matches: int = 8
    static_rms_cap: float = 0.1
    refine_scale: bool = False
    association_rounds: int = 2

    def __post_init__(self):
        if self.overlap < 2 or self.overlap >= self.chunk_length:
            raise InvalidConfig(
                f"need 2 <= overlap < chunk_length, got overlap={self.overlap}, "
                f"chunk_length={self.chunk_length}"
            )
        positive = {
            "gamma_c": self.gamma_c,
            "gamma_stat_frac": self.gamma_stat_frac,
            "gamma_p_factor": self.gamma_p_factor,
            "traj_cap": self.traj_cap,
            "dir_cap": self.dir_cap,
            "cost_max": self.cost_max,
            "static_rms_cap": self.static_rms_cap,
            "seed_stride": self.seed_stride,
        }
        for name in ("gamma_stat", "gamma_p", "min_displacement"):
            value = getattr(self, name)
            if value is not None:
                positive[name] = value
        for name, value in positive.items():
            if value <= 0:
                raise InvalidConfig(f"{name} must be > 0, got {value}")
        weights = {
            "lambda_traj": self.lambda_traj,
            "lambda_vel": self.lambda_vel,
            "lambda_dir": self.lambda_dir,
            "lambda_cam": self.lambda_cam,
            "lambda_sm": self.lambda_sm,
        }
        for name, value in weights.items():
            if value < 0:
                raise InvalidConfig(f"{name} must be >= 0, got {value}")
        if self.lambda_traj + self.lambda_vel + self.lambda_dir <= 0:
            raise InvalidConfig("lambda_traj + lambda_vel + lambda_dir must be > 0")
        if self.boundary_window is not None and self.boundary_window < 1:
            raise InvalidConfig(f"boundary_window must be >= 1, got {self.boundary_window}")
        if self.min_static_anchors < 3:
            raise InvalidConfig("min_static_anchors must be >= 3")
        if self.min_dynamic_matches < 1:
            raise InvalidConfig("min_dynamic_matches must be >= 1")
        if self.association_rounds < 1:
            raise InvalidConfig("association_rounds must be >= 1")

    @property
    def boundary_half_width(self) -> int:
        return self.boundary_window if self.boundary_window is not None else self.overlap

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
