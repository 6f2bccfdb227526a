import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import numpy as np
import pytest

from chunkfuse.model import Chunk, FramePrediction, Pose


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, np.pi)
    K = np.array([
        [0, -axis[2], axis[1]],
        [axis[2], 0, -axis[0]],
        [-axis[1], axis[0], 0],
    ])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def make_chunk(points, confidence=None, chunk_id=0, start_frame=0, centers=None) -> Chunk:
    """Chunk from a (T, H, W, 3) array, identity-ish poses by default."""
    points = np.asarray(points, dtype=float)
    T, H, W, _ = points.shape
    if confidence is None:
        confidence = np.ones((T, H, W))
    confidence = np.asarray(confidence, dtype=float)
    frames = []
    for t in range(T):
        center = np.array([0.0, 0.0, -1.0]) if centers is None else np.asarray(centers[t], float)
        frames.append(
            FramePrediction(
                points=points[t],
                confidence=confidence[t],
                pose=Pose(np.eye(3), center),
                frame_index=start_frame + t,
            )
        )
    return Chunk(chunk_id=chunk_id, start_frame=start_frame,
                 end_frame=start_frame + T - 1, frames=tuple(frames))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
