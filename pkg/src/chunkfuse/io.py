"""Container file format, configuration files, and trajectory export.

A container is a directory holding ``manifest.json`` plus raw binary
arrays: 32-bit floats, little-endian, row-major. Chunk containers carry
``points`` [T][H][W][3], ``confidence`` [T][H][W], and ``poses`` [T][4][4]
(camera-to-world, last row exactly 0,0,0,1). Readers reject unknown format
versions and any shape or byte-count mismatch.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import InvalidConfig, InvalidSpec, MalformedContainer
from .fusion import FusedScene, Trajectory
from .model import Chunk, FramePrediction, PipelineConfig, Pose, SimilarityTransform
from .synthetic import GroundTruth, SceneSpec

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
POSE_STORAGE_TOL = 1e-4


# ---------------------------------------------------------------------------
# Raw arrays and manifests


def _write_array(directory: Path, name: str, data: np.ndarray) -> dict:
    rel = f"{name}.bin"
    arr = np.ascontiguousarray(data, dtype="<f4")
    arr.tofile(directory / rel)
    return {
        "name": name,
        "dtype": "float32",
        "shape": list(arr.shape),
        "path": rel,
        "byte_order": "little",
    }


def _read_array(directory: Path, entry: dict) -> np.ndarray:
    for key in ("name", "dtype", "shape", "path", "byte_order"):
        if key not in entry:
            raise MalformedContainer(f"array entry missing field {key!r}: {entry}")
    name = entry["name"]
    if entry["dtype"] != "float32":
        raise MalformedContainer(f"array {name!r}: unsupported dtype {entry['dtype']!r}")
    if entry["byte_order"] != "little":
        raise MalformedContainer(f"array {name!r}: unsupported byte order {entry['byte_order']!r}")
    path = directory / entry["path"]
    if not path.is_file():
        raise MalformedContainer(f"array {name!r}: missing file {entry['path']!r}")
    shape = tuple(int(s) for s in entry["shape"])
    expected = int(np.prod(shape)) * 4
    actual = path.stat().st_size
    if actual != expected:
        raise MalformedContainer(
            f"array {name!r}: file {entry['path']!r} has {actual} bytes, expected {expected}"
        )
    data = np.fromfile(path, dtype="<f4").reshape(shape)
    return data.astype(np.float64)


def _load_manifest(directory: Path) -> dict:
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.is_file():
        raise MalformedContainer(f"no {MANIFEST_NAME} in {directory}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise MalformedContainer(f"manifest is not valid JSON: {e}") from e
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise MalformedContainer(f"unknown format_version {version!r}, expected {FORMAT_VERSION}")
    return manifest


def _array_map(manifest: dict) -> dict[str, dict]:
    entries = manifest.get("arrays")
    if not isinstance(entries, list):
        raise MalformedContainer("manifest has no array list")
    return {e.get("name"): e for e in entries}


# ---------------------------------------------------------------------------
# Chunk containers


def write_chunk(chunk: Chunk, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    points = np.stack([fp.points for fp in chunk.frames])
    confidence = np.stack([fp.confidence for fp in chunk.frames])
    poses = np.stack([fp.pose.matrix() for fp in chunk.frames])
    poses[:, 3, :] = np.array([0.0, 0.0, 0.0, 1.0])
    H, W = chunk.grid_shape
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "chunk",
        "chunk_id": chunk.chunk_id,
        "start_frame": chunk.start_frame,
        "end_frame": chunk.end_frame,
        "height": H,
        "width": W,
        "arrays": [
            _write_array(directory, "points", points),
            _write_array(directory, "confidence", confidence),
            _write_array(directory, "poses", poses),
        ],
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n")


def read_chunk(directory) -> Chunk:
    """Read and re-validate a chunk container; byte-exact round-trip."""
    directory = Path(directory)
    manifest = _load_manifest(directory)
    for key in ("chunk_id", "start_frame", "end_frame", "height", "width"):
        if key not in manifest:
            raise MalformedContainer(f"manifest missing field {key!r}")
    start = int(manifest["start_frame"])
    end = int(manifest["end_frame"])
    H, W = int(manifest["height"]), int(manifest["width"])
    T = end - start + 1
    if T < 1:
        raise MalformedContainer(f"empty frame range [{start}, {end}]")

    arrays = _array_map(manifest)
    expected_shapes = {
        "points": (T, H, W, 3),
        "confidence": (T, H, W),
        "poses": (T, 4, 4),
    }
    data = {}
    for name, shape in expected_shapes.items():
        if name not in arrays:
            raise MalformedContainer(f"manifest missing required array {name!r}")
        got = tuple(int(s) for s in arrays[name]["shape"])
        if got != shape:
            raise MalformedContainer(f"array {name!r}: shape {list(got)} does not match {list(shape)}")
        data[name] = _read_array(directory, arrays[name])

    frames = []
    for k in range(T):
        m = data["poses"][k]
        if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 0:
            raise MalformedContainer(f"pose {k}: last row must be exactly (0, 0, 0, 1)")
        try:
            pose = Pose(m[:3, :3], m[:3, 3], _tol=POSE_STORAGE_TOL)
            frames.append(
                FramePrediction(
                    points=data["points"][k],
                    confidence=data["confidence"][k],
                    pose=pose,
                    frame_index=start + k,
                )
            )
        except ValueError as e:
            raise MalformedContainer(f"frame {start + k}: {e}") from e
    try:
        return Chunk(
            chunk_id=int(manifest["chunk_id"]),
            start_frame=start,
            end_frame=end,
            frames=tuple(frames),
        )
    except ValueError as e:
        raise MalformedContainer(str(e)) from e


def chunk_dirs(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise MalformedContainer(f"{root} is not a directory")
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / MANIFEST_NAME).is_file())
    if not dirs:
        raise MalformedContainer(f"no chunk containers under {root}")
    return dirs


def iter_chunks(root) -> Iterator[Chunk]:
    """Lazily read chunk containers in name order."""
    for d in chunk_dirs(root):
        yield read_chunk(d)


class StreamingFrameWriter:
    """Writes fused frames to a container as they arrive.

    Appends each frame's arrays to the binary files immediately, so the
    fusion stage never holds more than its two resident chunks;
    :meth:`finish` writes the manifest.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._files = {
            name: open(self.directory / f"{name}.bin", "wb")
            for name in ("points", "confidence", "poses")
        }
        self._count = 0
        self._grid: tuple[int, int] | None = None
        self._start: int | None = None

    def __call__(self, fp: FramePrediction) -> None:
        if self._start is None:
            self._start = fp.frame_index
            self._grid = fp.grid_shape
        self._files["points"].write(np.ascontiguousarray(fp.points, dtype="<f4").tobytes())
        self._files["confidence"].write(np.ascontiguousarray(fp.confidence, dtype="<f4").tobytes())
        m = fp.pose.matrix()
        m[3, :] = np.array([0.0, 0.0, 0.0, 1.0])
        self._files["poses"].write(np.ascontiguousarray(m, dtype="<f4").tobytes())
        self._count += 1

    def finish(self) -> None:
        for f in self._files.values():
            f.close()
        if self._count == 0 or self._grid is None or self._start is None:
            raise ValueError("no frames were written")
        H, W = self._grid
        T = self._count
        manifest = {
            "format_version": FORMAT_VERSION,
            "kind": "chunk",
            "chunk_id": 0,
            "start_frame": self._start,
            "end_frame": self._start + T - 1,
            "height": H,
            "width": W,
            "arrays": [
                {"name": "points", "dtype": "float32", "shape": [T, H, W, 3],
                 "path": "points.bin", "byte_order": "little"},
                {"name": "confidence", "dtype": "float32", "shape": [T, H, W],
                 "path": "confidence.bin", "byte_order": "little"},
                {"name": "poses", "dtype": "float32", "shape": [T, 4, 4],
                 "path": "poses.bin", "byte_order": "little"},
            ],
        }
        (self.directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n")


# ---------------------------------------------------------------------------
# Ground-truth containers


def write_ground_truth(gt: GroundTruth, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    poses = np.stack([p.matrix() for p in gt.poses])
    H, W = gt.grid_shape
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "ground_truth",
        "chunk_id": -1,
        "start_frame": 0,
        "end_frame": gt.num_frames - 1,
        "height": H,
        "width": W,
        "scene_scale": gt.scene_scale,
        "arrays": [
            _write_array(directory, "points", gt.points),
            _write_array(directory, "poses", poses),
            _write_array(directory, "object_ids", gt.object_ids.astype(np.float64)),
            _write_array(directory, "visible", gt.visible.astype(np.float64)),
        ],
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n")
    (directory / "scene_spec.json").write_text(json.dumps(spec_to_dict(gt.spec), indent=1) + "\n")


def read_ground_truth(directory) -> GroundTruth:
    directory = Path(directory)
    manifest = _load_manifest(directory)
    if manifest.get("kind") != "ground_truth":
        raise MalformedContainer(f"expected a ground_truth container, got kind={manifest.get('kind')!r}")
    T = int(manifest["end_frame"]) - int(manifest["start_frame"]) + 1
    H, W = int(manifest["height"]), int(manifest["width"])
    arrays = _array_map(manifest)
    expected = {
        "points": (T, H, W, 3),
        "poses": (T, 4, 4),
        "object_ids": (H, W),
        "visible": (T, H, W),
    }
    data = {}
    for name, shape in expected.items():
        if name not in arrays:
            raise MalformedContainer(f"manifest missing required array {name!r}")
        got = tuple(int(s) for s in arrays[name]["shape"])
        if got != shape:
            raise MalformedContainer(f"array {name!r}: shape {list(got)} does not match {list(shape)}")
        data[name] = _read_array(directory, arrays[name])
    poses = [Pose(m[:3, :3], m[:3, 3], _tol=POSE_STORAGE_TOL) for m in data["poses"]]
    spec_path = directory / "scene_spec.json"
    spec = SceneSpec.from_dict(json.loads(spec_path.read_text())) if spec_path.is_file() else None
    return GroundTruth(
        spec=spec,
        points=data["points"],
        poses=poses,
        object_ids=data["object_ids"].astype(np.int32),
        visible=data["visible"] > 0.5,
        scene_scale=float(manifest.get("scene_scale", 1.0)),
    )


# ---------------------------------------------------------------------------
# Sidecars: gauges, transforms, trajectories, matches


def _transform_to_dict(T: SimilarityTransform) -> dict:
    return {
        "scale": T.scale,
        "rotation": [float(v) for v in T.rotation.ravel()],
        "translation": [float(v) for v in T.translation],
    }


def _transform_from_dict(d: dict) -> SimilarityTransform:
    return SimilarityTransform(
        float(d["scale"]),
        np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
        np.asarray(d["translation"], dtype=np.float64),
    )


def write_gauges(gauges: list[SimilarityTransform], path) -> None:
    Path(path).write_text(json.dumps([_transform_to_dict(g) for g in gauges], indent=1) + "\n")


def read_gauges(path) -> list[SimilarityTransform]:
    return [_transform_from_dict(d) for d in json.loads(Path(path).read_text())]


def write_trajectories(trajectories: list[Trajectory], path) -> None:
    """One trajectory per line: id, then flattened (frame, x, y, z) tuples."""
    lines = []
    for tr in trajectories:
        parts = [str(tr.trajectory_id)]
        for f, p in zip(tr.frames, tr.positions):
            parts.append(f"{f} {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")
        lines.append(" ".join(parts))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_trajectories(path) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Parsed trajectory records: (id, frames, positions)."""
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        tokens = line.split()
        if (len(tokens) - 1) % 4 != 0:
            raise MalformedContainer(f"bad trajectory record: {line[:60]}...")
        tid = int(tokens[0])
        rest = np.asarray(tokens[1:], dtype=np.float64).reshape(-1, 4)
        out.append((tid, rest[:, 0].astype(int), rest[:, 1:]))
    return out


def write_trajectory_meta(trajectories: list[Trajectory], path) -> None:
    meta = {
        str(tr.trajectory_id): {
            "sources": [[int(c), int(t), int(px[0]), int(px[1])] for c, t, px in tr.sources]
        }
        for tr in trajectories
    }
    Path(path).write_text(json.dumps(meta, indent=1) + "\n")


def write_fusion_outputs(fused: FusedScene, directory) -> None:
    """Transforms, reports, trajectories, and association dumps."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "transforms.json").write_text(
        json.dumps([_transform_to_dict(T) for T in fused.chunk_transforms], indent=1) + "\n"
    )
    report = [
        {
            "chunk_i": r.chunk_i,
            "chunk_j": r.chunk_j,
            "tier": r.tier,
            "num_static": r.num_static,
            "num_dynamic": r.num_dynamic,
            "num_tracklets_i": r.num_tracklets_i,
            "num_tracklets_j": r.num_tracklets_j,
            "num_candidates": r.num_candidates,
            "num_matches": r.num_matches,
            "static_rms": r.static_rms,
            "pair_transform": _transform_to_dict(r.pair_transform),
        }
        for r in fused.reports
    ]
    (directory / "report.json").write_text(json.dumps(report, indent=1) + "\n")
    write_trajectories(fused.trajectories, directory / "trajectories.txt")
    write_trajectory_meta(fused.trajectories, directory / "trajectories_meta.json")
    dumps = []
    for chunk_i, chunk_j, match_set, tr_i, tr_j in fused.match_sets:
        dumps.append(
            {
                "chunk_i": chunk_i,
                "chunk_j": chunk_j,
                "matches": [
                    [a, b, c, list(tr_i[a].pixel), list(tr_j[b].pixel)]
                    for a, b, c in match_set.matches
                ],
                "tracklets_i": [[t.tracklet_id, t.pixel[0], t.pixel[1]] for t in tr_i],
                "tracklets_j": [[t.tracklet_id, t.pixel[0], t.pixel[1]] for t in tr_j],
            }
        )
    (directory / "matches.json").write_text(json.dumps(dumps, indent=1) + "\n")


# ---------------------------------------------------------------------------
# Config files


def load_pipeline_config(path) -> PipelineConfig:
    """Read a pipeline config; unspecified fields take the documented
    defaults, unknown keys are an error."""
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise InvalidConfig(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise InvalidConfig(f"config file is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise InvalidConfig("config file must hold a JSON object")
    return PipelineConfig.from_dict(data)


def spec_to_dict(spec: SceneSpec) -> dict:
    return dataclasses.asdict(spec)


def load_scene_spec(path) -> SceneSpec:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise InvalidSpec(f"scene spec not found: {path}") from e
    except json.JSONDecodeError as e:
        raise InvalidSpec(f"scene spec is not valid JSON: {e}") from e
    try:
        return SceneSpec.from_dict(data)
    except TypeError as e:
        raise InvalidSpec(f"bad scene spec: {e}") from e
