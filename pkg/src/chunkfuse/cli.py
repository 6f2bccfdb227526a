"""Command-line surface: generate, fuse, evaluate, inspect.

Exit codes: 0 success, 2 invalid config or scene spec, 3 malformed
container, 4 evaluation key mismatch.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import io as cio
from .chunking import slice_overlap
from .errors import InvalidConfig, InvalidSpec, KeyMismatch, MalformedContainer
from .fusion import fuse_sequence
from .metrics import align_trajectories, ate, dense_epe, format_metrics_table, rpe
from .model import PipelineConfig
from .synthetic import emit_chunks, generate


def _cmd_generate(args) -> int:
    spec = cio.load_scene_spec(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    cfg = PipelineConfig(chunk_length=args.chunk_length, overlap=args.overlap)
    out = Path(args.out)
    gt = generate(spec)
    cio.write_ground_truth(gt, out / "gt")
    emitted = emit_chunks(gt, cfg, spec)
    chunk_root = out / "chunks"
    chunk_root.mkdir(parents=True, exist_ok=True)
    count = 0
    for chunk in emitted.chunks:
        cio.write_chunk(chunk, chunk_root / f"chunk_{chunk.chunk_id:04d}")
        count += 1
    cio.write_gauges(emitted.gauges, chunk_root / "gauges.json")
    print(f"wrote ground truth ({gt.num_frames} frames) and {count} chunks to {out}")
    return 0


def _cmd_fuse(args) -> int:
    cfg = cio.load_pipeline_config(args.config)
    out = Path(args.out)
    writer = cio.StreamingFrameWriter(out / "fused")
    fused = fuse_sequence(cio.iter_chunks(args.chunks), cfg, ablation=args.ablation, frame_sink=writer)
    writer.finish()
    cio.write_fusion_outputs(fused, out)
    (out / "fuse_info.json").write_text(
        json.dumps({"ablation": args.ablation, "config": cfg.to_dict()}, indent=1) + "\n"
    )
    tiers = ",".join(r.tier for r in fused.reports) or "-"
    print(
        f"fused {fused.num_frames} frames across {len(fused.chunk_transforms)} chunks "
        f"({len(fused.trajectories)} trajectories; tiers: {tiers})"
    )
    return 0


def _resolve_pred_dir(path: Path) -> Path:
    if (path / cio.MANIFEST_NAME).is_file():
        return path
    if (path / "fused" / cio.MANIFEST_NAME).is_file():
        return path / "fused"
    raise MalformedContainer(f"no fused container under {path}")


def _resolve_gt_dir(path: Path) -> Path:
    if (path / cio.MANIFEST_NAME).is_file():
        return path
    if (path / "gt" / cio.MANIFEST_NAME).is_file():
        return path / "gt"
    raise MalformedContainer(f"no ground-truth container under {path}")


def _pred_table(pred_dir: Path, fused, stride: int):
    points = np.stack([fp.points for fp in fused.frames])
    table = {
        (r, c): points[:, r, c, :]
        for r in range(0, points.shape[1], stride)
        for c in range(0, points.shape[2], stride)
    }
    meta_path = pred_dir.parent / "trajectories_meta.json"
    traj_path = pred_dir.parent / "trajectories.txt"
    if meta_path.is_file() and traj_path.is_file():
        meta = json.loads(meta_path.read_text())
        for tid, frames, positions in cio.read_trajectories(traj_path):
            sources = meta.get(str(tid), {}).get("sources", [])
            if not sources:
                continue
            root = (sources[0][2], sources[0][3])
            if root in table:
                track = table[root].copy()
                track[frames] = positions
                table[root] = track
    return table


def _cmd_evaluate(args) -> int:
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(wanted) - {"epe", "ate", "rpe", "assoc"}
    if unknown:
        raise InvalidConfig(f"unknown metrics: {sorted(unknown)}")
    pred_dir = _resolve_pred_dir(Path(args.pred))
    gt_dir = _resolve_gt_dir(Path(args.gt))
    fused = cio.read_chunk(pred_dir)
    gt = cio.read_ground_truth(gt_dir)

    if len(fused.frames) != gt.num_frames:
        raise KeyMismatch(
            f"prediction covers {len(fused.frames)} frames but ground truth has {gt.num_frames}"
        )

    info_path = pred_dir.parent / "fuse_info.json"
    variant = "pred"
    if info_path.is_file():
        variant = json.loads(info_path.read_text()).get("ablation", "pred")

    row: dict[str, object] = {"variant": variant}
    report: dict[str, object] = {"variant": variant}
    pred_poses = [fp.pose for fp in fused.frames]
    if "ate" in wanted:
        value = ate(pred_poses, gt.poses)
        row["ate"] = value
        report["ate"] = value
    if "rpe" in wanted:
        # aligning away the monocular gauge first keeps RPE scale-free
        T = align_trajectories(pred_poses, gt.poses)
        aligned = [T.apply_pose(p) for p in pred_poses]
        t, r = rpe(aligned, gt.poses, delta=args.rpe_delta)
        row["rpe_trans"] = t
        row["rpe_rot"] = r
        report["rpe_trans"] = t
        report["rpe_rot"] = r
        report["rpe_delta"] = args.rpe_delta
    if "epe" in wanted:
        pred_table = _pred_table(pred_dir, fused, args.epe_stride)
        gt_table = gt.trajectory_table(stride=args.epe_stride)
        value = dense_epe(pred_table, gt_table, align=not args.no_align)
        row["epe"] = value
        report["epe"] = value
    if "assoc" in wanted:
        matches_path = pred_dir.parent / "matches.json"
        if not matches_path.is_file():
            raise KeyMismatch(f"no matches.json under {pred_dir.parent} (fused with association?)")
        correct = predicted = actual = 0
        for pair in json.loads(matches_path.read_text()):
            pix_j = {tuple(t[1:3]): t[0] for t in pair["tracklets_j"]}
            truth = {
                t[0]: pix_j[tuple(t[1:3])]
                for t in pair["tracklets_i"]
                if tuple(t[1:3]) in pix_j
            }
            pred_pairs = {(m[0], m[1]) for m in pair["matches"]}
            true_pairs = set(truth.items())
            correct += len(pred_pairs & true_pairs)
            predicted += len(pred_pairs)
            actual += len(true_pairs)
        precision = correct / predicted if predicted else 0.0
        recall = correct / actual if actual else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        row["assoc_p"] = precision
        row["assoc_r"] = recall
        row["assoc_f1"] = f1
        report.update({"assoc_precision": precision, "assoc_recall": recall, "assoc_f1": f1})

    print(format_metrics_table([row]))
    print(json.dumps(report))
    out_path = pred_dir.parent / "metrics.json"
    out_path.write_text(json.dumps(report, indent=1) + "\n")
    return 0


def _cmd_inspect(args) -> int:
    cfg = cio.load_pipeline_config(args.config) if args.config else PipelineConfig()
    dirs = cio.chunk_dirs(args.chunks)
    prev = None
    for d in dirs:
        chunk = cio.read_chunk(d)
        H, W = chunk.grid_shape
        line = (
            f"chunk {chunk.chunk_id}: frames [{chunk.start_frame}, {chunk.end_frame}] "
            f"({len(chunk.frames)} frames, {H}x{W})"
        )
        if prev is not None:
            from .registration import select_anchors

            overlap = slice_overlap(prev, chunk)
            abstraction = select_anchors(overlap, cfg)
            line += (
                f"; overlap with previous: {len(overlap)} frames, "
                f"{abstraction.num_static} static anchors, {abstraction.num_dynamic} dynamic supports"
            )
        print(line)
        prev = chunk
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chunkfuse",
        description="Cross-chunk registration, association, and fusion for chunked 4D scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize ground truth and a chunk stream")
    g.add_argument("--spec", required=True, help="scene spec JSON")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=None, help="override the spec's rng seed")
    g.add_argument("--chunk-length", type=int, default=16)
    g.add_argument("--overlap", type=int, default=4)
    g.set_defaults(func=_cmd_generate)

    f = sub.add_parser("fuse", help="register, associate, and fuse a chunk stream")
    f.add_argument("--chunks", required=True, help="directory of chunk containers")
    f.add_argument("--config", required=True, help="pipeline config JSON")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--ablation", choices=["base", "overlap", "full"], default="full")
    f.set_defaults(func=_cmd_fuse)

    e = sub.add_parser("evaluate", help="score a fused scene against ground truth")
    e.add_argument("--pred", required=True, help="fuse output directory")
    e.add_argument("--gt", required=True, help="generate output directory")
    e.add_argument("--metrics", default="epe,ate,rpe", help="comma list: epe,ate,rpe,assoc")
    e.add_argument("--rpe-delta", type=int, default=1)
    e.add_argument("--epe-stride", type=int, default=1, help="seed-pixel stride for the EPE table")
    e.add_argument("--no-align", action="store_true", help="skip the global gauge alignment")
    e.set_defaults(func=_cmd_evaluate)

    i = sub.add_parser("inspect", help="summarize chunk containers and overlap abstractions")
    i.add_argument("--chunks", required=True)
    i.add_argument("--config", default=None)
    i.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidConfig, InvalidSpec) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except MalformedContainer as e:
        print(f"error: malformed container: {e}", file=sys.stderr)
        return 3
    except KeyMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
