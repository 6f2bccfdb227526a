"""Trajectory-guided dynamic fusion: transform refinement from matched
tracklets plus camera centers, tiered fallback selection, boundary
continuity reconstruction, and sequence-level fusion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .association import (
    MatchSet,
    assign,
    build_tracklets,
    gate_candidates,
    pair_cost,
    resolve_gamma_p,
)
from .chunking import OverlapView, slice_overlap
from .errors import DegenerateConfiguration, NotEnoughPoints, WindowTooShort
from .model import Chunk, FramePrediction, PipelineConfig, Pose, SimilarityTransform, Tracklet
from .registration import (
    OverlapAbstraction,
    RegistrationReport,
    register_pair,
    select_anchors,
    solve_weighted_rigid,
    solve_weighted_similarity,
)

ABLATION_MODES = ("base", "overlap", "full")


# ---------------------------------------------------------------------------
# Refined overlap alignment


def _project_rotation(M: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[-1] = -1.0
    return (U * S) @ Vt


def refine_transform(
    matches: MatchSet,
    tracklets_i: Sequence[Tracklet],
    tracklets_j: Sequence[Tracklet],
    poses_i: Sequence[Pose],
    poses_j: Sequence[Pose],
    initial: SimilarityTransform,
    cfg: PipelineConfig,
) -> SimilarityTransform:
    """Re-solve the pairwise transform on matched dynamic points plus
    camera centers.

    Tracklet positions must be in their raw chunk gauges. Each matched
    correspondence is weighted by the confidence geometric mean attenuated
    by its residual under ``initial`` (rescaled to [0, 1]); gross outliers,
    beyond 5x the median residual, are zeroed outright so a few wrong
    matches cannot destabilize the transform. Camera-center pairs carry
    ``lambda_cam`` times the mean track weight. The solve is a rigid
    weighted Kabsch with the scale frozen from ``initial`` unless
    ``refine_scale`` is set.
    """
    src_list, dst_list, conf_list = [], [], []
    for a, b, _ in matches.matches:
        ta, tb = tracklets_i[a], tracklets_j[b]
        common = sorted(set(ta.frames) & set(tb.frames))
        if not common:
            continue
        ia = [ta.frames.index(f) for f in common]
        ib = [tb.frames.index(f) for f in common]
        src_list.append(tb.positions[ib])
        dst_list.append(ta.positions[ia])
        conf_list.append(np.sqrt(ta.confidences[ia] * tb.confidences[ib]))

    if src_list:
        src = np.concatenate(src_list)
        dst = np.concatenate(dst_list)
        conf = np.concatenate(conf_list)
        residual = np.linalg.norm(initial.apply(src) - dst, axis=1)
        rmax = residual.max()
        scaled = residual / rmax if rmax > 0 else residual
        track_w = conf / (1.0 + scaled)
        med = np.median(residual)
        if med > 0:
            track_w[residual > 5.0 * med] = 0.0
        mean_track_w = float(track_w[track_w > 0].mean()) if (track_w > 0).any() else 1.0
    else:
        src = np.zeros((0, 3))
        dst = np.zeros((0, 3))
        track_w = np.zeros(0)
        mean_track_w = 1.0

    if cfg.lambda_cam > 0:
        cam_src = np.stack([p.center for p in poses_j])
        cam_dst = np.stack([p.center for p in poses_i])
        cam_w = np.full(len(cam_src), cfg.lambda_cam * mean_track_w)
        src = np.concatenate([src, cam_src])
        dst = np.concatenate([dst, cam_dst])
        weights = np.concatenate([track_w, cam_w])
    else:
        weights = track_w

    if (weights > 0).sum() < 3:
        raise NotEnoughPoints("refinement needs >= 3 positive-weight correspondences")
    if cfg.refine_scale:
        return solve_weighted_similarity(src, dst, weights)
    return solve_weighted_rigid(src, dst, weights, scale=initial.scale)


def pose_only_transform(poses_i: Sequence[Pose], poses_j: Sequence[Pose]) -> SimilarityTransform:
    """Similarity alignment of overlap camera centers, chunk j -> chunk i.

    Collinear or too-few centers degrade to translation-plus-averaged
    rotation: R is the projected mean of the per-frame relative rotations,
    the scale is the ratio of center spreads (1 when undefined).
    """
    c_i = np.stack([p.center for p in poses_i])
    c_j = np.stack([p.center for p in poses_j])
    try:
        return solve_weighted_similarity(c_j, c_i, np.ones(len(c_j)))
    except (DegenerateConfiguration, NotEnoughPoints):
        pass
    M = np.zeros((3, 3))
    for pi, pj in zip(poses_i, poses_j):
        M += pi.rotation @ pj.rotation.T
    R = _project_rotation(M)
    mu_i = c_i.mean(axis=0)
    mu_j = c_j.mean(axis=0)
    spread_j = np.sqrt(((c_j - mu_j) ** 2).sum(axis=1).mean())
    spread_i = np.sqrt(((c_i - mu_i) ** 2).sum(axis=1).mean())
    s = spread_i / spread_j if spread_j > 1e-15 else 1.0
    t = mu_i - s * (R @ mu_j)
    return SimilarityTransform(s, R, t)


@dataclass(frozen=True)
class RefinedResult:
    transform: SimilarityTransform
    match_count: int


def choose_transform(
    static_result: tuple[SimilarityTransform, RegistrationReport] | None,
    refined_result: RefinedResult | None,
    poses_i: Sequence[Pose],
    poses_j: Sequence[Pose],
    cfg: PipelineConfig,
) -> tuple[SimilarityTransform, str]:
    """Fallback hierarchy: dynamic-refined, static-anchor, pose-only."""
    if refined_result is not None and refined_result.match_count >= cfg.min_dynamic_matches:
        return refined_result.transform, "refined"
    if static_result is not None:
        transform, report = static_result
        rms_cap = cfg.static_rms_cap * report.scene_scale
        if report.anchor_count >= cfg.min_static_anchors and report.residual_rms <= rms_cap:
            return transform, "static"
    return pose_only_transform(poses_i, poses_j), "pose"


# ---------------------------------------------------------------------------
# Boundary continuity reconstruction


def solve_tridiagonal(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Thomas algorithm for a tridiagonal system; rhs may be (n,) or (n, k)."""
    n = len(diag)
    cp = np.empty(n - 1) if n > 1 else np.empty(0)
    dp = np.empty_like(rhs, dtype=np.float64)
    denom = diag[0]
    if n > 1:
        cp[0] = upper[0] / denom
    dp[0] = rhs[0] / denom
    for k in range(1, n):
        denom = diag[k] - lower[k - 1] * cp[k - 1]
        if k < n - 1:
            cp[k] = upper[k] / denom
        dp[k] = (rhs[k] - lower[k - 1] * dp[k - 1]) / denom
    for k in range(n - 2, -1, -1):
        dp[k] -= cp[k] * dp[k + 1]
    return dp


def blend_weights(num: int) -> tuple[np.ndarray, np.ndarray]:
    """cos^2 ramp: the first source dominates early, the second late."""
    r = np.linspace(0.0, 1.0, num)
    alpha = np.cos(0.5 * np.pi * r) ** 2
    return alpha, 1.0 - alpha


def reconstruct_boundary(
    d_a: Tracklet,
    d_b_aligned: Tracklet,
    window_frames,
    cfg: PipelineConfig,
) -> Tracklet:
    """Continuity reconstruction over a short window around the junction.

    Minimizes, per coordinate,
      sum_t alpha_t ||x_t - a_t||^2 + beta_t ||x_t - b_t||^2
      + lambda_sm * sum ||x_t - x_{t-1}||^2,
    a symmetric tridiagonal quadratic solved exactly by the Thomas
    algorithm. alpha/beta follow a cos^2 ramp across the window; where only
    one source covers a frame it receives the full unit data weight. The
    smoothness chain is anchored to the fixed neighbors just outside the
    window when the source tracklets extend there. Outside the window,
    positions are copied verbatim from their source tracklets.
    """
    frames = sorted(set(int(f) for f in window_frames))
    if len(frames) < 2:
        raise WindowTooShort(f"boundary window needs >= 2 frames, got {len(frames)}")
    if any(b - a != 1 for a, b in zip(frames, frames[1:])):
        raise ValueError("boundary window frames must be consecutive")
    m = len(frames)

    a_map = {f: d_a.positions[k] for k, f in enumerate(d_a.frames)}
    b_map = {f: d_b_aligned.positions[k] for k, f in enumerate(d_b_aligned.frames)}
    ca_map = {f: d_a.confidences[k] for k, f in enumerate(d_a.frames)}
    cb_map = {f: d_b_aligned.confidences[k] for k, f in enumerate(d_b_aligned.frames)}

    alpha, beta = blend_weights(m)
    A = np.zeros((m, 3))
    B = np.zeros((m, 3))
    for k, f in enumerate(frames):
        has_a = f in a_map and np.isfinite(a_map[f]).all()
        has_b = f in b_map and np.isfinite(b_map[f]).all()
        if not has_a and not has_b:
            raise ValueError(f"frame {f} of the boundary window is covered by neither tracklet")
        if has_a and not has_b:
            alpha[k], beta[k] = 1.0, 0.0
        elif has_b and not has_a:
            alpha[k], beta[k] = 0.0, 1.0
        if has_a:
            A[k] = a_map[f]
        if has_b:
            B[k] = b_map[f]

    lam = cfg.lambda_sm
    diag = alpha + beta + lam * 2.0
    diag[0] -= lam
    diag[-1] -= lam
    rhs = alpha[:, None] * A + beta[:, None] * B

    prev_f, next_f = frames[0] - 1, frames[-1] + 1
    if prev_f in a_map and np.isfinite(a_map[prev_f]).all():
        diag[0] += lam
        rhs[0] += lam * a_map[prev_f]
    if next_f in b_map and np.isfinite(b_map[next_f]).all():
        diag[-1] += lam
        rhs[-1] += lam * b_map[next_f]

    off = np.full(m - 1, -lam)
    if lam > 0:
        x = solve_tridiagonal(off, diag, off, rhs)
    else:
        x = rhs / diag[:, None]

    out_frames: list[int] = []
    out_pos: list[np.ndarray] = []
    out_conf: list[float] = []
    for f in d_a.frames:
        if f < frames[0]:
            out_frames.append(f)
            out_pos.append(a_map[f])
            out_conf.append(float(ca_map[f]))
    for k, f in enumerate(frames):
        out_frames.append(f)
        out_pos.append(x[k])
        w = alpha[k] + beta[k]
        out_conf.append(float((alpha[k] * ca_map.get(f, 0.0) + beta[k] * cb_map.get(f, 0.0)) / w))
    for f in d_b_aligned.frames:
        if f > frames[-1]:
            out_frames.append(f)
            out_pos.append(b_map[f])
            out_conf.append(float(cb_map[f]))

    conf = np.asarray(out_conf)
    return Tracklet(
        tracklet_id=d_a.tracklet_id,
        source_chunk=d_a.source_chunk,
        pixel=d_a.pixel,
        frames=tuple(out_frames),
        positions=np.asarray(out_pos),
        confidences=conf,
        mean_confidence=float(conf.mean()),
    )


# ---------------------------------------------------------------------------
# Sequence-level fusion


@dataclass(frozen=True)
class Trajectory:
    """A long-range trajectory stitched from associated tracklets."""

    trajectory_id: int
    frames: tuple[int, ...]
    positions: np.ndarray
    sources: tuple[tuple[int, int, tuple[int, int]], ...]

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).copy()
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if any(b - a != 1 for a, b in zip(self.frames, self.frames[1:])):
            raise ValueError("trajectory frames must be contiguous and increasing")


class _TrajectoryBuilder:
    def __init__(self, traj_id: int):
        self.traj_id = traj_id
        self.data: dict[int, np.ndarray] = {}
        self.sources: list[tuple[int, int, tuple[int, int]]] = []

    def write(self, frames, positions):
        for f, p in zip(frames, positions):
            self.data[int(f)] = np.asarray(p, dtype=np.float64)

    def add_source(self, chunk_id: int, tracklet_id: int, pixel: tuple[int, int]):
        self.sources.append((chunk_id, tracklet_id, pixel))

    def finish(self) -> Trajectory:
        frames = sorted(self.data)
        return Trajectory(
            trajectory_id=self.traj_id,
            frames=tuple(frames),
            positions=np.stack([self.data[f] for f in frames]),
            sources=tuple(self.sources),
        )


@dataclass(frozen=True)
class PairReport:
    """What happened at one chunk junction."""

    chunk_i: int
    chunk_j: int
    tier: str
    num_static: int
    num_dynamic: int
    num_tracklets_i: int
    num_tracklets_j: int
    num_candidates: int
    num_matches: int
    static_rms: float | None
    pair_transform: SimilarityTransform


@dataclass
class FusedScene:
    """Globally aligned frames, transforms, and long-range trajectories,
    all expressed in the first chunk's gauge."""

    num_frames: int
    frames: list[FramePrediction]
    chunk_transforms: list[SimilarityTransform]
    trajectories: list[Trajectory]
    reports: list[PairReport]
    match_sets: list[tuple[int, int, MatchSet, list[Tracklet], list[Tracklet]]] = field(
        default_factory=list
    )

    @property
    def poses(self) -> list[Pose]:
        return [fp.pose for fp in self.frames]


def _pixel_track(chunk: Chunk, pixel: tuple[int, int], gauge: SimilarityTransform) -> Tracklet:
    r, c = pixel
    pos = np.stack([fp.points[r, c] for fp in chunk.frames])
    cnf = np.array([fp.confidence[r, c] for fp in chunk.frames])
    return Tracklet(
        tracklet_id=-1,
        source_chunk=chunk.chunk_id,
        pixel=pixel,
        frames=tuple(chunk.frame_range()),
        positions=gauge.apply(pos),
        confidences=cnf,
        mean_confidence=float(cnf.mean()),
    )


def _map_frame(fp: FramePrediction, G: SimilarityTransform) -> FramePrediction:
    return FramePrediction(
        points=G.apply(fp.points),
        confidence=fp.confidence,
        pose=G.apply_pose(fp.pose),
        frame_index=fp.frame_index,
    )


def fuse_sequence(
    chunks: Iterable[Chunk],
    cfg: PipelineConfig,
    ablation: str = "full",
    frame_sink: Callable[[FramePrediction], None] | None = None,
) -> FusedScene:
    """Register, associate, and fuse a stream of chunks.

    Keeps at most two chunk payloads resident: the previous and the
    incoming one. Fused frames are either accumulated on the result or
    handed to ``frame_sink`` as soon as they are final (overlap frames
    belong to the earlier chunk, so a frame is final once emitted).
    Per-pair registration failures never abort; the tier hierarchy always
    produces a transform.
    """
    if ablation not in ABLATION_MODES:
        raise ValueError(f"ablation must be one of {ABLATION_MODES}, got {ablation!r}")
    it = iter(chunks)
    try:
        prev = next(it)
    except StopIteration:
        raise ValueError("fuse_sequence needs at least one chunk") from None

    collected: list[FramePrediction] = []

    def emit(fp: FramePrediction):
        if frame_sink is not None:
            frame_sink(fp)
        else:
            collected.append(fp)

    identity = SimilarityTransform.identity()
    transforms = [identity]
    reports: list[PairReport] = []
    match_dumps: list[tuple[int, int, MatchSet, list[Tracklet], list[Tracklet]]] = []
    builders: list[_TrajectoryBuilder] = []
    open_map: dict[tuple[int, int], _TrajectoryBuilder] = {}

    for fp in prev.frames:
        emit(_map_frame(fp, identity))

    for cur in it:
        G_prev = transforms[-1]
        overlap = slice_overlap(prev, cur)
        abstraction = select_anchors(overlap, cfg)
        poses_i = [p.pose for p in overlap.preds_i]
        poses_j = [p.pose for p in overlap.preds_j]

        static_result = None
        if ablation != "base":
            try:
                static_result = register_pair(overlap, abstraction, cfg)
            except (NotEnoughPoints, DegenerateConfiguration):
                static_result = None

        raw_i: list[Tracklet] = []
        raw_j: list[Tracklet] = []
        match_set = MatchSet((), (), ())
        refined = None
        num_candidates = 0
        if ablation == "full":
            T_init = static_result[0] if static_result else pose_only_transform(poses_i, poses_j)
            raw_i = build_tracklets(prev, overlap.frames, abstraction, cfg, identity)
            raw_j = build_tracklets(cur, overlap.frames, abstraction, cfg, identity)
            # associate, refine, then re-associate in the improved gauge: the
            # first alignment may be off by more than a seed spacing, which
            # skews the one-to-one matching
            T_assoc = T_init
            for _ in range(cfg.association_rounds):
                aligned_j = [t.transformed(T_assoc) for t in raw_j]
                candidates = gate_candidates(raw_i, aligned_j, cfg)
                num_candidates = len(candidates)
                costs = {}
                for a, b in candidates:
                    c = pair_cost(raw_i[a], aligned_j[b], overlap.frames, cfg, abstraction.scene_scale)
                    if c is not None:
                        costs[(a, b)] = c
                match_set = assign(costs, len(raw_i), len(raw_j), cfg)
                if len(match_set) == 0:
                    refined = None
                    break
                try:
                    refined = RefinedResult(
                        refine_transform(match_set, raw_i, raw_j, poses_i, poses_j, T_assoc, cfg),
                        len(match_set),
                    )
                except NotEnoughPoints:
                    refined = None
                    break
                T_assoc = refined.transform

        if ablation == "base":
            T_pair, tier = identity, "base"
        elif ablation == "overlap":
            # isolates the contribution of static-aware overlap registration:
            # no dynamic feedback, no pose fallback
            T_pair, tier = identity, "identity"
            if static_result is not None:
                transform, rep = static_result
                if (
                    rep.anchor_count >= cfg.min_static_anchors
                    and rep.residual_rms <= cfg.static_rms_cap * rep.scene_scale
                ):
                    T_pair, tier = transform, "static"
        else:
            T_pair, tier = choose_transform(static_result, refined, poses_i, poses_j, cfg)

        G_cur = G_prev.compose(T_pair)
        transforms.append(G_cur)
        reports.append(
            PairReport(
                chunk_i=prev.chunk_id,
                chunk_j=cur.chunk_id,
                tier=tier,
                num_static=abstraction.num_static,
                num_dynamic=abstraction.num_dynamic,
                num_tracklets_i=len(raw_i),
                num_tracklets_j=len(raw_j),
                num_candidates=num_candidates,
                num_matches=len(match_set),
                static_rms=static_result[1].residual_rms if static_result else None,
                pair_transform=T_pair,
            )
        )

        if ablation == "full":
            match_dumps.append((prev.chunk_id, cur.chunk_id, match_set, raw_i, raw_j))
            bw = cfg.boundary_half_width
            junction = prev.end_frame
            new_open: dict[tuple[int, int], _TrajectoryBuilder] = {}

            for a, b, _cost in match_set.matches:
                ta, tb = raw_i[a], raw_j[b]
                builder = open_map.pop(ta.pixel, None)
                if builder is None:
                    builder = _TrajectoryBuilder(len(builders))
                    builders.append(builder)
                    builder.add_source(prev.chunk_id, ta.tracklet_id, ta.pixel)
                    d_a_full = _pixel_track(prev, ta.pixel, G_prev)
                    builder.write(d_a_full.frames, d_a_full.positions)
                else:
                    d_a_full = _pixel_track(prev, ta.pixel, G_prev)
                builder.add_source(cur.chunk_id, tb.tracklet_id, tb.pixel)
                d_b_full = _pixel_track(cur, tb.pixel, G_cur)
                b_start = max(junction - bw + 1, prev.start_frame, min(builder.data))
                b_end = min(junction + bw, cur.end_frame)
                window = range(b_start, b_end + 1)
                rebuilt = reconstruct_boundary(d_a_full, d_b_full, window, cfg)
                sel = [k for k, f in enumerate(rebuilt.frames) if b_start <= f <= b_end]
                builder.write([rebuilt.frames[k] for k in sel], rebuilt.positions[sel])
                suffix = [f for f in d_b_full.frames if f > b_end]
                if suffix:
                    idx = [d_b_full.frames.index(f) for f in suffix]
                    builder.write(suffix, d_b_full.positions[idx])
                new_open[tb.pixel] = builder

            for a in match_set.unmatched_i:
                ta = raw_i[a]
                if ta.pixel in open_map:
                    open_map.pop(ta.pixel)
                else:
                    builder = _TrajectoryBuilder(len(builders))
                    builders.append(builder)
                    builder.add_source(prev.chunk_id, ta.tracklet_id, ta.pixel)
                    track = _pixel_track(prev, ta.pixel, G_prev)
                    builder.write(track.frames, track.positions)

            for b in match_set.unmatched_j:
                tb = raw_j[b]
                builder = _TrajectoryBuilder(len(builders))
                builders.append(builder)
                builder.add_source(cur.chunk_id, tb.tracklet_id, tb.pixel)
                track = _pixel_track(cur, tb.pixel, G_cur)
                builder.write(track.frames, track.positions)
                new_open[tb.pixel] = builder

            open_map = new_open

        for fp in cur.frames:
            if fp.frame_index > prev.end_frame:
                emit(_map_frame(fp, G_cur))
        prev = cur

    num_frames = prev.end_frame + 1
    return FusedScene(
        num_frames=num_frames,
        frames=collected,
        chunk_transforms=transforms,
        trajectories=[b.finish() for b in builders],
        reports=reports,
        match_sets=match_dumps,
    )
