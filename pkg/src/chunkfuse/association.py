"""Dynamic tracklet construction, multi-cue pair costs, endpoint gating,
and identity-preserving one-to-one assignment."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InsufficientSupport
from .model import Chunk, PipelineConfig, SimilarityTransform, Tracklet
from .registration import OverlapAbstraction

VEL_EPS = 1e-9


@dataclass(frozen=True)
class MatchSet:
    """One-to-one matches between two tracklet sets plus the leftovers."""

    matches: tuple[tuple[int, int, float], ...]
    unmatched_i: tuple[int, ...]
    unmatched_j: tuple[int, ...]

    def __post_init__(self):
        rows = [a for a, _, _ in self.matches]
        cols = [b for _, b, _ in self.matches]
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise ValueError("matches must be one-to-one on both sides")

    def __len__(self) -> int:
        return len(self.matches)


def build_tracklets(
    chunk: Chunk,
    overlap_frames,
    abstraction: OverlapAbstraction,
    cfg: PipelineConfig,
    gauge: SimilarityTransform,
) -> list[Tracklet]:
    """Per-pixel candidate tracklets over the overlap, filtered and gauged.

    One candidate per dynamic-support pixel sampled at ``seed_stride``.
    Candidates with mean confidence at or below gamma_c, or with total path
    displacement below the minimum (the resolved rigidity threshold by
    default), are dropped. Returned positions are mapped by ``gauge`` into
    the shared frame; ids are the tracklets' positions in the returned list.
    """
    frames = sorted(set(int(f) for f in overlap_frames))
    if any(f < chunk.start_frame or f > chunk.end_frame for f in frames):
        raise ValueError("overlap frames must lie inside the chunk's range")
    if cfg.min_displacement is not None:
        min_disp = cfg.min_displacement
    elif cfg.gamma_stat is not None:
        min_disp = cfg.gamma_stat
    else:
        # resolved against this chunk's own scale so the gate is gauge-free
        from .registration import chunk_scene_scale

        min_disp = cfg.gamma_stat_frac * chunk_scene_scale(chunk, frames)

    points = np.stack([chunk.frame(f).points for f in frames])
    confs = np.stack([chunk.frame(f).confidence for f in frames])

    rows, cols = np.nonzero(abstraction.dynamic_mask)
    stride = cfg.seed_stride
    keep = (rows % stride == 0) & (cols % stride == 0)
    rows, cols = rows[keep], cols[keep]

    tracklets: list[Tracklet] = []
    for r, c in zip(rows, cols):
        pos = points[:, r, c, :]
        cnf = confs[:, r, c]
        mean_conf = float(cnf.mean())
        if mean_conf <= cfg.gamma_c:
            continue
        if not np.isfinite(pos).all():
            continue
        # net displacement over the window; robust to noise, unlike path length
        if float(np.linalg.norm(pos[-1] - pos[0])) < min_disp:
            continue
        tracklets.append(
            Tracklet(
                tracklet_id=len(tracklets),
                source_chunk=chunk.chunk_id,
                pixel=(int(r), int(c)),
                frames=tuple(frames),
                positions=gauge.apply(pos),
                confidences=cnf,
                mean_confidence=mean_conf,
            )
        )
    return tracklets


def _common_overlap(d_a: Tracklet, d_b: Tracklet, overlap_frames) -> list[int]:
    frames = set(int(f) for f in overlap_frames)
    common = sorted(frames & set(d_a.frames) & set(d_b.frames))
    if len(set(d_a.frames) & frames) < 2 or len(set(d_b.frames) & frames) < 2:
        raise InsufficientSupport("both tracklets need >= 2 positions inside the overlap")
    return common


def pair_cost(
    d_a: Tracklet,
    d_b: Tracklet,
    overlap_frames,
    cfg: PipelineConfig,
    scene_scale: float,
) -> float | None:
    """Multi-cue association cost, or None when the pair is rejected.

    cost = lambda_traj * L_traj + lambda_vel * L_vel + lambda_dir * L_dir
    with L_traj the mean 3D discrepancy normalized by the pair's scene
    scale, L_vel the symmetric speed-magnitude mismatch, and L_dir the mean
    (1 - cos angle) / 2 between finite-difference velocities. Pairs whose
    L_traj or L_dir exceed the configured caps are rejected.
    """
    common = _common_overlap(d_a, d_b, overlap_frames)
    idx_a = [d_a.frames.index(f) for f in common]
    idx_b = [d_b.frames.index(f) for f in common]
    pa = d_a.positions[idx_a]
    pb = d_b.positions[idx_b]
    dt = np.diff(np.asarray(common, dtype=np.float64))

    l_traj = float(np.linalg.norm(pa - pb, axis=1).mean()) / scene_scale
    if l_traj > cfg.traj_cap:
        return None

    va = np.diff(pa, axis=0) / dt[:, None]
    vb = np.diff(pb, axis=0) / dt[:, None]
    sa = np.linalg.norm(va, axis=1)
    sb = np.linalg.norm(vb, axis=1)
    l_vel = float((np.abs(sa - sb) / (sa + sb + VEL_EPS)).mean())

    cos = np.clip((va * vb).sum(axis=1) / (sa * sb + VEL_EPS**2), -1.0, 1.0)
    l_dir = float(((1.0 - cos) / 2.0).mean())
    if l_dir > cfg.dir_cap:
        return None

    return cfg.lambda_traj * l_traj + cfg.lambda_vel * l_vel + cfg.lambda_dir * l_dir


def resolve_gamma_p(
    tracklets_i: list[Tracklet], tracklets_j: list[Tracklet], cfg: PipelineConfig
) -> float:
    """Gating radius: 3x the mean per-frame dynamic displacement by default."""
    if cfg.gamma_p is not None:
        return cfg.gamma_p
    steps = []
    for t in list(tracklets_i) + list(tracklets_j):
        d = np.linalg.norm(np.diff(t.positions, axis=0), axis=1)
        if d.size:
            steps.append(d.mean())
    if not steps:
        return 0.0
    return cfg.gamma_p_factor * float(np.mean(steps))


def gate_candidates(
    tracklets_i: list[Tracklet],
    tracklets_j: list[Tracklet],
    cfg: PipelineConfig,
    gamma_p: float | None = None,
) -> list[tuple[int, int]]:
    """Candidate index pairs whose terminal positions lie within gamma_p.

    A uniform spatial hash with cell size gamma_p keeps this near-linear in
    the tracklet count. Terminal = position at the last covered overlap
    frame (tracklet positions are already overlap-restricted).
    """
    if not tracklets_i or not tracklets_j:
        return []
    radius = resolve_gamma_p(tracklets_i, tracklets_j, cfg) if gamma_p is None else gamma_p
    if radius <= 0:
        return []

    grid: dict[tuple[int, int, int], list[int]] = defaultdict(list)
    terms_j = np.stack([t.positions[-1] for t in tracklets_j])
    for b, p in enumerate(terms_j):
        grid[tuple(np.floor(p / radius).astype(int))].append(b)

    pairs: list[tuple[int, int]] = []
    offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
    for a, t_a in enumerate(tracklets_i):
        p = t_a.positions[-1]
        cell = tuple(np.floor(p / radius).astype(int))
        for off in offsets:
            key = (cell[0] + off[0], cell[1] + off[1], cell[2] + off[2])
            for b in grid.get(key, ()):
                if np.linalg.norm(p - terms_j[b]) < radius:
                    pairs.append((a, b))
    pairs.sort()
    return pairs


def _components(costs: dict[tuple[int, int], float]):
    """Connected components of the bipartite candidate graph."""
    adj_rows: dict[int, set[int]] = defaultdict(set)
    adj_cols: dict[int, set[int]] = defaultdict(set)
    for a, b in costs:
        adj_rows[a].add(b)
        adj_cols[b].add(a)
    seen_rows: set[int] = set()
    comps = []
    for start in sorted(adj_rows):
        if start in seen_rows:
            continue
        rows, cols = set(), set()
        stack = [("r", start)]
        while stack:
            side, node = stack.pop()
            if side == "r":
                if node in rows:
                    continue
                rows.add(node)
                stack.extend(("c", b) for b in adj_rows[node])
            else:
                if node in cols:
                    continue
                cols.add(node)
                stack.extend(("r", a) for a in adj_cols[node])
        seen_rows |= rows
        comps.append((sorted(rows), sorted(cols)))
    return comps


def assign(
    costs: dict[tuple[int, int], float],
    n_i: int,
    n_j: int,
    cfg: PipelineConfig,
) -> MatchSet:
    """Minimum-total-cost one-to-one matching with unmatched allowed.

    The sparse candidate matrix is padded with per-tracklet dummy
    assignments of cost ``cost_max``, so any tracklet may remain unmatched;
    candidates above ``cost_max`` are discarded up front, which keeps every
    reported match at or below the threshold. Deterministic given the input
    ordering. Solved per connected component with the Hungarian method.
    """
    filtered = {
        (a, b): float(c)
        for (a, b), c in costs.items()
        if np.isfinite(c) and 0.0 <= c <= cfg.cost_max
    }
    matched: list[tuple[int, int, float]] = []
    for rows, cols in _components(filtered):
        nr, nc = len(rows), len(cols)
        big = np.inf
        M = np.full((nr + nc, nc + nr), big)
        for ia, a in enumerate(rows):
            for ib, b in enumerate(cols):
                if (a, b) in filtered:
                    M[ia, ib] = filtered[(a, b)]
        for ia in range(nr):
            M[ia, nc + ia] = cfg.cost_max
        for ib in range(nc):
            M[nr + ib, ib] = cfg.cost_max
        M[nr:, nc:] = 0.0
        rr, cc = linear_sum_assignment(M)
        for ia, ib in zip(rr, cc):
            if ia < nr and ib < nc:
                a, b = rows[ia], cols[ib]
                matched.append((a, b, filtered[(a, b)]))
    matched.sort()
    taken_i = {a for a, _, _ in matched}
    taken_j = {b for _, b, _ in matched}
    return MatchSet(
        matches=tuple(matched),
        unmatched_i=tuple(a for a in range(n_i) if a not in taken_i),
        unmatched_j=tuple(b for b in range(n_j) if b not in taken_j),
    )


def assignment_total_cost(match_set: MatchSet, cfg: PipelineConfig) -> float:
    """Objective value: matched costs plus cost_max per unmatched tracklet.

    Summation runs in a canonical order so independent solvers of the same
    instance produce bit-identical totals.
    """
    total = 0.0
    for _, _, c in sorted(match_set.matches):
        total += c
    total += cfg.cost_max * (len(match_set.unmatched_i) + len(match_set.unmatched_j))
    return total
