import numpy as np
import pytest

from chunkfuse.chunking import slice_overlap
from chunkfuse.errors import DegenerateConfiguration, NotEnoughPoints
from chunkfuse.model import PipelineConfig, SimilarityTransform
from chunkfuse.registration import (
    register_pair,
    registration_residual_rms,
    select_anchors,
    solve_weighted_rigid,
    solve_weighted_similarity,
    static_correspondences,
)
from conftest import make_chunk, random_rotation, rot_y


def weighted_loss(T, src, dst, w):
    return float((w * np.linalg.norm(T.apply(src) - dst, axis=1) ** 2).sum())


class TestWeightedSimilarity:
    def test_src_equals_dst_gives_identity(self, rng):
        src = rng.normal(size=(20, 3))
        T = solve_weighted_similarity(src, src, np.ones(20))
        assert abs(T.scale - 1.0) < 1e-12
        assert np.abs(T.rotation - np.eye(3)).max() < 1e-12
        assert np.abs(T.translation).max() < 1e-12

    def test_generating_transform_oracle(self, rng):
        T_true = SimilarityTransform(1.7, rot_y(np.radians(37.0)), np.array([0.3, -1.1, 2.0]))
        src = rng.normal(size=(50, 3))
        dst = T_true.apply(src)
        T = solve_weighted_similarity(src, dst, np.ones(50))
        assert np.linalg.norm(T.rotation - T_true.rotation) < 1e-9
        assert abs(T.scale - T_true.scale) < 1e-9
        assert np.linalg.norm(T.translation - T_true.translation) < 1e-9

    def test_zero_weight_exclusion(self, rng):
        T_true = SimilarityTransform(1.7, rot_y(np.radians(37.0)), np.array([0.3, -1.1, 2.0]))
        src = rng.normal(size=(55, 3))
        dst = T_true.apply(src)
        w = np.ones(55)
        dst[50:] += 1e6  # corrupted, but weightless
        w[50:] = 0.0
        T = solve_weighted_similarity(src, dst, w)
        assert np.linalg.norm(T.rotation - T_true.rotation) < 1e-9
        assert abs(T.scale - T_true.scale) < 1e-9
        assert np.linalg.norm(T.translation - T_true.translation) < 1e-9

    def test_not_enough_points(self, rng):
        src = rng.normal(size=(2, 3))
        with pytest.raises(NotEnoughPoints):
            solve_weighted_similarity(src, src, np.ones(2))
        src5 = rng.normal(size=(5, 3))
        w = np.array([1.0, 1.0, 0.0, 0.0, 0.0])
        with pytest.raises(NotEnoughPoints):
            solve_weighted_similarity(src5, src5, w)

    def test_collinear_degenerate(self):
        src = np.outer(np.arange(5.0), np.array([1.0, 2.0, 3.0]))
        with pytest.raises(DegenerateConfiguration):
            solve_weighted_similarity(src, src + 1.0, np.ones(5))

    def test_planar_points_are_fine(self, rng):
        # rank-2 source covariance is solvable thanks to the det correction
        T_true = SimilarityTransform(0.8, random_rotation(rng), rng.normal(size=3))
        src = rng.normal(size=(30, 3))
        src[:, 2] = 0.0
        dst = T_true.apply(src)
        T = solve_weighted_similarity(src, dst, np.ones(30))
        assert np.linalg.norm(T.rotation - T_true.rotation) < 1e-9

    def test_equivariance_under_common_rotation(self, rng):
        src = rng.normal(size=(40, 3))
        T_true = SimilarityTransform(1.3, random_rotation(rng), rng.normal(size=3))
        dst = T_true.apply(src) + rng.normal(scale=0.01, size=(40, 3))
        w = rng.uniform(0.1, 1.0, size=40)
        T = solve_weighted_similarity(src, dst, w)
        Q = random_rotation(rng)
        T_rot = solve_weighted_similarity(src @ Q.T, dst @ Q.T, w)
        assert np.abs(T_rot.rotation - Q @ T.rotation @ Q.T).max() < 1e-9
        assert np.abs(T_rot.translation - Q @ T.translation).max() < 1e-9
        assert abs(T_rot.scale - T.scale) < 1e-9

    def test_weight_scaling_invariance(self, rng):
        src = rng.normal(size=(30, 3))
        dst = rng.normal(size=(30, 3))
        w = rng.uniform(0.1, 1.0, size=30)
        A = solve_weighted_similarity(src, dst, w)
        B = solve_weighted_similarity(src, dst, 37.5 * w)
        assert abs(A.scale - B.scale) < 1e-9
        assert np.abs(A.rotation - B.rotation).max() < 1e-9
        assert np.abs(A.translation - B.translation).max() < 1e-9

    def test_optimality_certificate(self, rng):
        T_true = SimilarityTransform(1.2, random_rotation(rng), rng.normal(size=3))
        src = rng.normal(size=(60, 3))
        dst = T_true.apply(src) + rng.normal(scale=0.02, size=(60, 3))
        w = rng.uniform(0.2, 1.0, size=60)
        T = solve_weighted_similarity(src, dst, w)
        best = weighted_loss(T, src, dst, w)
        assert best <= weighted_loss(T_true, src, dst, w) + 1e-12
        for _ in range(1000):
            eps = 10 ** rng.uniform(-4, -1)
            dR = random_rotation(rng)
            axis_perturb = np.eye(3) + eps * (dR - np.eye(3))
            U, _, Vt = np.linalg.svd(axis_perturb @ T.rotation)
            Rp = U @ Vt
            Tp = SimilarityTransform(
                T.scale * (1 + eps * rng.normal()),
                Rp,
                T.translation + eps * rng.normal(size=3),
            )
            assert best <= weighted_loss(Tp, src, dst, w) + 1e-12


class TestWeightedRigid:
    def test_fixed_scale(self, rng):
        T_true = SimilarityTransform(2.5, random_rotation(rng), rng.normal(size=3))
        src = rng.normal(size=(40, 3))
        dst = T_true.apply(src)
        T = solve_weighted_rigid(src, dst, np.ones(40), scale=2.5)
        assert T.scale == 2.5
        assert np.linalg.norm(T.rotation - T_true.rotation) < 1e-9
        assert np.linalg.norm(T.translation - T_true.translation) < 1e-9


def _static_scene(rng, grid=16, frames=4):
    base = rng.normal(size=(grid, grid, 3)) + np.array([0.0, 0.0, 5.0])
    return np.broadcast_to(base, (frames, grid, grid, 3)).copy()


class TestSelectAnchors:
    def test_static_scene_all_anchors(self, rng):
        pts = _static_scene(rng)
        a = make_chunk(pts, chunk_id=0)
        b = make_chunk(pts, chunk_id=1)
        cfg = PipelineConfig(gamma_stat=0.1)
        ab = select_anchors(slice_overlap(a, b), cfg)
        assert ab.static_mask.all()
        assert not ab.dynamic_mask.any()

    def test_moving_block_is_dynamic(self, rng):
        gamma_stat = 0.1
        pts = _static_scene(rng)
        block = (slice(3, 13), slice(2, 12))
        for t in range(4):
            pts[t][block] += np.array([5 * gamma_stat * t, 0.0, 0.0])
        a = make_chunk(pts, chunk_id=0)
        b = make_chunk(pts, chunk_id=1)
        cfg = PipelineConfig(gamma_stat=gamma_stat)
        ab = select_anchors(slice_overlap(a, b), cfg)
        expected = np.zeros((16, 16), dtype=bool)
        expected[block] = True
        assert np.array_equal(ab.dynamic_mask, expected)
        assert np.array_equal(ab.static_mask, ~expected)

    def test_zero_confidence_empties_both(self, rng):
        pts = _static_scene(rng)
        conf = np.zeros((4, 16, 16))
        a = make_chunk(pts, conf, chunk_id=0)
        b = make_chunk(pts, conf, chunk_id=1)
        ab = select_anchors(slice_overlap(a, b), PipelineConfig(gamma_stat=0.1))
        assert not ab.static_mask.any()
        assert not ab.dynamic_mask.any()


class TestRegisterPair:
    def _pair(self, rng, gauge=None, conf=None):
        pts = _static_scene(rng, grid=12)
        a = make_chunk(pts, conf, chunk_id=0)
        pts_j = gauge.apply(pts) if gauge is not None else pts
        b = make_chunk(pts_j, conf, chunk_id=1)
        return a, b

    def test_injected_gauge_recovered(self, rng):
        T_star = SimilarityTransform(1.4, random_rotation(rng), rng.normal(size=3))
        a, b = self._pair(rng, gauge=T_star)
        overlap = slice_overlap(a, b)
        cfg = PipelineConfig(gamma_stat=0.1)
        ab = select_anchors(overlap, cfg)
        T, report = register_pair(overlap, ab, cfg)
        inv = T_star.invert()
        assert np.linalg.norm(T.rotation - inv.rotation) < 1e-9
        assert abs(T.scale - inv.scale) < 1e-9
        assert np.linalg.norm(T.translation - inv.translation) < 1e-9
        assert report.anchor_count == 144
        assert report.residual_rms < 1e-9

    def test_identical_chunks_identity(self, rng):
        a, b = self._pair(rng)
        overlap = slice_overlap(a, b)
        cfg = PipelineConfig(gamma_stat=0.1)
        T, _ = register_pair(overlap, select_anchors(overlap, cfg), cfg)
        assert abs(T.scale - 1.0) < 1e-12
        assert np.abs(T.rotation - np.eye(3)).max() < 1e-12
        assert np.abs(T.translation).max() < 1e-12

    def test_all_dynamic_raises_not_enough_points(self, rng):
        pts = _static_scene(rng, grid=8)
        for t in range(4):
            pts[t] += np.array([t * 1.0, 0.0, 0.0])  # everything moves
        a = make_chunk(pts, chunk_id=0)
        b = make_chunk(pts, chunk_id=1)
        overlap = slice_overlap(a, b)
        cfg = PipelineConfig(gamma_stat=0.1)
        ab = select_anchors(overlap, cfg)
        assert ab.num_static == 0
        with pytest.raises(NotEnoughPoints):
            register_pair(overlap, ab, cfg)

    def test_dynamic_supports_never_affect_result(self, rng):
        gamma_stat = 0.1
        pts = _static_scene(rng)
        block = (slice(0, 5), slice(0, 5))
        for t in range(4):
            pts[t][block] += np.array([gamma_stat * 5 * t, 0.2, 0.0])
        gauge = SimilarityTransform(0.9, random_rotation(rng), rng.normal(size=3))
        a = make_chunk(pts, chunk_id=0)
        b = make_chunk(gauge.apply(pts), chunk_id=1)
        overlap = slice_overlap(a, b)
        cfg = PipelineConfig(gamma_stat=gamma_stat)
        ab = select_anchors(overlap, cfg)
        T1, _ = register_pair(overlap, ab, cfg)

        corrupted = pts.copy()
        corrupted[:, block[0], block[1], :] += rng.normal(scale=100.0, size=(4, 5, 5, 3))
        a2 = make_chunk(corrupted, chunk_id=0)
        b2 = make_chunk(gauge.apply(pts), chunk_id=1)
        overlap2 = slice_overlap(a2, b2)
        ab2 = select_anchors(overlap2, cfg)
        assert np.array_equal(ab2.dynamic_mask, ab.dynamic_mask)
        T2, _ = register_pair(overlap2, ab2, cfg)
        assert np.array_equal(T1.rotation, T2.rotation)
        assert T1.scale == T2.scale
        assert np.array_equal(T1.translation, T2.translation)

    def test_confidence_weighting_enters_correspondences(self, rng):
        pts = _static_scene(rng, grid=6)
        conf = rng.uniform(0.6, 1.0, size=(4, 6, 6))
        a = make_chunk(pts, conf, chunk_id=0)
        b = make_chunk(pts, conf * 0.9, chunk_id=1)
        overlap = slice_overlap(a, b)
        cfg = PipelineConfig(gamma_stat=0.1)
        ab = select_anchors(overlap, cfg)
        src, dst, w = static_correspondences(overlap, ab)
        assert np.allclose(w.reshape(4, -1), np.sqrt(conf * conf * 0.9).reshape(4, -1), atol=1e-12)
        T, _ = register_pair(overlap, ab, cfg)
        assert registration_residual_rms(T, src, dst, w) < 1e-12
