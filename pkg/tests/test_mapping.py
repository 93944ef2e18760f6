"""Cross-view grouping, hybrid similarity, lattice layout, target baking."""

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from gridfield import (
    ColorHistogram,
    DomainError,
    FormatError,
    KeypointMatchSet,
    MappingResult,
    MatchParams,
    SyntheticSceneSpec,
    apply_mapping,
    bake_feature_maps,
    build_lattice,
    count_mask_correspondences,
    cross_view_grid_mapping,
    generate_synthetic_scene,
    hybrid_similarity,
    lattice_side,
    load_mapping,
    save_mapping,
    similarity_clip,
    similarity_color,
)
from gridfield.mapping import (
    PROVENANCE_INIT,
    PROVENANCE_KEYPOINT,
    PROVENANCE_NEW,
    PROVENANCE_SIMILARITY,
    lattice_coords,
)
from tests.conftest import block_bitmap, hand_dataset, make_record

# hand-evaluated oracle constants
COS_HALF_QUARTER = 0.7071067811865475  # (1,1) vs (1,0): 1/sqrt(2)
BHATT_TWO_TERM = 0.9659258262890682  # sqrt(0.125) + sqrt(0.375)


def hist(*pairs):
    bins = np.zeros(512)
    for i, v in pairs:
        bins[i] = v
    return ColorHistogram(bins)


class TestSimilarityClip:
    def test_self_is_exactly_one(self):
        v = np.array([0.3, -1.2, 0.7])
        assert similarity_clip(v, v) == 1.0

    def test_orthogonal_is_exactly_zero(self):
        assert similarity_clip([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_hand_case(self):
        assert abs(similarity_clip([1.0, 1.0], [1.0, 0.0]) - COS_HALF_QUARTER) < 1e-12

    def test_scale_free(self):
        a = np.array([0.2, 0.5, -0.1])
        b = np.array([1.0, 0.3, 0.8])
        assert abs(similarity_clip(a, b) - similarity_clip(3.0 * a, 0.5 * b)) < 1e-12

    def test_zero_norm_rejected(self):
        with pytest.raises(DomainError):
            similarity_clip([0.0, 0.0], [1.0, 0.0])
        with pytest.raises(DomainError):
            similarity_clip([0.0, 0.0], [0.0, 0.0])


class TestSimilarityColor:
    def test_identical_is_exactly_one(self):
        h = hist((3, 0.5), (10, 0.5))
        assert similarity_color(h, h) == 1.0

    def test_disjoint_is_exactly_zero(self):
        assert similarity_color(hist((0, 1.0)), hist((1, 1.0))) == 0.0

    def test_two_term_hand_case(self):
        a = hist((0, 0.5), (1, 0.5))
        b = hist((0, 0.25), (1, 0.75))
        assert abs(similarity_color(a, b) - BHATT_TWO_TERM) < 1e-12

    def test_negative_bins_rejected(self):
        bad = np.zeros(512)
        bad[0] = -0.5
        bad[1] = 1.5
        with pytest.raises(DomainError):
            similarity_color(ColorHistogram(bad), hist((0, 1.0)))

    def test_unnormalized_rejected(self):
        bad = np.zeros(512)
        bad[0] = 0.7  # sums to 0.7, outside the 1e-6 band
        with pytest.raises(DomainError):
            similarity_color(ColorHistogram(bad), hist((0, 1.0)))
        with pytest.raises(DomainError):
            similarity_color(ColorHistogram(bad), ColorHistogram(bad.copy()))


class TestHybrid:
    def _rec(self, local, emb, histogram):
        return make_record(0, local, block_bitmap(4, 4, 0, 0, 2, 2), np.asarray(emb, dtype=np.float32),
                           histogram=histogram)

    def test_hand_blend(self):
        # embedding cosine 4/5 = 0.8 exactly, color sqrt(1*0.81) = 0.9 exactly
        a = self._rec(0, [1.0, 0.0, 0.0], hist((0, 1.0)))
        b = self._rec(1, [4.0, 3.0, 0.0], hist((0, 0.81), (1, 0.19)))
        assert abs(hybrid_similarity(a, b, alpha=0.3) - 0.83) < 1e-12

    def test_alpha_zero_is_pure_embedding(self):
        a = self._rec(0, [1.0, 1.0, 0.0], hist((0, 1.0)))
        b = self._rec(1, [1.0, 0.0, 0.0], hist((5, 1.0)))
        assert hybrid_similarity(a, b, alpha=0.0) == similarity_clip(a.embedding, b.embedding)

    def test_both_ones_any_alpha(self):
        a = self._rec(0, [1.0, 2.0, 3.0], hist((7, 1.0)))
        b = self._rec(1, [1.0, 2.0, 3.0], hist((7, 1.0)))
        for alpha in (0.0, 0.3, 1.0):
            assert hybrid_similarity(a, b, alpha=alpha) == 1.0

    def test_alpha_out_of_range(self):
        a = self._rec(0, [1.0, 0.0, 0.0], hist((0, 1.0)))
        with pytest.raises(DomainError):
            hybrid_similarity(a, a, alpha=1.5)


class TestCorrespondenceCount:
    def test_unique_receiver(self):
        a = block_bitmap(16, 16, 0, 0, 8, 8)
        b = block_bitmap(16, 16, 8, 8, 16, 16)
        pairs = np.column_stack([np.full(10, 3.0), np.full(10, 3.0),
                                 np.full(10, 10.0), np.full(10, 10.0)])
        assert count_mask_correspondences(pairs, a, b) == 10

    def test_endpoint_outside_mask_does_not_count(self):
        a = block_bitmap(16, 16, 0, 0, 8, 8)
        b = block_bitmap(16, 16, 8, 8, 16, 16)
        pairs = np.array([[3.0, 3.0, 2.0, 2.0]])  # lands outside b
        assert count_mask_correspondences(pairs, a, b) == 0

    def test_out_of_image_ignored(self):
        a = np.ones((8, 8), dtype=bool)
        pairs = np.array([[20.0, 0.0, 1.0, 1.0], [1.0, 1.0, 1.0, 1.0]])
        assert count_mask_correspondences(pairs, a, a) == 1

    def test_rounding_to_nearest_pixel(self):
        a = np.zeros((8, 8), dtype=bool)
        a[4, 4] = True
        pairs = np.array([[3.6, 4.4, 4.2, 3.8]])
        assert count_mask_correspondences(pairs, a, a) == 1


def one_hot(i, dim=4):
    v = np.zeros(dim, dtype=np.float32)
    v[i] = 1.0
    return v


class TestAlgorithmSweep:
    def test_single_view_initializes_identity(self):
        bitmaps = [[block_bitmap(32, 32, j * 6, 0, j * 6 + 4, 4) for j in range(5)]]
        ds = hand_dataset([[one_hot(j, 8) for j in range(5)]], bitmaps)
        res = cross_view_grid_mapping(ds)
        assert res.K == 5
        assert [res.idx[(0, j)] for j in range(5)] == [0, 1, 2, 3, 4]
        assert all(p == PROVENANCE_INIT for p in res.provenance.values())

    def test_all_dissimilar_no_matches_sums_counts(self):
        bitmaps = [
            [block_bitmap(32, 32, 0, 0, 4, 4), block_bitmap(32, 32, 8, 0, 12, 4)],
            [block_bitmap(32, 32, 0, 8, 4, 12), block_bitmap(32, 32, 8, 8, 12, 12),
             block_bitmap(32, 32, 16, 8, 20, 12)],
        ]
        embs = [[one_hot(0, 8), one_hot(1, 8)], [one_hot(2, 8), one_hot(3, 8), one_hot(4, 8)]]
        # distinct flat colors keep the color term below theta as well
        colors = [[(0.9, 0.1, 0.1), (0.1, 0.9, 0.1)],
                  [(0.1, 0.1, 0.9), (0.9, 0.9, 0.1), (0.1, 0.9, 0.9)]]
        ds = hand_dataset(embs, bitmaps, colors_by_view=colors)
        res = cross_view_grid_mapping(ds)
        assert res.K == 5
        assert [res.provenance[(1, j)] for j in range(3)] == [PROVENANCE_NEW] * 3

    def test_similarity_inheritance(self):
        bitmaps = [[block_bitmap(32, 32, 0, 0, 6, 6)], [block_bitmap(32, 32, 10, 10, 16, 16)]]
        ds = hand_dataset([[one_hot(0, 8)], [one_hot(0, 8)]], bitmaps)
        res = cross_view_grid_mapping(ds)
        assert res.K == 1
        assert res.idx[(1, 0)] == 0
        assert res.provenance[(1, 0)] == PROVENANCE_SIMILARITY

    def test_keypoint_inheritance_beats_similarity(self):
        b0 = block_bitmap(32, 32, 0, 0, 8, 8)
        b1 = block_bitmap(32, 32, 0, 0, 8, 8)
        matches = KeypointMatchSet()
        pts = np.array([[2.0, 2.0, 2.0, 2.0], [3.0, 2.0, 3.0, 2.0],
                        [2.0, 3.0, 2.0, 3.0], [4.0, 4.0, 4.0, 4.0]])
        matches.put(0, 1, pts)
        # orthogonal embeddings: similarity alone would open a new group
        ds = hand_dataset([[one_hot(0, 8)], [one_hot(1, 8)]], [[b0], [b1]], matches=matches)
        res = cross_view_grid_mapping(ds)
        assert res.K == 1
        assert res.provenance[(1, 0)] == PROVENANCE_KEYPOINT

    def test_keypoint_idx_independent_of_embeddings(self):
        b = block_bitmap(32, 32, 0, 0, 8, 8)
        pts = np.array([[float(i), float(i), float(i), float(i)] for i in range(2, 7)])
        rng = np.random.default_rng(0)
        assignments = []
        for trial in range(3):
            matches = KeypointMatchSet()
            matches.put(0, 1, pts)
            e0 = rng.standard_normal(8).astype(np.float32)
            e1 = rng.standard_normal(8).astype(np.float32)
            ds = hand_dataset([[e0]], [[b]], matches=matches)
            ds2 = hand_dataset([[e0], [e1]], [[b], [b.copy()]], matches=matches)
            res = cross_view_grid_mapping(ds2)
            assignments.append((res.idx[(1, 0)], res.provenance[(1, 0)]))
        assert assignments == [(0, PROVENANCE_KEYPOINT)] * 3

    def test_split_counts_highest_wins(self):
        # view-1 mask receives 6 pairs from view-0 mask 1 and 4 from mask 0
        m0 = block_bitmap(32, 32, 0, 0, 8, 8)
        m1 = block_bitmap(32, 32, 16, 0, 24, 8)
        target = block_bitmap(32, 32, 0, 16, 12, 28)
        rows = []
        for i in range(4):
            rows.append([2.0 + i, 2.0, 2.0 + i, 18.0])  # from m0
        for i in range(6):
            rows.append([18.0 + i % 3, 2.0 + i // 3, 3.0 + i, 20.0])  # from m1
        matches = KeypointMatchSet()
        matches.put(0, 1, np.array(rows))
        ds = hand_dataset(
            [[one_hot(0, 8), one_hot(1, 8)], [one_hot(2, 8)]],
            [[m0, m1], [target]],
            matches=matches,
        )
        res = cross_view_grid_mapping(ds)
        assert res.idx[(1, 0)] == 1

    def test_tie_breaks_to_earliest_key(self):
        # equal 4-pair counts into both view-0 masks: lowest (view, local) wins
        m0 = block_bitmap(32, 32, 0, 0, 8, 8)
        m1 = block_bitmap(32, 32, 16, 0, 24, 8)
        target = block_bitmap(32, 32, 0, 16, 12, 28)
        rows = []
        for i in range(4):
            rows.append([2.0 + i, 2.0, 2.0 + i, 18.0])
            rows.append([18.0 + i, 2.0, 3.0 + i, 20.0])
        matches = KeypointMatchSet()
        matches.put(0, 1, np.array(rows))
        ds = hand_dataset(
            [[one_hot(0, 8), one_hot(1, 8)], [one_hot(2, 8)]],
            [[m0, m1], [target]],
            matches=matches,
        )
        res = cross_view_grid_mapping(ds)
        assert res.idx[(1, 0)] == 0

    def test_masks_within_one_view_never_merge(self):
        # two identical-embedding masks in view 1 cannot join each other
        bitmaps = [
            [block_bitmap(32, 32, 0, 0, 4, 4)],
            [block_bitmap(32, 32, 8, 8, 12, 12), block_bitmap(32, 32, 16, 16, 20, 20)],
        ]
        ds = hand_dataset([[one_hot(0, 8)], [one_hot(1, 8), one_hot(1, 8)]], bitmaps)
        res = cross_view_grid_mapping(ds)
        assert res.idx[(1, 0)] != res.idx[(1, 1)]
        assert res.K == 3

    def test_later_view_joins_via_pool(self):
        # the view-2 mask matches the view-1 group added to the pool
        bitmaps = [
            [block_bitmap(32, 32, 0, 0, 4, 4)],
            [block_bitmap(32, 32, 8, 8, 12, 12)],
            [block_bitmap(32, 32, 16, 16, 20, 20)],
        ]
        ds = hand_dataset([[one_hot(0, 8)], [one_hot(1, 8)], [one_hot(1, 8)]], bitmaps)
        res = cross_view_grid_mapping(ds)
        assert res.idx[(2, 0)] == res.idx[(1, 0)]
        assert res.K == 2

    def test_window_limits_the_pool(self):
        bitmaps = [
            [block_bitmap(32, 32, 0, 0, 4, 4)],
            [block_bitmap(32, 32, 8, 8, 12, 12)],
            [block_bitmap(32, 32, 16, 16, 20, 20)],
        ]
        embs = [[one_hot(0, 8)], [one_hot(1, 8)], [one_hot(0, 8)]]
        colors = [[(0.9, 0.1, 0.1)], [(0.1, 0.9, 0.1)], [(0.9, 0.1, 0.1)]]
        ds = hand_dataset(embs, bitmaps, colors_by_view=colors)
        full = cross_view_grid_mapping(ds)
        assert full.K == 2 and full.idx[(2, 0)] == full.idx[(0, 0)]
        windowed = cross_view_grid_mapping(ds, MatchParams(window=1))
        assert windowed.K == 3
        assert windowed.provenance[(2, 0)] == PROVENANCE_NEW

    def test_empty_dataset_rejected(self):
        ds = hand_dataset([[one_hot(0, 8)]], [[block_bitmap(32, 32, 0, 0, 4, 4)]])
        ds.masks = [[]]
        with pytest.raises(DomainError, match="nothing to map"):
            cross_view_grid_mapping(ds)

    def test_theta_monotone_in_group_count(self):
        for seed in range(3):
            scene = generate_synthetic_scene(
                SyntheticSceneSpec(n_objects=5, n_views=4, width=64, height=64, seed=seed,
                                   n_gaussians_per_object=64, embedding_noise=0.05)
            )
            ks = [
                cross_view_grid_mapping(scene.dataset, MatchParams(theta=th),
                                        use_keypoints=False).K
                for th in (0.85, 0.95, 0.99)
            ]
            assert ks[0] <= ks[1] <= ks[2]

    def test_noise_free_scene_recovers_truth(self, small_scene):
        res = cross_view_grid_mapping(small_scene.dataset)
        keys = sorted(res.idx)
        truth = [small_scene.mask_objects[k] for k in keys]
        pred = [res.idx[k] for k in keys]
        assert res.K == small_scene.spec.n_objects
        assert adjusted_rand_score(truth, pred) == 1.0

    def test_determinism(self, small_scene):
        a = cross_view_grid_mapping(small_scene.dataset)
        b = cross_view_grid_mapping(small_scene.dataset)
        assert a.idx == b.idx and a.provenance == b.provenance and a.K == b.K

    def test_apply_mapping_stamps_records(self, small_scene):
        res = cross_view_grid_mapping(small_scene.dataset)
        apply_mapping(small_scene.dataset, res)
        for rec in small_scene.dataset.all_masks():
            assert rec.idx == res.idx[rec.key]


class TestLattice:
    @pytest.mark.parametrize(
        "k,side", [(1, 1), (2, 2), (8, 2), (9, 3), (27, 3), (28, 4), (64, 4), (65, 5)]
    )
    def test_side_is_minimal_cube(self, k, side):
        assert lattice_side(k) == side
        assert lattice_side(k) ** 3 >= k
        assert (lattice_side(k) - 1) ** 3 < k

    def test_k_zero_rejected(self):
        with pytest.raises(DomainError):
            lattice_side(0)

    def test_unrank_last_axis_fastest(self):
        assert [lattice_coords(o, 2) for o in range(4)] == [
            (0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1)
        ]
        assert lattice_coords(7, 2) == (1, 1, 1)

    def _lattice_for(self, k):
        bitmaps = [[
            block_bitmap(64, 64, 6 * (j % 10), 8 * (j // 10), 6 * (j % 10) + 4, 8 * (j // 10) + 4)
            for j in range(k)
        ]]
        ds = hand_dataset([[one_hot(j, max(k, 2)) for j in range(k)]], bitmaps, width=64, height=64)
        res = cross_view_grid_mapping(ds)
        return build_lattice(res, ds)

    def test_k8_centers_exact(self):
        lat = self._lattice_for(8)
        assert lat.side == 2 and lat.edge == 0.5
        centers = lat.centers()
        assert sorted(map(tuple, centers)) == sorted(
            [(a, b, c) for a in (0.25, 0.75) for b in (0.25, 0.75) for c in (0.25, 0.75)]
        )

    def test_k1_degenerate(self):
        lat = self._lattice_for(1)
        assert lat.side == 1
        assert np.array_equal(lat.cells[0].center, [0.5, 0.5, 0.5])

    def test_k9_partial_occupancy(self):
        lat = self._lattice_for(9)
        assert lat.side == 3 and abs(lat.edge - 1 / 3) < 1e-15
        assert len(lat.cells) == 9

    @pytest.mark.parametrize("k", [1, 2, 5, 8, 9, 12])
    def test_centers_distinct_with_margin(self, k):
        lat = self._lattice_for(k)
        centers = lat.centers()
        if k > 1:
            d = np.linalg.norm(centers[:, None] - centers[None, :], axis=-1)
            # nearest-center round trip maps each center to itself
            assert np.array_equal(np.argmin(d, axis=1), np.arange(k))
            np.fill_diagonal(d, np.inf)
            assert d.min() >= lat.edge - 1e-9
        for cell in lat.cells:
            assert np.all(cell.center > 0) and np.all(cell.center < 1)
            assert cell.entries
            norms = np.linalg.norm(cell.embeddings, axis=1)
            assert np.allclose(norms, 1.0, atol=1e-12)

    def test_gap_in_groups_rejected(self):
        bitmaps = [[block_bitmap(32, 32, 0, 0, 4, 4)]]
        ds = hand_dataset([[one_hot(0, 4)]], bitmaps)
        broken = MappingResult(idx={(0, 0): 1}, provenance={(0, 0): "init"}, K=2)
        with pytest.raises(DomainError, match="no member"):
            build_lattice(broken, ds)


class TestBake:
    def _setup(self):
        big = block_bitmap(32, 32, 0, 0, 20, 20)
        small = block_bitmap(32, 32, 0, 0, 5, 4)  # nested inside big, area 20
        ds = hand_dataset([[one_hot(0, 4), one_hot(1, 4)]], [[big, small]])
        res = cross_view_grid_mapping(ds)
        lat = build_lattice(res, ds)
        return ds, res, lat

    def test_single_cover_paints_center(self):
        ds, res, lat = self._setup()
        targets, coverages = bake_feature_maps(ds, res, lat)
        c_big = lat.cells[res.idx[(0, 0)]].center
        assert np.array_equal(targets[0][10, 10], c_big)
        assert coverages[0][10, 10]

    def test_overlap_smallest_area_wins(self):
        ds, res, lat = self._setup()
        targets, _ = bake_feature_maps(ds, res, lat)
        c_small = lat.cells[res.idx[(0, 1)]].center
        assert np.array_equal(targets[0][2, 2], c_small)

    def test_uncovered_pixel_null_and_flagged(self):
        ds, res, lat = self._setup()
        targets, coverages = bake_feature_maps(ds, res, lat)
        assert np.array_equal(targets[0][30, 30], [0.0, 0.0, 0.0])
        assert not coverages[0][30, 30]

    def test_deterministic(self):
        ds, res, lat = self._setup()
        t1, c1 = bake_feature_maps(ds, res, lat)
        t2, c2 = bake_feature_maps(ds, res, lat)
        assert t1[0].tobytes() == t2[0].tobytes()
        assert np.array_equal(c1[0], c2[0])


class TestMappingIO:
    def test_round_trip(self, tmp_path, small_scene):
        res = cross_view_grid_mapping(small_scene.dataset, MatchParams(theta=0.9, window=2))
        path = tmp_path / "mapping.json"
        save_mapping(res, path)
        back = load_mapping(path)
        assert back.idx == res.idx
        assert back.provenance == res.provenance
        assert back.K == res.K
        assert back.params == res.params

    def test_unreadable_file_raises_format_error(self, tmp_path):
        path = tmp_path / "mapping.json"
        path.write_text("{broken")
        with pytest.raises(FormatError):
            load_mapping(path)
