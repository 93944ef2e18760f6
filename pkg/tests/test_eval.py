"""Metrics, the pipeline driver, and grouping ablations."""

import dataclasses
import json

import numpy as np
import pytest

from gridfield import (
    ABLATION_CONFIGS,
    DomainError,
    MatchParams,
    SyntheticSceneSpec,
    TrainConfig,
    build_lattice,
    cross_view_grid_mapping,
    evaluate_field,
    evaluate_mapping,
    generate_synthetic_scene,
    localization_hit,
    mask_metrics,
    preferred_query_view,
    run_ablation,
    run_pipeline,
)

from conftest import block_bitmap


def scene_queries(scene):
    return [
        {
            "name": f"object_{k}",
            "view": preferred_query_view(scene.id_maps, k),
            "label": k,
            "embedding": scene.protos[k].tolist(),
        }
        for k in range(scene.spec.n_objects)
    ]


class TestMaskMetrics:
    def test_identical_masks(self):
        m = block_bitmap(10, 10, 2, 2, 6, 6)
        out = mask_metrics(m, m)
        assert (out.iou, out.precision, out.recall, out.accuracy) == (1.0, 1.0, 1.0, 1.0)

    def test_disjoint_tenths(self):
        # 10 predicted and 10 true pixels, no overlap, on a 100-pixel image
        pred = block_bitmap(10, 10, 0, 0, 10, 1)
        truth = block_bitmap(10, 10, 0, 5, 10, 6)
        out = mask_metrics(pred, truth)
        assert out.iou == 0.0
        assert out.precision == 0.0
        assert out.recall == 0.0
        assert out.accuracy == 0.8

    def test_double_area_dilation(self):
        truth = block_bitmap(10, 10, 0, 0, 10, 1)
        pred = block_bitmap(10, 10, 0, 0, 10, 2)  # superset, twice the area
        out = mask_metrics(pred, truth)
        assert out.iou == 0.5
        assert out.precision == 0.5
        assert out.recall == 1.0

    def test_iou_is_symmetric(self):
        rng = np.random.default_rng(0)
        a = rng.random((12, 12)) < 0.4
        b = rng.random((12, 12)) < 0.4
        assert mask_metrics(a, b).iou == mask_metrics(b, a).iou

    def test_empty_vs_empty_is_perfect(self):
        z = np.zeros((8, 8), bool)
        out = mask_metrics(z, z)
        assert (out.iou, out.precision, out.recall, out.accuracy) == (1.0, 1.0, 1.0, 1.0)

    def test_empty_prediction_misses_truth(self):
        z = np.zeros((8, 8), bool)
        truth = block_bitmap(8, 8, 0, 0, 4, 4)
        out = mask_metrics(z, truth)
        assert out.iou == 0.0
        assert out.recall == 0.0
        assert out.precision == 1.0  # vacuous: nothing predicted wrongly

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DomainError, match="shapes differ"):
            mask_metrics(np.zeros((4, 4), bool), np.zeros((4, 5), bool))


class TestLocalizationHit:
    def test_inside_and_boundary(self):
        box = (2, 3, 6, 8)
        assert localization_hit((4, 5), box)
        assert localization_hit((2, 3), box)  # inclusive corners
        assert localization_hit((6, 8), box)

    def test_outside(self):
        box = (2, 3, 6, 8)
        assert not localization_hit((1, 5), box)
        assert not localization_hit((4, 9), box)

    def test_missing_box_is_a_miss(self):
        assert not localization_hit((0, 0), None)


@pytest.fixture(scope="module")
def trained_scene():
    spec = SyntheticSceneSpec(
        n_objects=4, n_views=3, width=64, height=64, seed=3, n_gaussians_per_object=64
    )
    scene = generate_synthetic_scene(spec)
    artifacts = run_pipeline(
        scene.dataset, scene.cloud, train_cfg=TrainConfig(iterations=150)
    )
    return scene, artifacts


class TestRunPipeline:
    def test_artifacts_are_consistent(self, trained_scene):
        scene, arts = trained_scene
        assert arts.lattice.K == arts.mapping.K == scene.spec.n_objects
        assert len(arts.history) == 150
        assert arts.history[-1] < 0.05
        assert arts.field.cloud is arts.trained
        assert not np.array_equal(arts.trained.features, scene.cloud.features)

    def test_field_evaluation_report(self, trained_scene):
        scene, arts = trained_scene
        queries = scene_queries(scene)
        rep = evaluate_field(arts.field, queries, scene.id_maps)
        assert len(rep.per_query) == 4
        assert [q.name for q in rep.per_query] == [f"object_{k}" for k in range(4)]
        assert rep.mean_iou == pytest.approx(np.mean([q.iou for q in rep.per_query]))
        assert rep.mean_iou > 0.9
        assert rep.localization_accuracy == 1.0
        assert rep.K == 4
        assert all(q.iou > 0.9 for q in rep.per_query)

    def test_report_serialization(self, trained_scene, tmp_path):
        scene, arts = trained_scene
        rep = evaluate_field(
            arts.field, scene_queries(scene), scene.id_maps, config={"note": "x"}
        )
        out = tmp_path / "report.json"
        rep.save(out)
        loaded = json.loads(out.read_text())
        assert loaded["K"] == 4
        assert loaded["config"] == {"note": "x"}
        assert len(loaded["per_query"]) == 4
        assert set(loaded["per_query"][0]) == {"name", "view", "iou", "hit", "object_id"}


class TestEvaluateMapping:
    @pytest.fixture()
    def grouped(self, trained_scene):
        scene, _ = trained_scene
        mapping = cross_view_grid_mapping(scene.dataset, MatchParams())
        lattice = build_lattice(mapping, scene.dataset)
        return scene, mapping, lattice

    def test_perfect_grouping_scores_one(self, grouped):
        scene, mapping, lattice = grouped
        rep = evaluate_mapping(
            scene.dataset, mapping, lattice, scene_queries(scene), scene.id_maps
        )
        assert rep.mean_iou == 1.0
        assert rep.localization_accuracy == 1.0
        assert rep.K == 4

    def test_merged_groups_inflate_prediction(self, grouped):
        scene, mapping, lattice = grouped
        queries = scene_queries(scene)
        q = queries[0]
        cell = next(
            mapping.idx[r.key]
            for r in scene.dataset.masks[q["view"]]
            if scene.mask_objects[r.key] == q["label"]
        )
        other = next(
            r.key
            for r in scene.dataset.masks[q["view"]]
            if scene.mask_objects[r.key] != q["label"]
        )
        merged = dataclasses.replace(mapping, idx={**mapping.idx, other: cell})
        rep = evaluate_mapping(
            scene.dataset, merged, lattice, [q], scene.id_maps
        )
        a = scene.id_maps[q["view"]] == q["label"]
        b = scene.id_maps[q["view"]] == scene.mask_objects[other]
        expected = a.sum() / (a | b).sum()
        assert rep.mean_iou == pytest.approx(expected, abs=1e-12)
        assert rep.mean_iou < 1.0

    def test_split_group_leaves_empty_prediction(self, grouped):
        scene, mapping, lattice = grouped
        queries = scene_queries(scene)
        q = queries[0]
        key = next(
            r.key
            for r in scene.dataset.masks[q["view"]]
            if scene.mask_objects[r.key] == q["label"]
        )
        # exile the query view's mask to a different cell: top cell goes empty
        split = dataclasses.replace(
            mapping, idx={**mapping.idx, key: (mapping.idx[key] + 1) % mapping.K}
        )
        rep = evaluate_mapping(scene.dataset, split, lattice, [q], scene.id_maps)
        assert rep.per_query[0].iou == 0.0
        assert rep.per_query[0].hit is False

    def test_needs_canonical(self, grouped):
        scene, mapping, lattice = grouped
        bare = dataclasses.replace(scene.dataset, canonical=None)
        with pytest.raises(DomainError, match="canonical"):
            evaluate_mapping(bare, mapping, lattice, scene_queries(scene), scene.id_maps)


@pytest.fixture(scope="module")
def noisy_reports():
    spec = SyntheticSceneSpec(
        n_objects=4, n_views=3, width=64, height=64, seed=0,
        n_gaussians_per_object=64, embedding_noise=0.043, match_dropout=0.5,
    )
    scene = generate_synthetic_scene(spec)
    return scene, run_ablation(scene.dataset, scene_queries(scene), scene.id_maps)


class TestRunAblation:
    def test_configs_and_echo(self, noisy_reports):
        _, reports = noisy_reports
        assert list(reports) == list(ABLATION_CONFIGS) == ["embedding", "keypoints", "full"]
        assert reports["embedding"].config["use_keypoints"] is False
        assert reports["keypoints"].config["alpha_used"] == 0.0
        assert reports["full"].config["alpha_used"] == MatchParams().alpha

    def test_each_ingredient_helps_on_noisy_scene(self, noisy_reports):
        _, reports = noisy_reports
        ious = [r.mean_iou for r in reports.values()]
        assert ious[0] <= ious[1] <= ious[2]
        ks = [r.K for r in reports.values()]
        assert ks[0] >= ks[1] >= ks[2]
        assert reports["full"].K == 4
        assert reports["full"].mean_iou == 1.0

    def test_clean_scene_is_insensitive(self, trained_scene):
        scene, _ = trained_scene
        reports = run_ablation(scene.dataset, scene_queries(scene), scene.id_maps)
        for rep in reports.values():
            assert rep.mean_iou == 1.0
            assert rep.K == 4
