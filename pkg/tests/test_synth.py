"""Synthetic scene generation: determinism, geometry bounds, binning."""

import numpy as np
import pytest

from sgrec.scene import f32, load_feature_maps, load_scene, save_feature_maps, save_scene
from sgrec.synth import (SynthConfig, generate_corpus, generate_scene,
                         max_member_distance, sweep_bins)


class TestGenerateScene:
    def test_fixed_seed_bit_identical(self):
        cfg = SynthConfig(seed=9, jitter_sigma=0.004, false_positive_rate=0.3)
        a_scene, a_maps = generate_scene(cfg, 2)
        b_scene, b_maps = generate_scene(cfg, 2)
        assert a_scene.image_id == b_scene.image_id
        for ga, gb in zip(a_scene.groups, b_scene.groups):
            np.testing.assert_array_equal(ga.member_points, gb.member_points)
            np.testing.assert_array_equal(ga.member_boxes, gb.member_boxes)
        np.testing.assert_array_equal(a_scene.individual_boxes, b_scene.individual_boxes)
        for la, lb in zip(a_maps.levels, b_maps.levels):
            np.testing.assert_array_equal(la.data, lb.data)

    def test_different_indices_differ(self):
        cfg = SynthConfig(seed=9)
        a, _ = generate_scene(cfg, 0)
        b, _ = generate_scene(cfg, 1)
        assert a.image_id != b.image_id

    def test_scenes_pass_model_validation(self):
        cfg = SynthConfig(seed=1, n_scenes=6, jitter_sigma=0.002,
                          false_positive_rate=0.5, groups_per_scene=(1, 3))
        for scene, maps in generate_corpus(cfg):
            scene.validate(cfg.n_id)  # raises on any invariant violation
            assert len(maps.levels) == cfg.n_levels

    def test_spread_bounds_pairwise_distance(self):
        for spread in (0.0, 0.05, 0.3):
            cfg = SynthConfig(seed=3, spread=spread, group_size=(4, 6), n_id=8)
            scene, _ = generate_scene(cfg, 0)
            for group in scene.groups:
                assert max_member_distance(group) <= spread

    def test_zero_spread_collapses_members_to_one_point(self):
        cfg = SynthConfig(seed=4, spread=0.0, group_size=(3, 3))
        scene, _ = generate_scene(cfg, 0)
        for group in scene.groups:
            assert np.all(group.member_points == group.member_points[0])

    def test_zero_noise_individual_centers_equal_points(self):
        cfg = SynthConfig(seed=5, jitter_sigma=0.0, false_positive_rate=0.0)
        scene, _ = generate_scene(cfg, 0)
        points = np.vstack([g.member_points for g in scene.groups])
        centers = (scene.individual_boxes[:, :2] + scene.individual_boxes[:, 2:]) / 2.0
        np.testing.assert_array_equal(centers, points)

    def test_points_are_box_centers(self):
        cfg = SynthConfig(seed=6)
        scene, _ = generate_scene(cfg, 1)
        for group in scene.groups:
            centers = (group.member_boxes[:, :2] + group.member_boxes[:, 2:]) / 2.0
            np.testing.assert_array_equal(centers, group.member_points)

    def test_file_round_trip_is_exact(self, tmp_path):
        cfg = SynthConfig(seed=7, jitter_sigma=0.003, false_positive_rate=0.4)
        scene, maps = generate_scene(cfg, 0)
        save_scene(scene, tmp_path / "s.json")
        loaded = load_scene(tmp_path / "s.json", n_id=cfg.n_id)
        for ga, gb in zip(loaded.groups, scene.groups):
            np.testing.assert_array_equal(ga.member_points, gb.member_points)
        np.testing.assert_array_equal(loaded.individual_boxes, scene.individual_boxes)
        np.testing.assert_array_equal(loaded.individual_scores, scene.individual_scores)
        save_feature_maps(maps, tmp_path / "m.manifest.json")
        reloaded = load_feature_maps(tmp_path / "m.manifest.json")
        for la, lb in zip(reloaded.levels, maps.levels):
            np.testing.assert_array_equal(la.data, f32(lb.data))

    def test_infeasible_spread_raises(self):
        with pytest.raises(ValueError, match="no room"):
            generate_scene(SynthConfig(seed=0, spread=2.5), 0)

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            SynthConfig(group_size=(5, 3))
        with pytest.raises(ValueError):
            SynthConfig(group_size=(1, 20), n_id=12)
        with pytest.raises(ValueError):
            SynthConfig(map_sizes=((16, 16),))  # n_levels defaults to 2


class TestSweepBins:
    def scene_with(self, size, dist):
        from helpers import make_group, make_scene
        pts = [[0.3 + i * dist / max(size - 1, 1), 0.5] for i in range(size)]
        return make_scene(f"sw{size}{dist}", [make_group([1], pts)])

    def test_single_scene_lands_in_one_bin(self):
        scenes = [self.scene_with(3, 0.15)]
        bins = sweep_bins(scenes, distance_edges=(0.1, 0.2, 0.3))
        assert bins.count(3, 1) == 1
        assert sum(len(v) for v in bins.members.values()) == 1

    def test_boundary_goes_to_lower_bin(self):
        scenes = [self.scene_with(2, 0.2)]
        bins = sweep_bins(scenes, distance_edges=(0.1, 0.2, 0.3))
        assert bins.count(2, 1) == 1 and bins.count(2, 2) == 0

    def test_counts_match_construction(self):
        scenes = ([self.scene_with(2, 0.05)] * 3 + [self.scene_with(4, 0.25)] * 2
                  + [self.scene_with(2, 0.45)])
        bins = sweep_bins(scenes, distance_edges=(0.1, 0.2, 0.3))
        assert bins.count(2, 0) == 3
        assert bins.count(4, 2) == 2
        assert bins.count(2, 3) == 1
        assert bins.members[(4, 2)] == ((3, 0), (4, 0))

    def test_overflow_bin_and_labels(self):
        bins = sweep_bins([self.scene_with(2, 0.6)], distance_edges=(0.1, 0.5))
        assert bins.count(2, 2) == 1
        assert bins.distance_label(0) == "[0, 0.1]"
        assert bins.distance_label(1) == "(0.1, 0.5]"
        assert bins.distance_label(2) == "(0.5, inf)"

    def test_bad_edges(self):
        with pytest.raises(ValueError):
            sweep_bins([self.scene_with(2, 0.1)], distance_edges=(0.2, 0.2))
        with pytest.raises(ValueError):
            sweep_bins([], distance_edges=(0.1,))
