"""Evaluation metrics: IoU, accuracies, AP machinery, and the full reports."""

import numpy as np
import pytest

from sgrec.metrics import (EvalReport, evaluate, group_activity_accuracy, iou,
                           members_pair_within_iou, social_group_accuracy,
                           social_group_map)
from sgrec.scene import PredictionSet
from helpers import (collective_fp_first_fixture, make_group, make_prediction,
                     make_scene, volleyball_fixture, N_ID_FIXTURE)


class TestIoU:
    def test_identical_boxes(self):
        assert iou([0.1, 0.1, 0.4, 0.4], [0.1, 0.1, 0.4, 0.4]) == 1.0

    def test_disjoint_boxes(self):
        assert iou([0.0, 0.0, 0.2, 0.2], [0.5, 0.5, 0.7, 0.7]) == 0.0

    def test_half_overlap_is_one_third(self):
        assert iou([0, 0, 1, 1], [0.5, 0, 1.5, 1]) == 1 / 3

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError):
            iou([0.2, 0.2, 0.2, 0.4], [0.1, 0.1, 0.3, 0.3])

    def test_touching_boxes_have_zero_iou(self):
        assert iou([0, 0, 0.5, 1], [0.5, 0, 1, 1]) == 0.0


class TestMemberPairing:
    def test_count_mismatch_fails(self):
        assert not members_pair_within_iou(np.array([[0.1, 0.1, 0.2, 0.2]]),
                                           np.array([[0.1, 0.1, 0.2, 0.2],
                                                     [0.5, 0.5, 0.6, 0.6]]))

    def test_needs_every_pair_above_threshold(self):
        gt = np.array([[0.1, 0.1, 0.3, 0.3], [0.6, 0.6, 0.8, 0.8]])
        ok = members_pair_within_iou(gt.copy(), gt, 0.5)
        assert ok
        shifted = gt.copy()
        shifted[1] += 0.15  # IoU drops below 0.5 for the second pair
        assert iou(shifted[1], gt[1]) < 0.5
        assert not members_pair_within_iou(shifted, gt, 0.5)

    def test_pairing_resolves_crossed_order(self):
        gt = np.array([[0.1, 0.1, 0.3, 0.3], [0.6, 0.6, 0.8, 0.8]])
        assert members_pair_within_iou(gt[::-1].copy(), gt, 0.5)


def one_scene(gt_class, pred_class, prob=0.9):
    g = make_group([1 if c == gt_class else 0 for c in range(3)], [[0.5, 0.5]], 0.1, 0.1)
    probs = [0.05] * 3
    probs[pred_class] = prob
    pred = make_prediction(probs, 0.25, [[0.5, 0.5]], N_ID_FIXTURE)
    return make_scene(f"s{gt_class}{pred_class}", [g]), PredictionSet(
        f"s{gt_class}{pred_class}", (pred,))


class TestGroupActivityAccuracy:
    def test_all_correct(self):
        scenes = [one_scene(c, c) for c in range(3)]
        assert group_activity_accuracy(scenes) == 100.0

    def test_all_wrong(self):
        scenes = [one_scene(c, (c + 1) % 3) for c in range(3)]
        assert group_activity_accuracy(scenes) == 0.0

    def test_two_of_three(self):
        scenes = [one_scene(0, 0), one_scene(1, 1), one_scene(2, 0)]
        assert group_activity_accuracy(scenes) == pytest.approx(200 / 3, rel=1e-12)

    def test_takes_the_globally_highest_probability(self):
        g = make_group([1, 0, 0], [[0.5, 0.5]], 0.1, 0.1)
        right = make_prediction([0.6, 0.1, 0.1], 0.25, [[0.5, 0.5]], N_ID_FIXTURE)
        loud_wrong = make_prediction([0.1, 0.9, 0.1], 0.25, [[0.5, 0.5]], N_ID_FIXTURE)
        scenes = [(make_scene("t", [g]), PredictionSet("t", (right, loud_wrong)))]
        assert group_activity_accuracy(scenes) == 0.0


class TestSocialGroupAccuracy:
    def test_handcrafted_fixture(self):
        scenes, expected = volleyball_fixture()
        acc, per_class = social_group_accuracy(scenes)
        assert acc == expected["social_group_accuracy"]
        assert {str(k): v for k, v in per_class.items()} == expected["per_class_accuracy"]

    def test_threshold_monotonicity(self):
        scenes, _ = volleyball_fixture()
        accs = [social_group_accuracy(scenes, iou_thresh=t)[0]
                for t in (0.3, 0.5, 0.7)]
        assert accs[0] >= accs[1] >= accs[2]

    def test_multi_group_scene_rejected(self):
        g = make_group([1], [[0.3, 0.3]])
        scene = make_scene("m", [g, g])
        preds = PredictionSet("m", (make_prediction([0.9], 0.25, [[0.3, 0.3]], 4),))
        with pytest.raises(ValueError, match="one ground-truth group"):
            social_group_accuracy([(scene, preds)])

    def test_exact_size_rule_togglable(self):
        # prediction sees both members but claims only one point budget of 2
        g = make_group([1], [[0.4, 0.5], [0.6, 0.5]], 0.05, 0.05)
        scene = make_scene("z", [g])
        pred = make_prediction([0.9], 0.25, [[0.4, 0.5]], N_ID_FIXTURE)  # m=1, S=2
        preds = PredictionSet("z", (pred,))
        strict, _ = social_group_accuracy([(scene, preds)], require_exact_size=True)
        assert strict == 0.0


class TestSocialGroupMap:
    def test_single_match_full_marks(self):
        scenes, _ = volleyball_fixture()
        scene_a = scenes[0]
        mean_ap, per_class = social_group_map([scene_a])
        assert mean_ap == 100.0 and per_class == {0: 100.0}

    def test_fp_ranked_first_halves_ap(self):
        scenes, expected = collective_fp_first_fixture()
        mean_ap, per_class = social_group_map(scenes)
        assert mean_ap == expected["map"]
        assert {str(k): v for k, v in per_class.items()} == expected["per_class_ap"]

    def test_duplicate_prediction_of_one_gt_counts_fp(self):
        g = make_group([1, 0, 0], [[0.5, 0.5]], 0.1, 0.1)
        scene = make_scene("dup", [g])
        hit = make_prediction([0.9, 0.1, 0.1], 0.25, [[0.5, 0.5]], N_ID_FIXTURE)
        again = make_prediction([0.8, 0.1, 0.1], 0.25, [[0.5, 0.5]], N_ID_FIXTURE)
        mean_ap, per_class = social_group_map([(scene, PredictionSet("dup", (hit, again)))])
        assert per_class[0] == 100.0  # second is FP after recall 1.0; AP unaffected
        precisionless = social_group_map([(scene, PredictionSet("dup", (again, hit)))])
        assert precisionless[0] == 100.0

    def test_ap_invariant_under_monotone_score_transform(self):
        scenes, _ = collective_fp_first_fixture()
        base, _ = social_group_map(scenes)
        gt, preds = scenes[0]
        squashed = PredictionSet(preds.image_id, tuple(
            make_prediction(np.sqrt(p.activity_probs) * 0.9, p.size,
                            p.member_points, N_ID_FIXTURE)
            for p in preds.predictions))
        trans, _ = social_group_map([(gt, squashed)])
        assert trans == base

    def test_class_without_gt_excluded(self):
        scenes, _ = collective_fp_first_fixture()
        _, per_class = social_group_map(scenes)
        assert set(per_class) == {0}

    def test_eleven_point_interpolation_variant(self):
        scenes, _ = collective_fp_first_fixture()
        # envelope precision is 1/2 for every recall level > 0, and also at
        # recall 0 (the envelope extends left), so all 11 samples read 0.5
        mean_ap, _ = social_group_map(scenes, interpolation="eleven_point")
        assert mean_ap == pytest.approx(50.0, rel=1e-12)
        scene_hit, _ = volleyball_fixture()
        perfect, _ = social_group_map([scene_hit[0]], interpolation="eleven_point")
        assert perfect == pytest.approx(100.0, rel=1e-12)
        with pytest.raises(ValueError, match="interpolation"):
            social_group_map(scenes, interpolation="two_point")


class TestEvaluate:
    def test_volleyball_fixture_report(self):
        scenes, expected = volleyball_fixture()
        report = evaluate(scenes, protocol="volleyball")
        assert report.to_json() == expected

    def test_collective_fixture_report(self):
        scenes, expected = collective_fp_first_fixture()
        report = evaluate(scenes, protocol="collective")
        assert report.to_json() == expected

    def test_perfect_synthetic_predictions_score_100(self):
        scenes = [one_scene(c, c) for c in range(3)]
        report = evaluate(scenes, protocol="volleyball")
        assert report.group_activity_accuracy == 100.0
        assert report.social_group_accuracy == 100.0
        assert report.duplicated_ratio == 0.0
        assert report.size_accuracy == 100.0
        collective = evaluate(scenes, protocol="collective")
        assert collective.map == 100.0

    def test_report_json_omits_undefined(self):
        scenes, _ = volleyball_fixture()
        doc = evaluate(scenes, protocol="volleyball").to_json()
        assert "map" not in doc and "per_class_ap" not in doc

    def test_unknown_protocol(self):
        scenes, _ = volleyball_fixture()
        with pytest.raises(ValueError, match="protocol"):
            evaluate(scenes, protocol="basketball")

    def test_class_count_mismatch_rejected(self):
        scenes, _ = volleyball_fixture()
        bad = PredictionSet("x", (make_prediction([0.5, 0.5], 0.25,
                                                  [[0.5, 0.5]], N_ID_FIXTURE),))
        g = make_group([1, 0], [[0.5, 0.5]])
        with pytest.raises(ValueError, match="classes"):
            evaluate(scenes + [(make_scene("x", [g]), bad)], protocol="volleyball")

    def test_percentages_in_range(self):
        scenes, _ = volleyball_fixture()
        doc = evaluate(scenes, protocol="volleyball").to_json()
        for key, value in doc.items():
            vals = value.values() if isinstance(value, dict) else [value]
            for v in vals:
                assert 0.0 <= v <= 100.0, key


def test_report_dumps_is_stable_json():
    report = EvalReport(group_activity_accuracy=75.0, per_class_accuracy={1: 50.0, 0: 25.0})
    text = report.dumps()
    assert text.index('"0"') < text.index('"1"')
    assert text.endswith("\n")


def test_report_per_class_csv():
    report = EvalReport(per_class_accuracy={0: 25.0, 2: 75.0},
                        per_class_ap={0: 50.0})
    lines = report.per_class_csv().splitlines()
    assert lines[0] == "class,accuracy,ap"
    assert lines[1] == "0,25.0,50.0"
    assert lines[2] == "2,75.0,"
