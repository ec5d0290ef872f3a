"""Shared fixture builders and independent oracles used across test modules."""

from __future__ import annotations

import numpy as np

from sgrec.matching import LossWeights, MatchResult, set_loss
from sgrec.scene import (GroundTruthGroup, GroupPrediction, PredictionSet,
                         SceneGroundTruth, sort_member_points)


def make_group(activity, points, half_w=0.02, half_h=0.02):
    """GT group with boxes centered on the given points."""
    points = np.asarray(points, dtype=np.float64)
    points = sort_member_points(points)
    boxes = np.column_stack([points[:, 0] - half_w, points[:, 1] - half_h,
                             points[:, 0] + half_w, points[:, 1] + half_h])
    return GroundTruthGroup(activity=np.asarray(activity, dtype=np.int64),
                            size=len(points), member_points=points,
                            member_boxes=boxes)


def make_scene(image_id, groups, individual_boxes=None, individual_scores=None):
    if individual_boxes is None:
        individual_boxes = (np.vstack([g.member_boxes for g in groups])
                            if groups else np.zeros((0, 4)))
        individual_scores = np.ones(len(individual_boxes))
    return SceneGroundTruth(image_id=image_id, groups=tuple(groups),
                            individual_boxes=np.asarray(individual_boxes, dtype=np.float64),
                            individual_scores=np.asarray(individual_scores, dtype=np.float64))


def make_prediction(probs, size, points, n_id):
    """Prediction padded with filler points up to n_id."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(points) < n_id:
        fill = np.linspace(0.91, 0.99, n_id - len(points))
        points = np.vstack([points, np.column_stack([fill, fill])])
    return GroupPrediction(activity_probs=np.asarray(probs, dtype=np.float64),
                           size=float(size), member_points=points[:n_id])


def random_loss_instance(rng, n_preds=4, n_real=2, n_id=5, n_v=4, margin=1e-3):
    """Random (scene, predictions) whose matched L1 terms stay off their kinks.

    Coordinates too close to a ground-truth coordinate are nudged away so
    central finite differences never straddle a non-differentiable point.
    """
    groups = []
    for _ in range(n_real):
        size = int(rng.integers(1, n_id + 1))
        pts = rng.uniform(0.1, 0.9, (size, 2))
        activity = np.zeros(n_v, dtype=np.int64)
        activity[rng.integers(n_v)] = 1
        if rng.uniform() < 0.3:
            activity[rng.integers(n_v)] = 1
        groups.append(make_group(activity, pts))
    scene = make_scene("rand", groups)

    gt_coords = np.concatenate([g.member_points.ravel() for g in groups])
    gt_sizes = np.array([g.size / n_id for g in groups])

    preds = []
    for _ in range(n_preds):
        probs = rng.uniform(0.05, 0.95, n_v)
        size = float(rng.uniform(0.05, 0.95))
        while np.any(np.abs(size - gt_sizes) < margin):
            size = float(rng.uniform(0.05, 0.95))
        pts = rng.uniform(0.05, 0.95, (n_id, 2))
        flat = pts.ravel()
        for k in range(flat.size):
            while np.any(np.abs(flat[k] - gt_coords) < margin):
                flat[k] = rng.uniform(0.05, 0.95)
        preds.append(GroupPrediction(activity_probs=probs, size=size,
                                     member_points=flat.reshape(n_id, 2)))
    return scene, PredictionSet(image_id="rand", predictions=tuple(preds))


def finite_difference_gradients(scene, preds, match: MatchResult,
                                weights: LossWeights, h=1e-5):
    """Central finite differences of set_loss total w.r.t. every entry."""
    def rebuilt(pred_list):
        return PredictionSet(image_id=preds.image_id, predictions=tuple(pred_list))

    def loss_of(pred_list):
        return set_loss(scene, rebuilt(pred_list), match, weights).total

    base = list(preds.predictions)
    n = len(base)
    n_v = preds.n_classes
    n_id = preds.n_members
    d_act = np.zeros((n, n_v))
    d_size = np.zeros(n)
    d_pts = np.zeros((n, n_id, 2))

    def perturbed(j, field, idx, delta):
        p = base[j]
        probs, size, pts = p.activity_probs.copy(), p.size, p.member_points.copy()
        if field == "act":
            probs[idx] += delta
        elif field == "size":
            size += delta
        else:
            pts[idx] += delta
        plist = list(base)
        plist[j] = GroupPrediction(activity_probs=probs, size=size, member_points=pts)
        return plist

    for j in range(n):
        for c in range(n_v):
            hi = loss_of(perturbed(j, "act", c, h))
            lo = loss_of(perturbed(j, "act", c, -h))
            d_act[j, c] = (hi - lo) / (2 * h)
        hi = loss_of(perturbed(j, "size", None, h))
        lo = loss_of(perturbed(j, "size", None, -h))
        d_size[j] = (hi - lo) / (2 * h)
        for k in range(n_id):
            for axis in range(2):
                hi = loss_of(perturbed(j, "pts", (k, axis), h))
                lo = loss_of(perturbed(j, "pts", (k, axis), -h))
                d_pts[j, k, axis] = (hi - lo) / (2 * h)
    return d_act, d_size, d_pts


def max_relative_error(a: np.ndarray, b: np.ndarray, floor=1e-8) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0


# --- handcrafted evaluation fixtures -----------------------------------------

N_ID_FIXTURE = 4


def volleyball_fixture():
    """Four scenes with a hand-computed volleyball-protocol report.

    A: everything right.         B: wrong class, wrong size.
    C: right class, IoU 0.43.    D: right class, IoU 2/3.
    """
    scenes = []

    g = make_group([1, 0, 0], [[0.15, 0.15], [0.35, 0.35]], 0.05, 0.05)
    pred = make_prediction([0.9, 0.05, 0.05], 0.5,
                           [[0.15, 0.15], [0.35, 0.35]], N_ID_FIXTURE)
    scenes.append((make_scene("a", [g]),
                   PredictionSet("a", (pred,))))

    g = make_group([0, 1, 0], [[0.5, 0.5]], 0.1, 0.1)
    scene = make_scene("b", [g],
                       individual_boxes=[[0.4, 0.4, 0.6, 0.6], [0.85, 0.85, 0.95, 0.95]],
                       individual_scores=[1.0, 1.0])
    pred = make_prediction([0.8, 0.1, 0.1], 0.5, [[0.5, 0.5], [0.9, 0.9]], N_ID_FIXTURE)
    scenes.append((scene, PredictionSet("b", (pred,))))

    g = make_group([1, 0, 0], [[0.5, 0.5]], 0.1, 0.1)
    scene = make_scene("c", [g],
                       individual_boxes=[[0.48, 0.4, 0.68, 0.6]],  # IoU 3/7 vs GT
                       individual_scores=[1.0])
    pred = make_prediction([0.9, 0.05, 0.05], 0.25, [[0.58, 0.5]], N_ID_FIXTURE)
    scenes.append((scene, PredictionSet("c", (pred,))))

    g = make_group([0, 0, 1], [[0.5, 0.5]], 0.1, 0.1)
    scene = make_scene("d", [g],
                       individual_boxes=[[0.44, 0.4, 0.64, 0.6]],  # IoU 2/3 vs GT
                       individual_scores=[1.0])
    pred = make_prediction([0.05, 0.05, 0.9], 0.25, [[0.54, 0.5]], N_ID_FIXTURE)
    scenes.append((scene, PredictionSet("d", (pred,))))

    expected = {
        "group_activity_accuracy": 75.0,
        "social_group_accuracy": 50.0,
        "per_class_accuracy": {"0": 50.0, "1": 0.0, "2": 100.0},
        "duplicated_ratio": 0.0,
        "size_accuracy": 75.0,
    }
    return scenes, expected


def collective_fp_first_fixture():
    """One GT group, two predictions with the false positive ranked first."""
    g = make_group([1, 0, 0], [[0.5, 0.5]], 0.1, 0.1)
    scene = make_scene("m", [g],
                       individual_boxes=[[0.4, 0.4, 0.6, 0.6], [0.8, 0.8, 0.9, 0.9]],
                       individual_scores=[1.0, 1.0])
    fp = make_prediction([0.9, 0.1, 0.1], 0.25, [[0.85, 0.85]], N_ID_FIXTURE)
    tp = make_prediction([0.8, 0.1, 0.1], 0.25, [[0.5, 0.5]], N_ID_FIXTURE)
    scenes = [(scene, PredictionSet("m", (fp, tp)))]
    expected = {
        "group_activity_accuracy": 100.0,
        "map": 50.0,
        "per_class_ap": {"0": 50.0},
        "duplicated_ratio": 0.0,
        "size_accuracy": 100.0,
    }
    return scenes, expected
