"""Task evaluation metrics.

Two protocols are supported. The volleyball protocol assumes one ground-truth
group per scene and scores the top-probability group prediction (activity
accuracy plus the member-box IoU test). The collective protocol allows
multiple groups per scene and reports mAP with per-class average precision.
Both report size accuracy and the min-distance duplicated ratio over the
predictions paired to real groups by Hungarian set matching.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .matching import CostWeights, match_groups, solve_assignment
from .members import duplicated_ratio, identify_members, size_accuracy
from .scene import PredictionSet, SceneGroundTruth

PROTOCOLS = ("volleyball", "collective")
_BARRED = 1e9  # cost standing in for an infeasible IoU pairing

ScenePair = tuple[SceneGroundTruth, PredictionSet]


@dataclass(frozen=True)
class EvalReport:
    """Metric bundle; None marks metrics the protocol leaves undefined."""

    group_activity_accuracy: float | None = None
    social_group_accuracy: float | None = None
    per_class_accuracy: dict[int, float] | None = None
    map: float | None = None
    per_class_ap: dict[int, float] | None = None
    duplicated_ratio: float | None = None
    size_accuracy: float | None = None

    def to_json(self) -> dict:
        doc = {}
        for key, value in self.__dict__.items():
            if value is None:
                continue
            if isinstance(value, dict):
                doc[key] = {str(k): float(v) for k, v in sorted(value.items())}
            else:
                doc[key] = float(value)
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def per_class_csv(self) -> str:
        """Per-class rows: class, accuracy (volleyball), AP (collective)."""
        lines = ["class,accuracy,ap"]
        classes = sorted(set(self.per_class_accuracy or {})
                         | set(self.per_class_ap or {}))
        for c in classes:
            acc = (self.per_class_accuracy or {}).get(c)
            ap = (self.per_class_ap or {}).get(c)
            lines.append(f"{c},{'' if acc is None else acc}"
                         f",{'' if ap is None else ap}")
        return "\n".join(lines) + "\n"


def iou(a, b) -> float:
    """Intersection over union of two xyxy boxes."""
    ax1, ay1, ax2, ay2 = (float(v) for v in a)
    bx1, by1, bx2, by2 = (float(v) for v in b)
    if not (ax1 < ax2 and ay1 < ay2 and bx1 < bx2 and by1 < by2):
        raise ValueError("iou requires boxes with x1 < x2 and y1 < y2")
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def members_pair_within_iou(pred_boxes: np.ndarray, gt_boxes: np.ndarray,
                            thresh: float = 0.5) -> bool:
    """True when a perfect one-to-one pairing exists with every IoU > thresh.

    Pairing is found by Hungarian assignment on (1 - IoU) with infeasible
    pairs barred; counts must already agree.
    """
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if len(pred_boxes) != len(gt_boxes):
        return False
    if len(gt_boxes) == 0:
        return True
    cost = np.empty((len(gt_boxes), len(pred_boxes)))
    for i, g in enumerate(gt_boxes):
        for j, p in enumerate(pred_boxes):
            overlap = iou(g, p)
            cost[i, j] = (1.0 - overlap) if overlap > thresh else _BARRED
    result = solve_assignment(cost)
    return all(cost[i, j] < _BARRED for i, j in enumerate(result.permutation))


def _top_prediction(preds: PredictionSet) -> tuple[int, int]:
    """(prediction index, class index) of the single highest activity prob."""
    probs = np.stack([p.activity_probs for p in preds.predictions])
    flat = int(probs.argmax())
    return divmod(flat, probs.shape[1])


def group_activity_accuracy(scenes: Sequence[ScenePair]) -> float:
    """Scene accuracy of the single most confident (query, class) prediction."""
    if not scenes:
        raise ValueError("group activity accuracy needs at least one scene")
    correct = 0
    for gt, preds in scenes:
        if not gt.groups:
            raise ValueError(f"scene {gt.image_id}: no ground-truth activity")
        _, cls = _top_prediction(preds)
        gt_classes = set()
        for g in gt.groups:
            gt_classes.update(int(c) for c in g.active_classes)
        correct += int(cls in gt_classes)
    return 100.0 * correct / len(scenes)


def _social_group_hit(gt: SceneGroundTruth, preds: PredictionSet, iou_thresh: float,
                      require_exact_size: bool) -> tuple[bool, int]:
    """(scene correct?, GT class) under the one-group-per-scene protocol."""
    if len(gt.groups) != 1:
        raise ValueError(f"scene {gt.image_id}: volleyball protocol expects exactly "
                         f"one ground-truth group, found {len(gt.groups)}")
    group = gt.groups[0]
    gt_class = int(group.active_classes[0])
    pred_idx, cls = _top_prediction(preds)
    pred = preds.predictions[pred_idx]
    if group.activity[cls] != 1:
        return False, gt_class
    assignment = identify_members(pred, gt.individual_boxes, gt.individual_scores,
                                  preds.n_members)
    if assignment.shortfall:
        return False, gt_class
    if require_exact_size and assignment.used_points != group.size:
        return False, gt_class
    member_boxes = gt.individual_boxes[list(assignment.member_indices)]
    return members_pair_within_iou(member_boxes, group.member_boxes, iou_thresh), gt_class


def social_group_accuracy(scenes: Sequence[ScenePair], iou_thresh: float = 0.5,
                          require_exact_size: bool = True,
                          ) -> tuple[float, dict[int, float]]:
    """Volleyball-protocol accuracy plus the per-GT-class breakdown."""
    if not scenes:
        raise ValueError("social group accuracy needs at least one scene")
    hits: dict[int, list[int]] = {}
    for gt, preds in scenes:
        ok, gt_class = _social_group_hit(gt, preds, iou_thresh, require_exact_size)
        hits.setdefault(gt_class, []).append(int(ok))
    per_class = {c: 100.0 * sum(v) / len(v) for c, v in sorted(hits.items())}
    total = sum(sum(v) for v in hits.values())
    count = sum(len(v) for v in hits.values())
    return 100.0 * total / count, per_class


def _average_precision(flags: list[bool], n_gt: int,
                       interpolation: str = "all_point") -> float:
    """Interpolated AP from ranked TP/FP flags, as a percentage.

    "all_point" integrates the monotone precision envelope over recall;
    "eleven_point" averages the envelope at recalls 0.0, 0.1, ..., 1.0.
    """
    if n_gt == 0:
        raise ValueError("average precision is undefined with zero ground truth")
    if interpolation not in ("all_point", "eleven_point"):
        raise ValueError(f"unknown AP interpolation {interpolation!r}")
    if not flags:
        return 0.0
    tp = np.cumsum([1 if f else 0 for f in flags], dtype=np.float64)
    ranks = np.arange(1, len(flags) + 1, dtype=np.float64)
    precision = tp / ranks
    recall = tp / n_gt
    env = np.maximum.accumulate(precision[::-1])[::-1]
    if interpolation == "eleven_point":
        total = 0.0
        for r in np.linspace(0.0, 1.0, 11):
            above = env[recall >= r - 1e-12]
            total += float(above.max()) if above.size else 0.0
        return 100.0 * total / 11.0
    ap = 0.0
    prev_recall = 0.0
    for k in range(len(flags)):
        if flags[k]:
            ap += (recall[k] - prev_recall) * env[k]
            prev_recall = recall[k]
    return 100.0 * ap


def social_group_map(scenes: Sequence[ScenePair], iou_thresh: float = 0.5,
                     require_exact_size: bool = True,
                     interpolation: str = "all_point",
                     ) -> tuple[float, dict[int, float]]:
    """Collective-protocol mAP over classes with at least one GT group.

    For each class, all predictions across scenes are ranked by that class's
    probability; a prediction is a true positive when an unclaimed GT group
    of that class in its scene passes the member-box IoU pairing.
    """
    if not scenes:
        raise ValueError("mAP needs at least one scene")
    n_classes = scenes[0][1].n_classes
    per_class_ap: dict[int, float] = {}
    for cls in range(n_classes):
        n_gt = sum(int(g.activity[cls] == 1) for gt, _ in scenes for g in gt.groups)
        if n_gt == 0:
            continue
        ranked: list[tuple[float, int, int]] = []
        for si, (_, preds) in enumerate(scenes):
            for pi, pred in enumerate(preds.predictions):
                ranked.append((-float(pred.activity_probs[cls]), si, pi))
        ranked.sort()
        claimed: set[tuple[int, int]] = set()
        flags: list[bool] = []
        for neg_score, si, pi in ranked:
            gt, preds = scenes[si]
            pred = preds.predictions[pi]
            assignment = identify_members(pred, gt.individual_boxes,
                                          gt.individual_scores, preds.n_members)
            hit = False
            if not assignment.shortfall:
                member_boxes = gt.individual_boxes[list(assignment.member_indices)]
                for gi, group in enumerate(gt.groups):
                    if (si, gi) in claimed or group.activity[cls] != 1:
                        continue
                    if require_exact_size and assignment.used_points != group.size:
                        continue
                    if members_pair_within_iou(member_boxes, group.member_boxes,
                                               iou_thresh):
                        claimed.add((si, gi))
                        hit = True
                        break
            flags.append(hit)
        per_class_ap[cls] = _average_precision(flags, n_gt, interpolation)
    if not per_class_ap:
        raise ValueError("no class has ground truth; mAP is undefined")
    mean_ap = sum(per_class_ap.values()) / len(per_class_ap)
    return mean_ap, per_class_ap


def _matched_pairs(scenes: Sequence[ScenePair], cost_weights: CostWeights):
    """Per scene: predictions Hungarian-paired to the real GT groups."""
    gt_sizes: list[int] = []
    pred_sizes: list[float] = []
    scene_preds = []
    scene_individuals = []
    for gt, preds in scenes:
        match = match_groups(gt, preds, cost_weights)
        picked = []
        for i, j in match.real_pairs():
            gt_sizes.append(gt.groups[i].size)
            pred_sizes.append(preds.predictions[j].size)
            picked.append(preds.predictions[j])
        scene_preds.append(picked)
        scene_individuals.append((gt.individual_boxes, gt.individual_scores))
    return gt_sizes, pred_sizes, scene_preds, scene_individuals


def evaluate(scenes: Sequence[ScenePair], protocol: str, iou_thresh: float = 0.5,
             cost_weights: CostWeights = CostWeights(),
             require_exact_size: bool = True,
             duplicate_denominator: str = "matched",
             interpolation: str = "all_point") -> EvalReport:
    """Full protocol evaluation over (ground truth, predictions) scene pairs."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if not scenes:
        raise ValueError("evaluation needs at least one scene")
    n_v = {preds.n_classes for _, preds in scenes}
    if len(n_v) != 1:
        raise ValueError("scenes disagree on the number of activity classes")
    n_id = {preds.n_members for _, preds in scenes}
    if len(n_id) != 1:
        raise ValueError("scenes disagree on the member budget")
    n_id = n_id.pop()

    gt_sizes, pred_sizes, scene_preds, scene_individuals = _matched_pairs(
        scenes, cost_weights)
    dup = duplicated_ratio(scene_preds, scene_individuals, n_id,
                           denominator=duplicate_denominator)
    size_acc = size_accuracy(gt_sizes, pred_sizes, n_id)
    activity_acc = group_activity_accuracy(scenes)

    if protocol == "volleyball":
        social_acc, per_class = social_group_accuracy(
            scenes, iou_thresh, require_exact_size)
        return EvalReport(group_activity_accuracy=activity_acc,
                          social_group_accuracy=social_acc,
                          per_class_accuracy=per_class,
                          duplicated_ratio=dup,
                          size_accuracy=size_acc)
    mean_ap, per_class_ap = social_group_map(scenes, iou_thresh, require_exact_size,
                                             interpolation)
    return EvalReport(group_activity_accuracy=activity_acc,
                      map=mean_ap,
                      per_class_ap=per_class_ap,
                      duplicated_ratio=dup,
                      size_accuracy=size_acc)
