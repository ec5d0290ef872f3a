"""Inference-time group-member identification.

A prediction's decoded size (rounded to the nearest integer, halves away
from zero) says how many of its member points are live; those points are
matched one-to-one against the scene's individual detections by Hungarian
assignment on a confidence-scaled center distance. The one-to-one matching
is what prevents two member points from claiming the same individual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .matching import solve_assignment
from .scene import GroupPrediction

SCORE_FLOOR = 1e-6


@dataclass(frozen=True)
class MemberAssignment:
    """Distinct individual indices claimed by one group prediction."""

    group_index: int
    member_indices: tuple[int, ...]
    used_points: int
    shortfall: int = 0

    def __post_init__(self):
        if len(set(self.member_indices)) != len(self.member_indices):
            raise ValueError("member indices must be distinct")


def round_half_away(x: float) -> int:
    """Nearest integer, halves rounded away from zero."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def box_center(box: np.ndarray) -> np.ndarray:
    box = np.asarray(box, dtype=np.float64)
    return np.array([(box[..., 0] + box[..., 2]) / 2.0,
                     (box[..., 1] + box[..., 3]) / 2.0]).T if box.ndim > 1 else np.array(
        [(box[0] + box[2]) / 2.0, (box[1] + box[3]) / 2.0])


def member_match_cost(u_hat: np.ndarray, box: np.ndarray, score: float) -> float:
    """Euclidean point-to-box-center distance divided by the detection score."""
    u_hat = np.asarray(u_hat, dtype=np.float64)
    center = box_center(np.asarray(box, dtype=np.float64))
    return float(np.linalg.norm(u_hat - center) / max(float(score), SCORE_FLOOR))


def _cost_matrix(points: np.ndarray, boxes: np.ndarray, scores: np.ndarray) -> np.ndarray:
    centers = (boxes[:, :2] + boxes[:, 2:]) / 2.0
    dist = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
    return dist / np.maximum(scores, SCORE_FLOOR)[None, :]


def used_point_count(size: float, n_id: int) -> int:
    return round_half_away(float(size) * n_id)


def identify_members(pred: GroupPrediction, boxes: np.ndarray, scores: np.ndarray,
                     n_id: int, group_index: int = 0) -> MemberAssignment:
    """Match the prediction's first round(size*n_id) points to distinct individuals.

    When the rounded size exceeds the number of detections, every individual
    is claimed and the shortfall is reported instead of failing.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    m = used_point_count(pred.size, n_id)
    n_b = len(scores)
    if m == 0:
        return MemberAssignment(group_index, (), used_points=0)
    if n_b == 0:
        return MemberAssignment(group_index, (), used_points=m, shortfall=m)
    if m > n_b:
        return MemberAssignment(group_index, tuple(range(n_b)), used_points=m,
                                shortfall=m - n_b)
    points = pred.member_points[:m]
    cost = np.zeros((n_b, n_b))
    cost[:m, :] = _cost_matrix(points, boxes, scores)
    result = solve_assignment(cost)
    indices = tuple(sorted(result.permutation[:m]))
    return MemberAssignment(group_index, indices, used_points=m)


def min_distance_indices(pred: GroupPrediction, boxes: np.ndarray, scores: np.ndarray,
                         n_id: int) -> tuple[int, ...]:
    """Greedy per-point nearest individual (duplicates allowed); ties take the
    lowest index."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    m = used_point_count(pred.size, n_id)
    if m == 0 or len(scores) == 0:
        return ()
    cost = _cost_matrix(pred.member_points[:m], boxes, scores)
    return tuple(int(j) for j in cost.argmin(axis=1))


def duplicated_ratio(scene_preds: Sequence[Sequence[GroupPrediction]],
                     scene_individuals: Sequence[tuple[np.ndarray, np.ndarray]],
                     n_id: int, denominator: str = "matched") -> float | None:
    """Percentage of individuals claimed by more than one member point under
    min-distance matching.

    denominator="matched" divides by individuals hit at least once (the
    default); "all" divides by every individual in the evaluated scenes.
    Returns None when the denominator is empty.
    """
    if denominator not in ("matched", "all"):
        raise ValueError("denominator must be 'matched' or 'all'")
    duplicated = 0
    matched = 0
    total = 0
    for preds, (boxes, scores) in zip(scene_preds, scene_individuals):
        counts: dict[int, int] = {}
        for pred in preds:
            for j in min_distance_indices(pred, boxes, scores, n_id):
                counts[j] = counts.get(j, 0) + 1
        duplicated += sum(1 for c in counts.values() if c > 1)
        matched += len(counts)
        total += len(np.asarray(scores).reshape(-1))
    denom = matched if denominator == "matched" else total
    if denom == 0:
        return None
    return 100.0 * duplicated / denom


def size_accuracy(gt_sizes: Sequence[int], pred_sizes: Sequence[float],
                  n_id: int) -> float | None:
    """Percentage of paired groups whose rounded predicted size is exact."""
    if len(gt_sizes) != len(pred_sizes):
        raise ValueError("paired size sequences must have equal length")
    if not gt_sizes:
        return None
    hits = sum(1 for s, s_hat in zip(gt_sizes, pred_sizes)
               if used_point_count(s_hat, n_id) == int(s))
    return 100.0 * hits / len(gt_sizes)
