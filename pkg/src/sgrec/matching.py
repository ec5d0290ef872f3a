"""Set matching between ground-truth groups and predictions, plus the
training losses and their analytic gradients.

Matching costs combine an activity dot-product term, an absolute size
difference, and a mean L1 point distance over the group's first S member
points (X-sorted). The ground-truth set is padded with no-activity slots to
the prediction count, and the optimal one-to-one assignment is found with an
exact Hungarian solver.

The solver converts the float matrix to exactly-scaled integers (floats are
dyadic rationals, so a common power-of-two rescale is lossless), runs the
classic O(n^3) potential-based algorithm, and then refines ties to the
lexicographically smallest optimal permutation via the zero-reduced-cost
graph. Results are therefore exact and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import GroundTruthGroup, PredictionSet, SceneGroundTruth

CLAMP_EPS = 1e-7
DEFAULT_FOCAL_GAMMA = 2.0


@dataclass(frozen=True)
class CostWeights:
    """Balancing weights for the matching cost terms."""

    eta_v: float = 2.0
    eta_s: float = 1.0
    eta_u: float = 5.0

    def __post_init__(self):
        if min(self.eta_v, self.eta_s, self.eta_u) < 0:
            raise ValueError("cost weights must be nonnegative")


@dataclass(frozen=True)
class LossWeights:
    """Balancing weights for the training loss terms."""

    lambda_v: float = 2.0
    lambda_s: float = 1.0
    lambda_u: float = 5.0

    def __post_init__(self):
        if min(self.lambda_v, self.lambda_s, self.lambda_u) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class MatchResult:
    """Optimal row->column permutation over the padded ground-truth set.

    permutation[i] is the prediction index assigned to padded GT row i; rows
    listed in phi_set are padding (no activity).
    """

    permutation: tuple[int, ...]
    phi_set: frozenset[int]
    total_cost: float

    @property
    def n(self) -> int:
        return len(self.permutation)

    def real_pairs(self):
        """(gt_index, prediction_index) pairs for non-padding rows."""
        return [(i, j) for i, j in enumerate(self.permutation) if i not in self.phi_set]


@dataclass(frozen=True)
class LossBreakdown:
    l_v: float
    l_s: float
    l_u: float
    total: float


@dataclass(frozen=True)
class LossGradients:
    """Gradients of the total loss w.r.t. every prediction entry.

    kinks lists (field, index tuple) positions where an L1 term sat exactly
    on its non-differentiable point and the subgradient 0 was chosen.
    """

    d_activity: np.ndarray  # (n_preds, n_classes)
    d_size: np.ndarray      # (n_preds,)
    d_points: np.ndarray    # (n_preds, n_id, 2)
    kinks: tuple[tuple[str, tuple[int, ...]], ...]


# --- cost terms ---------------------------------------------------------------

def activity_cost(v: np.ndarray, v_hat: np.ndarray) -> float:
    """Negative agreement between a multi-hot label and predicted probs, in [-1, 0]."""
    v = np.asarray(v, dtype=np.float64)
    v_hat = np.asarray(v_hat, dtype=np.float64)
    if v.shape != v_hat.shape:
        raise ValueError(f"class count mismatch: {v.shape} vs {v_hat.shape}")
    n_v = v.size
    return float(-(v @ v_hat + (1.0 - v) @ (1.0 - v_hat)) / n_v)


def size_cost(s: float, s_hat: float) -> float:
    return abs(float(s) - float(s_hat))


def point_cost(u: np.ndarray, u_hat: np.ndarray) -> float:
    """Mean L1 distance between GT points and the first S predicted points."""
    u = np.asarray(u, dtype=np.float64)
    u_hat = np.asarray(u_hat, dtype=np.float64)
    s = u.shape[0]
    if s < 1:
        raise ValueError("point cost needs at least one ground-truth point")
    if s > u_hat.shape[0]:
        raise ValueError(f"group size {s} exceeds predicted point count {u_hat.shape[0]}")
    return float(np.abs(u - u_hat[:s]).sum() / s)


def total_match_cost(group: GroundTruthGroup | None, pred, weights: CostWeights,
                     n_id: int) -> float:
    """Matching cost of one padded-GT row against one prediction; 0 for padding."""
    if group is None:
        return 0.0
    return float(
        weights.eta_v * activity_cost(group.activity, pred.activity_probs)
        + weights.eta_s * size_cost(group.normalized_size(n_id), pred.size)
        + weights.eta_u * point_cost(group.member_points, pred.member_points)
    )


def build_cost_matrix(gt: SceneGroundTruth, preds: PredictionSet,
                      weights: CostWeights = CostWeights()) -> np.ndarray:
    """Square cost matrix: real GT rows first, then padding rows of zeros."""
    n = len(preds.predictions)
    n_real = len(gt.groups)
    if n_real > n:
        raise ValueError(f"{n_real} ground-truth groups exceed {n} predictions")
    n_id = preds.n_members
    cost = np.zeros((n, n), dtype=np.float64)
    for i, group in enumerate(gt.groups):
        for j, pred in enumerate(preds.predictions):
            cost[i, j] = total_match_cost(group, pred, weights, n_id)
    return cost


# --- exact Hungarian solver ---------------------------------------------------

def _scaled_int_matrix(cost: np.ndarray) -> list[list[int]]:
    """Exact integer rescale of a float matrix by a common power of two."""
    n = cost.shape[0]
    mants = [[0] * n for _ in range(n)]
    exps = [[0] * n for _ in range(n)]
    e_min = None
    for i in range(n):
        for j in range(n):
            m, e = math.frexp(cost[i, j])
            mant = int(m * (1 << 53))  # exact: m has at most 53 significant bits
            mants[i][j] = mant
            exps[i][j] = e - 53
            if mant != 0 and (e_min is None or e - 53 < e_min):
                e_min = e - 53
    if e_min is None:
        return mants  # all zero
    return [[mants[i][j] << (exps[i][j] - e_min) if mants[i][j] else 0 for j in range(n)]
            for i in range(n)]


def _hungarian_int(a: list[list[int]]) -> tuple[list[int], list[int], list[int]]:
    """Potential-based Hungarian algorithm on an integer matrix.

    Returns (col_of_row, u, v) with a[i][j] - u[i] - v[j] >= 0 everywhere and
    == 0 on assigned pairs.
    """
    n = len(a)
    inf = max(abs(x) for row in a for x in row) * (n + 1) * 4 + 1
    u = [0] * (n + 1)
    v = [0] * (n + 1)
    p = [0] * (n + 1)    # p[j]: 1-based row matched to 1-based column j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            row = a[i0 - 1]
            ui0 = u[i0]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = [0] * n
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _lex_smallest_optimal(a: list[list[int]], col_of_row: list[int],
                          u: list[int], v: list[int]) -> list[int]:
    """Lexicographically smallest permutation among cost-optimal ones.

    Optimal assignments are exactly the perfect matchings of the
    zero-reduced-cost graph, so ties resolve by fixing rows in order to the
    smallest feasible column.
    """
    n = len(a)
    adj = [[j for j in range(n) if a[i][j] - u[i] - v[j] == 0] for i in range(n)]
    match = list(col_of_row)
    row_of_col = [0] * n
    for r, c in enumerate(match):
        row_of_col[c] = r

    banned = [False] * n  # columns fixed to earlier rows

    def try_augment(r: int, visited: list[bool]) -> bool:
        for j in adj[r]:
            if banned[j] or visited[j]:
                continue
            visited[j] = True
            if row_of_col[j] == -1 or try_augment(row_of_col[j], visited):
                match[r] = j
                row_of_col[j] = r
                return True
        return False

    for i in range(n):
        for c in adj[i]:
            if banned[c]:
                continue
            if match[i] == c:
                banned[c] = True
                break
            displaced = row_of_col[c]
            old_c = match[i]
            match[i] = c
            row_of_col[c] = i
            match[displaced] = -1
            row_of_col[old_c] = -1
            visited = [False] * n
            visited[c] = True
            if try_augment(displaced, visited):
                banned[c] = True
                break
            match[displaced] = c
            row_of_col[c] = displaced
            match[i] = old_c
            row_of_col[old_c] = i
        else:  # pragma: no cover - a perfect matching always exists
            raise AssertionError("tight graph lost its perfect matching")
    return match


def solve_assignment(cost: np.ndarray) -> MatchResult:
    """Minimum-cost one-to-one assignment of rows to columns.

    Exact for any finite float matrix; ties break toward the
    lexicographically smallest permutation (row 0's column first).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] == 0:
        raise ValueError("cost matrix must be square and nonempty")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    scaled = _scaled_int_matrix(cost)
    col_of_row, u, v = _hungarian_int(scaled)
    perm = _lex_smallest_optimal(scaled, col_of_row, u, v)
    total = 0.0
    for i, j in enumerate(perm):
        total += float(cost[i, j])
    return MatchResult(permutation=tuple(perm), phi_set=frozenset(), total_cost=total)


def match_groups(gt: SceneGroundTruth, preds: PredictionSet,
                 weights: CostWeights = CostWeights()) -> MatchResult:
    """Pad the GT set to the prediction count and solve the assignment."""
    cost = build_cost_matrix(gt, preds, weights)
    base = solve_assignment(cost)
    phi = frozenset(range(len(gt.groups), len(preds.predictions)))
    return MatchResult(base.permutation, phi, base.total_cost)


# --- focal loss ---------------------------------------------------------------

def _clamp(p: float, eps: float) -> float:
    return min(max(float(p), eps), 1.0 - eps)


def focal_term(y: int, p: float, gamma: float = DEFAULT_FOCAL_GAMMA,
               alpha: float | None = None, clamp_eps: float = CLAMP_EPS) -> float:
    """Element-wise focal loss for a binary target.

    p is clamped to [clamp_eps, 1-clamp_eps]. The optional alpha applies the
    class-balanced variant (alpha on positives, 1-alpha on negatives).
    """
    p = _clamp(p, clamp_eps)
    if y:
        val = -((1.0 - p) ** gamma) * math.log(p)
        return (alpha * val) if alpha is not None else val
    val = -(p ** gamma) * math.log(1.0 - p)
    return ((1.0 - alpha) * val) if alpha is not None else val


def focal_term_grad(y: int, p: float, gamma: float = DEFAULT_FOCAL_GAMMA,
                    alpha: float | None = None,
                    clamp_eps: float = CLAMP_EPS) -> float:
    """d focal_term / dp at a point strictly inside the clamp bounds."""
    p = _clamp(p, clamp_eps)
    if y:
        val = gamma * (1.0 - p) ** (gamma - 1.0) * math.log(p) - (1.0 - p) ** gamma / p
        return (alpha * val) if alpha is not None else val
    val = -gamma * p ** (gamma - 1.0) * math.log(1.0 - p) + p ** gamma / (1.0 - p)
    return ((1.0 - alpha) * val) if alpha is not None else val


# --- set losses and gradients ---------------------------------------------------

def _check_match(gt: SceneGroundTruth, preds: PredictionSet, match: MatchResult):
    n = len(preds.predictions)
    n_real = len(gt.groups)
    if n_real == 0:
        raise ValueError("set loss is undefined with zero real groups")
    if match.n != n or sorted(match.permutation) != list(range(n)):
        raise ValueError("match permutation is not a bijection over the predictions")
    if match.phi_set != frozenset(range(n_real, n)):
        raise ValueError("match padding rows disagree with the ground-truth group count")


def set_loss(gt: SceneGroundTruth, preds: PredictionSet, match: MatchResult,
             weights: LossWeights = LossWeights(),
             gamma: float = DEFAULT_FOCAL_GAMMA,
             clamp_eps: float = CLAMP_EPS) -> LossBreakdown:
    """Focal activity loss + L1 size loss + L1 point loss under a fixed match.

    Every term, including the no-activity focal terms of padding rows, is
    normalized by the number of real groups.
    """
    _check_match(gt, preds, match)
    n_real = len(gt.groups)
    n_id = preds.n_members

    l_v = 0.0
    l_s = 0.0
    l_u = 0.0
    for i, j in enumerate(match.permutation):
        pred = preds.predictions[j]
        if i in match.phi_set:
            l_v += sum(focal_term(0, p, gamma, clamp_eps=clamp_eps)
                       for p in pred.activity_probs)
            continue
        group = gt.groups[i]
        l_v += sum(focal_term(int(y), p, gamma, clamp_eps=clamp_eps)
                   for y, p in zip(group.activity, pred.activity_probs))
        l_s += abs(group.normalized_size(n_id) - pred.size)
        l_u += float(np.abs(group.member_points
                            - pred.member_points[: group.size]).sum())
    l_v /= n_real
    l_s /= n_real
    l_u /= n_real
    total = weights.lambda_v * l_v + weights.lambda_s * l_s + weights.lambda_u * l_u
    return LossBreakdown(l_v=l_v, l_s=l_s, l_u=l_u, total=total)


def auxiliary_set_loss(gt: SceneGroundTruth, per_layer_preds: list[PredictionSet],
                       weights: LossWeights = LossWeights(),
                       cost_weights: CostWeights = CostWeights(),
                       gamma: float = DEFAULT_FOCAL_GAMMA,
                       clamp_eps: float = CLAMP_EPS) -> LossBreakdown:
    """Deep-supervision variant: match and evaluate the loss on every decoder
    layer's head outputs and sum the terms."""
    if not per_layer_preds:
        raise ValueError("auxiliary loss needs at least one layer's predictions")
    l_v = l_s = l_u = total = 0.0
    for preds in per_layer_preds:
        match = match_groups(gt, preds, cost_weights)
        loss = set_loss(gt, preds, match, weights, gamma, clamp_eps)
        l_v += loss.l_v
        l_s += loss.l_s
        l_u += loss.l_u
        total += loss.total
    return LossBreakdown(l_v=l_v, l_s=l_s, l_u=l_u, total=total)


def set_loss_gradients(gt: SceneGroundTruth, preds: PredictionSet, match: MatchResult,
                       weights: LossWeights = LossWeights(),
                       gamma: float = DEFAULT_FOCAL_GAMMA,
                       clamp_eps: float = CLAMP_EPS) -> LossGradients:
    """Analytic gradients of set_loss total w.r.t. every prediction entry.

    The match is held fixed. L1 terms at exact equality get subgradient 0 and
    are reported in kinks.
    """
    _check_match(gt, preds, match)
    n = len(preds.predictions)
    n_real = len(gt.groups)
    n_id = preds.n_members
    n_v = preds.n_classes

    d_act = np.zeros((n, n_v))
    d_size = np.zeros(n)
    d_pts = np.zeros((n, n_id, 2))
    kinks = []

    for i, j in enumerate(match.permutation):
        pred = preds.predictions[j]
        if i in match.phi_set:
            for c, p in enumerate(pred.activity_probs):
                d_act[j, c] = (weights.lambda_v
                               * focal_term_grad(0, p, gamma, clamp_eps=clamp_eps)
                               / n_real)
            continue
        group = gt.groups[i]
        for c, (y, p) in enumerate(zip(group.activity, pred.activity_probs)):
            d_act[j, c] = (weights.lambda_v
                           * focal_term_grad(int(y), p, gamma, clamp_eps=clamp_eps)
                           / n_real)
        ds = pred.size - group.normalized_size(n_id)
        if ds == 0.0:
            kinks.append(("size", (j,)))
        else:
            d_size[j] = weights.lambda_s * math.copysign(1.0, ds) / n_real
        diff = pred.member_points[: group.size] - group.member_points
        for k in range(group.size):
            for axis in range(2):
                if diff[k, axis] == 0.0:
                    kinks.append(("point", (j, k, axis)))
                else:
                    d_pts[j, k, axis] = (weights.lambda_u
                                         * math.copysign(1.0, diff[k, axis]) / n_real)
    return LossGradients(d_activity=d_act, d_size=d_size, d_points=d_pts,
                         kinks=tuple(kinks))
