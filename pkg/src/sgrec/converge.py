"""Gradient-descent demo on the set loss.

Treats one prediction set's pre-logistic parameters as free variables and
runs fixed-step gradient descent on the total loss against a synthetic
scene, re-matching every step. Serves as an end-to-end check that the loss
gradients point the right way: the loss collapses and the matched member
points land on the ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matching import (CostWeights, LossWeights, match_groups, set_loss,
                       set_loss_gradients)
from .scene import GroupPrediction, PredictionSet, SceneGroundTruth
from .synth import SynthConfig, generate_scene
from .tensor import sigmoid

DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    """The demo's loss exploded; carries the offending step and loss."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"loss diverged to {loss:.3e} at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class ConvergenceResult:
    losses: tuple[float, ...]           # length steps + 1, initial loss first
    point_errors: tuple[float, ...]     # final per-point L1 errors, matched group
    matched_prediction: int

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    @property
    def reduction(self) -> float:
        if self.initial_loss == 0.0:
            return 0.0
        return 1.0 - self.final_loss / self.initial_loss

    @property
    def max_point_error(self) -> float:
        return max(self.point_errors)


def demo_scene(seed: int, group_size: int = 3, n_id: int = 6,
               n_classes: int = 4) -> SceneGroundTruth:
    """Synthetic single-group scene used by the demo."""
    cfg = SynthConfig(seed=seed, n_scenes=1, n_classes=n_classes, n_id=n_id,
                      groups_per_scene=(1, 1), group_size=(group_size, group_size),
                      spread=0.3)
    scene, _ = generate_scene(cfg, 0)
    return scene


def _predictions(theta_act, theta_size, theta_pts, image_id) -> PredictionSet:
    probs = sigmoid(theta_act)
    sizes = sigmoid(theta_size)
    points = sigmoid(theta_pts)
    return PredictionSet(image_id=image_id, predictions=tuple(
        GroupPrediction(activity_probs=probs[i], size=float(sizes[i]),
                        member_points=points[i])
        for i in range(len(sizes))))


def run_convergence(seed: int = 0, steps: int = 500, lr: float = 0.015,
                    n_groups: int = 4, n_id: int = 6, n_classes: int = 4,
                    group_size: int = 3,
                    cost_weights: CostWeights = CostWeights(),
                    loss_weights: LossWeights = LossWeights(),
                    focal_gamma: float = 2.0, clamp_eps: float = 1e-7,
                    scene: SceneGroundTruth | None = None) -> ConvergenceResult:
    """Fixed-step gradient descent on the set loss with per-step re-matching."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if scene is None:
        scene = demo_scene(seed, group_size=group_size, n_id=n_id, n_classes=n_classes)
    rng = np.random.default_rng([seed, 1])
    theta_act = rng.uniform(-1.0, 1.0, (n_groups, n_classes))
    theta_size = rng.uniform(-1.0, 1.0, n_groups)
    theta_pts = rng.uniform(-1.0, 1.0, (n_groups, n_id, 2))

    losses = []
    match = None
    for step in range(steps + 1):
        preds = _predictions(theta_act, theta_size, theta_pts, scene.image_id)
        match = match_groups(scene, preds, cost_weights)
        loss = set_loss(scene, preds, match, loss_weights, focal_gamma, clamp_eps)
        losses.append(loss.total)
        if loss.total > DIVERGENCE_LIMIT:
            raise DivergenceError(step, loss.total)
        if step == steps:
            break
        grads = set_loss_gradients(scene, preds, match, loss_weights,
                                   focal_gamma, clamp_eps)
        probs = sigmoid(theta_act)
        sizes = sigmoid(theta_size)
        points = sigmoid(theta_pts)
        theta_act -= lr * grads.d_activity * probs * (1.0 - probs)
        theta_size -= lr * grads.d_size * sizes * (1.0 - sizes)
        theta_pts -= lr * grads.d_points * points * (1.0 - points)

    matched_pred = match.permutation[0]
    group = scene.groups[0]
    final_points = sigmoid(theta_pts[matched_pred][: group.size])
    errors = np.abs(final_points - group.member_points).sum(axis=1)
    return ConvergenceResult(losses=tuple(losses),
                             point_errors=tuple(float(e) for e in errors),
                             matched_prediction=int(matched_pred))
