"""Synthetic scenes with known ground truth, plus matching feature maps.

Scenes are deterministic per (seed, index). Every coordinate is snapped to a
1/4096 grid: such values are exact in float32, so generated fixtures survive
the JSON round trip bit-for-bit, and box centers coincide exactly with the
stored member points. Feature maps are sums of per-member Gaussian blobs
with a random per-channel profile, giving cross-attention something
localizable to latch onto.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .scene import GroundTruthGroup, SceneGroundTruth, f32, sort_member_points
from .tensor import FeatureMap, FeatureMapSet

_GRID = 4096.0


def _snap(values) -> np.ndarray:
    return np.round(np.asarray(values, dtype=np.float64) * _GRID) / _GRID


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_scenes: int = 4
    n_classes: int = 4
    n_id: int = 12
    groups_per_scene: tuple[int, int] = (1, 2)
    group_size: tuple[int, int] = (2, 4)
    spread: float = 0.25
    box_half_w: float = 0.03
    box_half_h: float = 0.045
    n_levels: int = 2
    map_sizes: tuple[tuple[int, int], ...] = ((16, 16), (8, 8))
    channels: int = 8
    blob_amplitude: float = 1.0
    blob_radius: float = 0.08
    jitter_sigma: float = 0.0
    score_range: tuple[float, float] = (0.6, 1.0)
    false_positive_rate: float = 0.0

    def __post_init__(self):
        if self.groups_per_scene[0] < 1 or self.groups_per_scene[0] > self.groups_per_scene[1]:
            raise ValueError("groups_per_scene range is empty")
        if self.group_size[0] < 1 or self.group_size[0] > self.group_size[1]:
            raise ValueError("group_size range is empty")
        if self.group_size[1] > self.n_id:
            raise ValueError("group sizes must not exceed the member budget n_id")
        if len(self.map_sizes) != self.n_levels:
            raise ValueError("map_sizes must list one (height, width) per level")
        if any(h < 2 or w < 2 for h, w in self.map_sizes):
            raise ValueError("feature maps must be at least 2x2")
        if self.spread < 0 or self.blob_radius <= 0:
            raise ValueError("spread must be >= 0 and blob_radius > 0")
        if not (0 <= self.score_range[0] <= self.score_range[1] <= 1):
            raise ValueError("score_range must be ordered and inside [0, 1]")


def _member_points(rng: np.random.Generator, cfg: SynthConfig, size: int) -> np.ndarray:
    """Group member centers within cfg.spread of each other, snapped to grid."""
    margin_x = cfg.box_half_w + cfg.jitter_sigma * 4 + 1 / _GRID
    margin_y = cfg.box_half_h + cfg.jitter_sigma * 4 + 1 / _GRID
    radius = max(0.0, cfg.spread / 2.0 - 2.0 / _GRID)
    lo_x, hi_x = margin_x + radius, 1.0 - margin_x - radius
    lo_y, hi_y = margin_y + radius, 1.0 - margin_y - radius
    if lo_x > hi_x or lo_y > hi_y:
        raise ValueError("spread and margins leave no room to place a group")
    center = np.array([rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)])
    angles = rng.uniform(0.0, 2 * np.pi, size)
    radii = radius * np.sqrt(rng.uniform(0.0, 1.0, size))
    pts = center[None, :] + radii[:, None] * np.column_stack(
        [np.cos(angles), np.sin(angles)])
    return _snap(pts)


def _boxes_from_points(points: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    hw, hh = _snap(cfg.box_half_w), _snap(cfg.box_half_h)
    return np.column_stack([points[:, 0] - hw, points[:, 1] - hh,
                            points[:, 0] + hw, points[:, 1] + hh])


def _feature_maps(rng: np.random.Generator, cfg: SynthConfig,
                  points: np.ndarray) -> FeatureMapSet:
    profiles = rng.uniform(0.5, 1.5, (len(points), cfg.channels))
    levels = []
    for h, w in cfg.map_sizes:
        xs = (np.arange(w) + 0.5) / w
        ys = (np.arange(h) + 0.5) / h
        gx, gy = np.meshgrid(xs, ys)
        grid = np.zeros((cfg.channels, h, w))
        for (px, py), profile in zip(points, profiles):
            blob = cfg.blob_amplitude * np.exp(
                -((gx - px) ** 2 + (gy - py) ** 2) / (2 * cfg.blob_radius ** 2))
            grid += profile[:, None, None] * blob[None, :, :]
        levels.append(FeatureMap(f32(grid)))
    return FeatureMapSet(tuple(levels))


def generate_scene(cfg: SynthConfig, index: int) -> tuple[SceneGroundTruth, FeatureMapSet]:
    """Deterministic scene + multi-scale feature maps for (cfg.seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    n_groups = int(rng.integers(cfg.groups_per_scene[0], cfg.groups_per_scene[1] + 1))

    groups = []
    all_points = []
    for _ in range(n_groups):
        size = int(rng.integers(cfg.group_size[0], cfg.group_size[1] + 1))
        points = _member_points(rng, cfg, size)
        boxes = _boxes_from_points(points, cfg)
        points, boxes = sort_member_points(points, boxes)
        activity = np.zeros(cfg.n_classes, dtype=np.int64)
        activity[int(rng.integers(cfg.n_classes))] = 1
        groups.append(GroundTruthGroup(activity=activity, size=size,
                                       member_points=points, member_boxes=boxes))
        all_points.append(points)
    all_points = np.concatenate(all_points)

    jitter = np.zeros_like(all_points)
    if cfg.jitter_sigma > 0:
        jitter = _snap(rng.normal(0.0, cfg.jitter_sigma, all_points.shape))
    centers = all_points + jitter
    ind_boxes = _boxes_from_points(centers, cfg)

    n_fp = int(rng.binomial(len(all_points), cfg.false_positive_rate)) \
        if cfg.false_positive_rate > 0 else 0
    if n_fp:
        hw, hh = _snap(cfg.box_half_w), _snap(cfg.box_half_h)
        fp_centers = _snap(rng.uniform((hw + 1 / _GRID, hh + 1 / _GRID),
                                       (1 - hw - 1 / _GRID, 1 - hh - 1 / _GRID),
                                       (n_fp, 2)))
        ind_boxes = np.vstack([ind_boxes, _boxes_from_points(fp_centers, cfg)])
    scores = _snap(rng.uniform(cfg.score_range[0], cfg.score_range[1], len(ind_boxes)))

    scene = SceneGroundTruth(
        image_id=f"synth-{cfg.seed:08d}-{index:04d}",
        groups=tuple(groups),
        individual_boxes=ind_boxes,
        individual_scores=scores,
    )
    scene.validate(cfg.n_id)
    return scene, _feature_maps(rng, cfg, all_points)


def generate_corpus(cfg: SynthConfig) -> Iterator[tuple[SceneGroundTruth, FeatureMapSet]]:
    for index in range(cfg.n_scenes):
        yield generate_scene(cfg, index)


# --- size/distance sweep binning ------------------------------------------------

DEFAULT_DISTANCE_EDGES = (0.1, 0.2, 0.3, 0.5)


def max_member_distance(group: GroundTruthGroup) -> float:
    pts = group.member_points
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff ** 2).sum(axis=2)).max())


@dataclass(frozen=True)
class SweepBins:
    """Groups bucketed by (size, max member distance bin)."""

    edges: tuple[float, ...]
    members: dict[tuple[int, int], tuple[tuple[int, int], ...]]

    def count(self, size: int, bin_index: int) -> int:
        return len(self.members.get((size, bin_index), ()))

    def distance_label(self, bin_index: int) -> str:
        lo = 0.0 if bin_index == 0 else self.edges[bin_index - 1]
        if bin_index >= len(self.edges):
            return f"({lo:g}, inf)"
        return f"{'[' if bin_index == 0 else '('}{lo:g}, {self.edges[bin_index]:g}]"


def sweep_bins(scenes: Sequence[SceneGroundTruth],
               distance_edges: Sequence[float] = DEFAULT_DISTANCE_EDGES) -> SweepBins:
    """Bucket every GT group by size and max member distance.

    Distance intervals are half-open on the left, so a distance exactly on an
    edge lands in the lower bin.
    """
    if not scenes:
        raise ValueError("sweep needs at least one scene")
    edges = tuple(float(e) for e in distance_edges)
    if list(edges) != sorted(set(edges)):
        raise ValueError("distance edges must be strictly increasing")
    members: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for si, scene in enumerate(scenes):
        for gi, group in enumerate(scene.groups):
            d = max_member_distance(group)
            bin_idx = int(np.searchsorted(edges, d, side="left"))
            members.setdefault((group.size, bin_idx), []).append((si, gi))
    return SweepBins(edges=edges,
                     members={k: tuple(v) for k, v in members.items()})
